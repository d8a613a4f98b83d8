//! Randomized k-discrimination search.
//!
//! A run starts from a solver counterexample near a random dataset row and
//! then iterates: propose a candidate, evaluate its k, accept or reject it.
//!
//! * Random walk: neighbourhood move, always accepted.
//! * Simulated annealing: neighbourhood move with probability `p_exploit`,
//!   otherwise a random dataset row; Metropolis acceptance on k.
//! * Annealing with nearest neighbours: like annealing, but the exploit move
//!   jumps to one of the `knn_neighbors` dataset rows closest to the current
//!   point (Euclidean over non-protected encodings).
//!
//! When the best k has not improved for `stagnation_limit` iterations the
//! solver is asked for a fresh counterexample near another random row and the
//! temperature is reset.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{Auditee, DiscriminationRecord, KEvaluation};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::milp::{CounterexampleSeeder, SeedConfig, SolveConfig};
use crate::model::Network;
use crate::rng::{streams, SeedStream};
use crate::schema::{FeatureKind, FeatureSchema, FeatureValue, Instance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "rw")]
    RandomWalk,
    #[serde(rename = "sa")]
    SimulatedAnnealing,
    #[serde(rename = "sa-knn")]
    SimulatedAnnealingKnn,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rw" => Ok(Strategy::RandomWalk),
            "sa" => Ok(Strategy::SimulatedAnnealing),
            "sa-knn" => Ok(Strategy::SimulatedAnnealingKnn),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy `{other}` (expected rw, sa or sa-knn)"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::RandomWalk => "rw",
            Strategy::SimulatedAnnealing => "sa",
            Strategy::SimulatedAnnealingKnn => "sa-knn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub epsilon: f64,
    pub timeout_seconds: f64,
    /// Deterministic budget; the run stops at whichever limit comes first.
    pub max_iterations: Option<usize>,
    pub p_exploit: f64,
    pub temperature_initial: f64,
    pub temperature_decay: f64,
    pub temperature_floor: f64,
    pub stagnation_limit: usize,
    pub knn_neighbors: usize,
    pub rng_seed: u64,
    /// Stop as soon as this k is reached.
    pub stop_at_k: Option<usize>,
    /// Query the solver for seeds; when false every restart is a random row.
    pub use_solver: bool,
    pub seed_radius: f64,
    /// Budget of each solver query.
    pub solver: SolveConfig,
    /// Cap on discriminatory records kept in the report (all are counted).
    pub max_records: usize,
    /// Cap on max-k witnesses; once full they are thinned evenly over the run.
    pub max_best_instances: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::SimulatedAnnealing,
            epsilon: crate::DEFAULT_EPSILON,
            timeout_seconds: 14_400.0,
            max_iterations: None,
            p_exploit: 0.9,
            temperature_initial: 1.0,
            temperature_decay: 0.995,
            temperature_floor: 1e-3,
            stagnation_limit: 50,
            knn_neighbors: 5,
            rng_seed: 0,
            stop_at_k: None,
            use_solver: true,
            seed_radius: 0.2,
            solver: SolveConfig {
                timeout_seconds: 10.0,
                node_limit: Some(400),
                ..SolveConfig::default()
            },
            max_records: 100_000,
            max_best_instances: 20,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("epsilon must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.p_exploit) {
            return bad("p_exploit must lie in [0, 1]");
        }
        if !(self.temperature_decay > 0.0 && self.temperature_decay < 1.0) {
            return bad("temperature_decay must lie in (0, 1)");
        }
        if !(self.temperature_initial > 0.0 && self.temperature_floor > 0.0) {
            return bad("temperatures must be positive");
        }
        if self.knn_neighbors == 0 {
            return bad("knn_neighbors must be at least 1");
        }
        if !(self.timeout_seconds >= 0.0) {
            return bad("timeout must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub strategy: Strategy,
    pub iterations: usize,
    /// Every evaluated instance: seeds, restarts and candidates.
    pub generated: usize,
    pub max_k: usize,
    /// Mean k over unique discriminatory instances.
    pub avg_k: f64,
    pub num_id: usize,
    /// Unique discriminatory instances per generated instance, in percent.
    pub success_rate: f64,
    pub num_id_max_k: usize,
    pub first_id_iteration: Option<usize>,
    pub max_k_iteration: Option<usize>,
    /// Wall-clock fields are kept out of serialized reports.
    #[serde(skip)]
    pub t_first_id_seconds: Option<f64>,
    #[serde(skip)]
    pub t_max_k_seconds: Option<f64>,
    #[serde(skip)]
    pub elapsed_seconds: f64,
    pub solver_queries: usize,
    pub solver_seeds: usize,
    /// True when the solver never produced a seed and the run relied on random restarts.
    pub degraded: bool,
    pub best_instances: Vec<DiscriminationRecord>,
    pub discriminatory: Vec<DiscriminationRecord>,
}

/// Metropolis rule on integer fitness.
pub fn accept_metropolis<R: Rng + ?Sized>(k_current: usize, k_candidate: usize, temperature: f64, rng: &mut R) -> bool {
    if k_candidate >= k_current {
        return true;
    }
    let delta = k_candidate as f64 - k_current as f64;
    rng.random::<f64>() < (delta / temperature.max(f64::MIN_POSITIVE)).exp()
}

/// Mutates one uniformly chosen non-protected feature by one step.
pub fn propose_neighbor<R: Rng + ?Sized>(current: &Instance, schema: &FeatureSchema, rng: &mut R) -> Instance {
    let mut next = current.clone();
    let free = schema.unprotected_features();
    if free.is_empty() {
        return next;
    }
    let f = free[rng.random_range(0..free.len())];
    let up = rng.random_bool(0.5);
    next.values[f] = match (&schema.feature(f).kind, current.values[f]) {
        (FeatureKind::Numeric { lower, upper, integral }, v) => {
            let step = if *integral { 1.0 } else { 0.01 * (upper - lower) };
            let moved = if up { v.as_num() + step } else { v.as_num() - step };
            let (lo, hi) = if *integral { (lower.ceil(), upper.floor()) } else { (*lower, *upper) };
            FeatureValue::Num(moved.clamp(lo, hi))
        }
        (FeatureKind::Categorical { values }, v) => {
            let cur = match v {
                FeatureValue::Cat(c) => c,
                FeatureValue::Num(x) => x as usize,
            };
            let mut pick = rng.random_range(0..values.len() - 1);
            if pick >= cur {
                pick += 1;
            }
            FeatureValue::Cat(pick)
        }
    };
    next
}

/// Brute-force Euclidean neighbour index over non-protected encodings.
pub struct KnnIndex {
    points: Vec<Vec<f64>>,
    slots: Vec<usize>,
}

impl KnnIndex {
    pub fn new(schema: &FeatureSchema, rows: &[Instance]) -> Self {
        let slots: Vec<usize> = schema.unprotected_features().iter().flat_map(|&f| schema.slots(f)).collect();
        let points = rows.iter().map(|r| Self::project(schema, &slots, r)).collect();
        Self { points, slots }
    }

    fn project(schema: &FeatureSchema, slots: &[usize], x: &Instance) -> Vec<f64> {
        let mut full = vec![0.0; schema.input_width()];
        schema.encode_into(x, &mut full);
        slots.iter().map(|&s| full[s]).collect()
    }

    /// Indices of the `k` rows nearest to `x`, excluding rows identical to it;
    /// ties go to the lower row index.
    pub fn nearest(&self, schema: &FeatureSchema, x: &Instance, k: usize) -> Vec<usize> {
        let q = Self::project(schema, &self.slots, x);
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .filter(|(dist, _)| *dist > 1e-18)
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(k).map(|(_, i)| i).collect()
    }
}

fn random_row<R: Rng + ?Sized>(schema: &FeatureSchema, dataset: &Dataset, rng: &mut R) -> Result<Instance> {
    if dataset.is_empty() {
        schema.random_instance(rng)
    } else {
        Ok(dataset.instances[rng.random_range(0..dataset.len())].clone())
    }
}

/// Candidate generation for one iteration.
pub fn pick_candidate_source<R: Rng + ?Sized>(
    strategy: Strategy,
    current: &Instance,
    schema: &FeatureSchema,
    dataset: &Dataset,
    knn: Option<&KnnIndex>,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<Instance> {
    match strategy {
        Strategy::RandomWalk => Ok(propose_neighbor(current, schema, rng)),
        Strategy::SimulatedAnnealing => {
            if rng.random_bool(config.p_exploit) {
                Ok(propose_neighbor(current, schema, rng))
            } else {
                random_row(schema, dataset, rng)
            }
        }
        Strategy::SimulatedAnnealingKnn => {
            if rng.random_bool(config.p_exploit) {
                let near = knn.map(|k| k.nearest(schema, current, config.knn_neighbors)).unwrap_or_default();
                if near.is_empty() {
                    return Ok(propose_neighbor(current, schema, rng));
                }
                Ok(dataset.instances[near[rng.random_range(0..near.len())]].clone())
            } else {
                random_row(schema, dataset, rng)
            }
        }
    }
}

fn dedupe_key(schema: &FeatureSchema, x: &Instance) -> u64 {
    let mut v = vec![0.0f64; schema.input_width()];
    schema.encode_into(x, &mut v);
    let mut h = DefaultHasher::new();
    for s in schema.protected_features().iter().flat_map(|&f| schema.slots(f)) {
        v[s] = 0.0;
    }
    for x in v {
        ((x * 1e9).round() as i64).hash(&mut h);
    }
    h.finish()
}

struct Tracker<'a> {
    schema: &'a FeatureSchema,
    config: &'a SearchConfig,
    start: Instant,
    report: SearchReport,
    seen: HashSet<u64>,
    k_sum: usize,
    /// Every `best_stride`-th max-k instance is kept.
    best_stride: usize,
}

impl Tracker<'_> {
    fn record(&mut self, x: &Instance, eval: KEvaluation, iteration: usize) {
        self.report.generated += 1;
        let k = eval.k;
        if k > self.report.max_k {
            self.report.max_k = k;
            self.report.max_k_iteration = Some(iteration);
            self.report.t_max_k_seconds = Some(self.start.elapsed().as_secs_f64());
            self.report.num_id_max_k = 0;
            self.report.best_instances.clear();
            self.best_stride = 1;
        }
        if !eval.is_id() || !self.seen.insert(dedupe_key(self.schema, x)) {
            return;
        }
        if self.report.num_id == 0 {
            self.report.first_id_iteration = Some(iteration);
            self.report.t_first_id_seconds = Some(self.start.elapsed().as_secs_f64());
        }
        self.report.num_id += 1;
        self.k_sum += k;
        let record = eval.into_record(self.schema, x);
        if k == self.report.max_k {
            self.report.num_id_max_k += 1;
            let ordinal = self.report.num_id_max_k - 1;
            let cap = self.config.max_best_instances;
            if cap > 0 && ordinal % self.best_stride == 0 {
                if self.report.best_instances.len() == cap {
                    let mut i = 0;
                    self.report.best_instances.retain(|_| {
                        i += 1;
                        i % 2 == 1
                    });
                    self.best_stride *= 2;
                }
                if ordinal % self.best_stride == 0 {
                    self.report.best_instances.push(record.clone());
                }
            }
        }
        if self.report.discriminatory.len() < self.config.max_records {
            self.report.discriminatory.push(record);
        }
    }
}

fn empty_report(config: &SearchConfig) -> SearchReport {
    SearchReport {
        strategy: config.strategy,
        iterations: 0,
        generated: 0,
        max_k: 0,
        avg_k: 0.0,
        num_id: 0,
        success_rate: 0.0,
        num_id_max_k: 0,
        first_id_iteration: None,
        max_k_iteration: None,
        t_first_id_seconds: None,
        t_max_k_seconds: None,
        elapsed_seconds: 0.0,
        solver_queries: 0,
        solver_seeds: 0,
        degraded: false,
        best_instances: Vec::new(),
        discriminatory: Vec::new(),
    }
}

/// Runs one search against a bare network.
pub fn run_search(network: &Network<f64>, schema: &FeatureSchema, dataset: &Dataset, config: &SearchConfig) -> Result<SearchReport> {
    run_search_with(network, Some(network), schema, dataset, config)
}

/// Runs one search against any auditee; `seed_network` (if any) answers solver queries.
pub fn run_search_with<A: Auditee + ?Sized>(
    auditee: &A,
    seed_network: Option<&Network<f64>>,
    schema: &FeatureSchema,
    dataset: &Dataset,
    config: &SearchConfig,
) -> Result<SearchReport> {
    config.validate()?;
    let start = Instant::now();
    let mut rng = SeedStream::new(config.rng_seed).rng(streams::SEARCH);
    let seeder = match (config.use_solver, seed_network) {
        (true, Some(net)) => Some(CounterexampleSeeder::new(
            net,
            schema,
            config.epsilon,
            SeedConfig {
                solve: SolveConfig {
                    workers: 1,
                    ..config.solver.clone()
                },
                radius: config.seed_radius,
            },
        )?),
        _ => None,
    };
    let knn = (config.strategy == Strategy::SimulatedAnnealingKnn && !dataset.is_empty())
        .then(|| KnnIndex::new(schema, &dataset.instances));
    let mut t = Tracker {
        schema,
        config,
        start,
        report: empty_report(config),
        seen: HashSet::new(),
        k_sum: 0,
        best_stride: 1,
    };

    let evaluate = |x: &Instance| auditee.evaluate(schema, x, config.epsilon);
    let restart = |t: &mut Tracker, rng: &mut crate::rng::Rng| -> Result<Instance> {
        let row = random_row(schema, dataset, rng)?;
        if let Some(s) = &seeder {
            t.report.solver_queries += 1;
            if let (Some(x), _) = s.seed(Some(&row))? {
                t.report.solver_seeds += 1;
                return Ok(x);
            }
        }
        Ok(row)
    };

    let mut current = restart(&mut t, &mut rng)?;
    let mut k_current = match evaluate(&current) {
        Ok(e) => {
            let k = e.k;
            t.record(&current, e, 0);
            k
        }
        Err(_) => 0,
    };
    let mut temperature = config.temperature_initial;
    let mut stagnation = 0usize;
    let done = |t: &Tracker| {
        config.stop_at_k.is_some_and(|k| t.report.max_k >= k)
            || config.max_iterations.is_some_and(|m| t.report.iterations >= m)
            || t.start.elapsed().as_secs_f64() >= config.timeout_seconds
    };

    while !done(&t) {
        t.report.iterations += 1;
        let iteration = t.report.iterations;
        let best_before = t.report.max_k;
        let candidate = pick_candidate_source(config.strategy, &current, schema, dataset, knn.as_ref(), config, &mut rng)?;
        // candidates with no consistent protected combination are skipped
        if let Ok(eval) = evaluate(&candidate) {
            let k = eval.k;
            t.record(&candidate, eval, iteration);
            let accept = match config.strategy {
                Strategy::RandomWalk => true,
                _ => accept_metropolis(k_current, k, temperature, &mut rng),
            };
            if accept {
                current = candidate;
                k_current = k;
            }
        }
        temperature = (temperature * config.temperature_decay).max(config.temperature_floor);
        if t.report.max_k > best_before {
            stagnation = 0;
        } else {
            stagnation += 1;
        }
        if stagnation >= config.stagnation_limit && !done(&t) {
            stagnation = 0;
            temperature = config.temperature_initial;
            current = restart(&mut t, &mut rng)?;
            k_current = match evaluate(&current) {
                Ok(e) => {
                    let k = e.k;
                    t.record(&current, e, iteration);
                    k
                }
                Err(_) => 0,
            };
        }
    }

    let mut report = t.report;
    report.avg_k = if report.num_id > 0 {
        t.k_sum as f64 / report.num_id as f64
    } else {
        0.0
    };
    report.success_rate = if report.generated > 0 {
        100.0 * report.num_id as f64 / report.generated as f64
    } else {
        0.0
    };
    report.degraded = report.solver_seeds == 0;
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
