//! Decision-tree explanations of high-k regions.
//!
//! Samples are drawn around max-k witnesses, labelled HighK/LowK by a k
//! percentile, and fitted with a CART tree over the raw non-protected
//! features. Each HighK root-to-leaf path becomes a candidate predicate that
//! is kept only when k inside it exceeds k outside it by at least `delta`.

mod tree;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use tree::{build_decision_tree, Column, DecisionTree, KClass, Node, Test, TreeParams};

use crate::cluster::Auditee;
use crate::error::{Error, Result};
use crate::rng::{streams, SeedStream};
use crate::schema::{format_number, FeatureKind, FeatureSchema, FeatureValue, Instance};

const MAX_NEGATION_DRAWS: usize = 100_000;
const MAX_PERTURB_RETRIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub n_samples: usize,
    pub high_k_percentile: f64,
    pub delta: f64,
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    pub perturb_sigma_fraction: f64,
    pub categorical_flip_prob: f64,
    pub cex_samples: usize,
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            n_samples: 5_000,
            high_k_percentile: 0.95,
            delta: 2.0,
            tree_max_depth: 6,
            tree_min_leaf: 20,
            perturb_sigma_fraction: 0.10,
            categorical_flip_prob: 0.10,
            cex_samples: 500,
            epsilon: crate::DEFAULT_EPSILON,
            rng_seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_samples < 100 {
            return bad("n_samples must be at least 100");
        }
        if !(self.high_k_percentile > 0.0 && self.high_k_percentile < 1.0) {
            return bad("high_k_percentile must lie in (0, 1)");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.tree_max_depth == 0 || self.tree_min_leaf == 0 || self.cex_samples == 0 {
            return bad("tree_max_depth, tree_min_leaf and cex_samples must be positive");
        }
        if !(self.perturb_sigma_fraction >= 0.0) || !(0.0..=1.0).contains(&self.categorical_flip_prob) {
            return bad("perturbation parameters out of range");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("epsilon must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.tree_max_depth,
            min_leaf: self.tree_min_leaf,
        }
    }
}

/// One merged condition on a non-protected feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Atom {
    /// `lower < x <= upper`; a missing side is unbounded.
    Numeric {
        feature: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<f64>,
    },
    Categorical { feature: String, allowed: Vec<String> },
}

impl Atom {
    pub fn feature(&self) -> &str {
        match self {
            Atom::Numeric { feature, .. } | Atom::Categorical { feature, .. } => feature,
        }
    }

    fn holds(&self, index: usize, instance: &Instance, schema: &FeatureSchema) -> bool {
        match (self, instance.values[index]) {
            (Atom::Numeric { lower, upper, .. }, FeatureValue::Num(v)) => {
                lower.is_none_or(|l| v > l) && upper.is_none_or(|u| v <= u)
            }
            (Atom::Categorical { allowed, .. }, FeatureValue::Cat(c)) => {
                let labels = schema.feature(index).labels().unwrap_or_default();
                labels.get(c).is_some_and(|l| allowed.contains(l))
            }
            _ => false,
        }
    }

    pub fn text(&self) -> String {
        match self {
            Atom::Numeric { feature, lower, upper } => match (lower, upper) {
                (Some(l), Some(u)) => format!("{feature} > {} AND {feature} <= {}", format_number(*l), format_number(*u)),
                (Some(l), None) => format!("{feature} > {}", format_number(*l)),
                (None, Some(u)) => format!("{feature} <= {}", format_number(*u)),
                (None, None) => format!("{feature} ANY"),
            },
            Atom::Categorical { feature, allowed } => format!("{feature} IN {{{}}}", allowed.join(", ")),
        }
    }
}

/// Conjunction of atoms with validation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationPredicate {
    pub text: String,
    pub atoms: Vec<Atom>,
    pub size: usize,
    #[serde(default)]
    pub coverage_volume: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_count: Option<f64>,
    #[serde(default)]
    pub leaf_samples: usize,
    #[serde(default)]
    pub mean_k_inside: f64,
    #[serde(default)]
    pub mean_k_outside: f64,
    #[serde(default)]
    pub mean_k_diff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness_diff: Option<f64>,
}

impl ExplanationPredicate {
    /// Atoms are stored in schema feature order.
    pub fn new(schema: &FeatureSchema, mut atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            let Some(f) = schema.feature_index(a.feature()) else {
                return Err(Error::InvalidArgument(format!("predicate names unknown feature `{}`", a.feature())));
            };
            if schema.feature(f).protected {
                return Err(Error::InvalidArgument(format!("predicate names protected feature `{}`", a.feature())));
            }
            match (a, &schema.feature(f).kind) {
                (Atom::Numeric { .. }, FeatureKind::Numeric { .. }) => {}
                (Atom::Categorical { allowed, .. }, FeatureKind::Categorical { values }) => {
                    if let Some(bad) = allowed.iter().find(|l| !values.contains(l)) {
                        return Err(Error::InvalidArgument(format!("unknown label `{bad}` for `{}`", a.feature())));
                    }
                }
                _ => return Err(Error::InvalidArgument(format!("atom kind does not match feature `{}`", a.feature()))),
            }
        }
        atoms.sort_by_key(|a| schema.feature_index(a.feature()));
        let text = if atoms.is_empty() {
            "TRUE".to_string()
        } else {
            atoms.iter().map(Atom::text).collect::<Vec<_>>().join(" AND ")
        };
        Ok(Self {
            text,
            size: atoms.len(),
            atoms,
            coverage_volume: 0.0,
            coverage_count: None,
            leaf_samples: 0,
            mean_k_inside: 0.0,
            mean_k_outside: 0.0,
            mean_k_diff: 0.0,
            witness_k: None,
            perturbed_k: None,
            robustness_diff: None,
        })
    }

    pub fn holds(&self, schema: &FeatureSchema, instance: &Instance) -> bool {
        self.atoms.iter().all(|a| match schema.feature_index(a.feature()) {
            Some(f) => a.holds(f, instance, schema),
            None => false,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedPath {
    pub text: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub n_samples: usize,
    pub kappa: f64,
    pub high_k_samples: usize,
    pub tree_depth: usize,
    pub tree_leaves: usize,
    pub predicates: Vec<ExplanationPredicate>,
    pub rejected: Vec<RejectedPath>,
}

fn numeric_jitter<R: Rng + ?Sized>(value: f64, lo: f64, hi: f64, integral: bool, sigma: f64, rng: &mut R) -> f64 {
    let mut v = if sigma > 0.0 {
        value + Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        value
    };
    if integral {
        v = v.round().clamp(lo.ceil(), hi.floor());
    }
    v.clamp(lo, hi)
}

fn perturb_one<R: Rng + ?Sized>(seed: &Instance, schema: &FeatureSchema, config: &ExplainConfig, rng: &mut R) -> Instance {
    let mut out = seed.clone();
    for &f in schema.unprotected_features() {
        match &schema.feature(f).kind {
            FeatureKind::Numeric { lower, upper, integral } => {
                let sigma = config.perturb_sigma_fraction * (upper - lower);
                out.values[f] = FeatureValue::Num(numeric_jitter(seed.values[f].as_num(), *lower, *upper, *integral, sigma, rng));
            }
            FeatureKind::Categorical { values } => {
                if config.categorical_flip_prob > 0.0 && rng.random_bool(config.categorical_flip_prob) {
                    out.values[f] = FeatureValue::Cat(rng.random_range(0..values.len()));
                }
            }
        }
    }
    out
}

/// `n_samples` neighbours of uniformly chosen seeds. Protected values are
/// copied from the seed; they are re-enumerated when k is evaluated.
pub fn local_perturbation<R: Rng + ?Sized>(
    seeds: &[Instance],
    schema: &FeatureSchema,
    config: &ExplainConfig,
    rng: &mut R,
) -> Result<Vec<Instance>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seed instances to perturb".into()));
    }
    for s in seeds {
        schema.validate(s)?;
    }
    let mut out = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let seed = &seeds[rng.random_range(0..seeds.len())];
        let mut sample = seed.clone();
        for _ in 0..MAX_PERTURB_RETRIES {
            let candidate = perturb_one(seed, schema, config, rng);
            if !schema.valid_combos(&candidate).is_empty() {
                sample = candidate;
                break;
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Nearest-rank percentile κ and HighK/LowK labels. HighK is `k > κ` when
/// that class is nonempty, otherwise `k >= κ`.
pub fn label_high_low(k_values: &[usize], percentile: f64) -> Result<(Vec<KClass>, f64)> {
    if k_values.is_empty() {
        return Err(Error::InvalidArgument("no k values to label".into()));
    }
    let mut sorted = k_values.to_vec();
    sorted.sort_unstable();
    let rank = ((percentile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let kappa = sorted[rank - 1];
    let strict = k_values.iter().any(|&k| k > kappa);
    let labels: Vec<KClass> = k_values
        .iter()
        .map(|&k| {
            let high = if strict { k > kappa } else { k >= kappa };
            if high { KClass::HighK } else { KClass::LowK }
        })
        .collect();
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Degenerate(format!("all {} samples have k = {}; nothing to separate", k_values.len(), sorted[0])));
    }
    Ok((labels, kappa as f64))
}

/// Training matrix over non-protected features (raw numbers, label indices).
pub fn feature_rows(schema: &FeatureSchema, samples: &[Instance]) -> (Vec<Vec<f64>>, Vec<Column>) {
    let columns = schema
        .unprotected_features()
        .iter()
        .map(|&f| match schema.feature(f).labels() {
            Some(l) => Column::Categorical(l.len()),
            None => Column::Numeric,
        })
        .collect();
    let rows = samples
        .iter()
        .map(|s| schema.unprotected_features().iter().map(|&f| s.values[f].as_num()).collect())
        .collect();
    (rows, columns)
}

enum Constraint {
    Numeric { lower: Option<f64>, upper: Option<f64> },
    Labels(Vec<bool>),
}

/// Root-to-leaf predicates in left-first order, with merged atoms.
/// Contradictory paths are returned as `Err` with a diagnostic.
pub fn extract_paths(tree: &DecisionTree, schema: &FeatureSchema) -> Vec<(KClass, std::result::Result<ExplanationPredicate, String>)> {
    let features = schema.unprotected_features();
    let mut state: Vec<Option<Constraint>> = (0..features.len()).map(|_| None).collect();
    let mut out = Vec::new();
    walk(&tree.root, schema, features, &mut state, &mut out);
    out
}

fn walk(
    node: &Node,
    schema: &FeatureSchema,
    features: &[usize],
    state: &mut Vec<Option<Constraint>>,
    out: &mut Vec<(KClass, std::result::Result<ExplanationPredicate, String>)>,
) {
    match node {
        Node::Leaf { class, .. } => out.push((*class, path_predicate(schema, features, state))),
        Node::Split { column, test, left, right } => {
            for (branch, child) in [(true, left), (false, right)] {
                let saved = state[*column].take();
                let width = schema.feature(features[*column]).width();
                state[*column] = Some(refine(saved.as_ref(), *test, branch, width));
                walk(child, schema, features, state, out);
                state[*column] = saved;
            }
        }
    }
}

fn refine(prev: Option<&Constraint>, test: Test, left: bool, width: usize) -> Constraint {
    match test {
        Test::Le(t) => {
            let (mut lower, mut upper) = match prev {
                Some(Constraint::Numeric { lower, upper }) => (*lower, *upper),
                _ => (None, None),
            };
            if left {
                upper = Some(upper.map_or(t, |u: f64| u.min(t)));
            } else {
                lower = Some(lower.map_or(t, |l: f64| l.max(t)));
            }
            Constraint::Numeric { lower, upper }
        }
        Test::Is(label) => {
            let mut allowed = match prev {
                Some(Constraint::Labels(a)) => a.clone(),
                _ => vec![true; width],
            };
            for (i, a) in allowed.iter_mut().enumerate() {
                if (i == label) != left {
                    *a = false;
                }
            }
            Constraint::Labels(allowed)
        }
    }
}

fn path_predicate(schema: &FeatureSchema, features: &[usize], state: &[Option<Constraint>]) -> std::result::Result<ExplanationPredicate, String> {
    let mut atoms = Vec::new();
    for (c, constraint) in state.iter().enumerate() {
        let spec = schema.feature(features[c]);
        match constraint {
            None => {}
            Some(Constraint::Numeric { lower, upper }) => {
                let (lo, hi, integral) = spec.numeric_range().expect("numeric column");
                let empty = match (lower, upper) {
                    (Some(l), Some(u)) if l >= u => true,
                    _ if integral => integer_count(lo, hi, *lower, *upper) == 0.0,
                    _ => false,
                };
                if empty {
                    return Err(format!("contradictory bounds on `{}`", spec.name));
                }
                atoms.push(Atom::Numeric {
                    feature: spec.name.clone(),
                    lower: *lower,
                    upper: *upper,
                });
            }
            Some(Constraint::Labels(allowed)) => {
                let labels = spec.labels().expect("categorical column");
                let kept: Vec<String> = labels.iter().zip(allowed).filter(|(_, &a)| a).map(|(l, _)| l.clone()).collect();
                if kept.is_empty() {
                    return Err(format!("no label of `{}` satisfies the path", spec.name));
                }
                if kept.len() < labels.len() {
                    atoms.push(Atom::Categorical {
                        feature: spec.name.clone(),
                        allowed: kept,
                    });
                }
            }
        }
    }
    ExplanationPredicate::new(schema, atoms).map_err(|e| e.to_string())
}

/// Integers in `(lower, upper] ∩ [lo, hi]`.
fn integer_count(lo: f64, hi: f64, lower: Option<f64>, upper: Option<f64>) -> f64 {
    let first = lower.map_or(lo.ceil(), |l| (l.floor() + 1.0).max(lo.ceil()));
    let last = upper.map_or(hi.floor(), |u| u.floor().min(hi.floor()));
    (last - first + 1.0).max(0.0)
}

/// Normalized volume of the predicate region, and the raw point count when
/// every non-protected feature is discrete. Integral numeric features are
/// measured by point count, continuous ones by width.
pub fn coverage_volume(predicate: &ExplanationPredicate, schema: &FeatureSchema) -> (f64, Option<f64>) {
    let mut volume = 1.0;
    let mut count = Some(1.0);
    for &f in schema.unprotected_features() {
        let spec = schema.feature(f);
        let atom = predicate.atoms.iter().find(|a| a.feature() == spec.name);
        match &spec.kind {
            FeatureKind::Numeric { lower: lo, upper: hi, integral } => {
                let (l, u) = match atom {
                    Some(Atom::Numeric { lower, upper, .. }) => (*lower, *upper),
                    _ => (None, None),
                };
                if *integral {
                    let inside = integer_count(*lo, *hi, l, u);
                    let total = integer_count(*lo, *hi, None, None);
                    volume *= inside / total;
                    count = count.map(|c| c * inside);
                } else {
                    let a = l.map_or(*lo, |l| l.max(*lo));
                    let b = u.map_or(*hi, |u| u.min(*hi));
                    volume *= if hi > lo { ((b - a) / (hi - lo)).max(0.0) } else { 1.0 };
                    count = None;
                }
            }
            FeatureKind::Categorical { values } => {
                let inside = match atom {
                    Some(Atom::Categorical { allowed, .. }) => allowed.len(),
                    _ => values.len(),
                } as f64;
                volume *= inside / values.len() as f64;
                count = count.map(|c| c * inside);
            }
        }
    }
    (volume, count)
}

fn outside_value(schema: &FeatureSchema, f: usize, atom: &Atom, current: FeatureValue) -> Option<FeatureValue> {
    let spec = schema.feature(f);
    match (atom, &spec.kind) {
        (Atom::Numeric { lower, upper, .. }, FeatureKind::Numeric { lower: lo, upper: hi, integral }) => {
            let step = 0.01 * (hi - lo);
            let below = lower.map(|l| if *integral { l.floor() } else { l - step }).filter(|&v| v >= *lo);
            let above = upper.map(|u| if *integral { u.floor() + 1.0 } else { u + step }).filter(|&v| v <= *hi);
            let x = current.as_num();
            let pick = match (below, above) {
                (Some(b), Some(a)) => {
                    if (x - lower.unwrap()).abs() <= (upper.unwrap() - x).abs() {
                        b
                    } else {
                        a
                    }
                }
                (Some(b), None) => b,
                (None, Some(a)) => a,
                (None, None) => return None,
            };
            Some(FeatureValue::Num(pick))
        }
        (Atom::Categorical { allowed, .. }, FeatureKind::Categorical { values }) => {
            values.iter().position(|l| !allowed.contains(l)).map(FeatureValue::Cat)
        }
        _ => None,
    }
}

/// Moves the witness just outside each atom in turn (nearer side for
/// two-sided intervals, first disallowed label for categorical atoms) and
/// returns (Pert.K, Diff = k(witness) - Pert.K). `None` when no atom has an
/// outside value.
pub fn robustness_diff<A: Auditee + ?Sized>(
    auditee: &A,
    schema: &FeatureSchema,
    predicate: &ExplanationPredicate,
    witness: &Instance,
    epsilon: f64,
) -> Result<Option<(f64, f64)>> {
    let base = auditee.evaluate(schema, witness, epsilon)?.k as f64;
    let mut ks = Vec::new();
    for atom in &predicate.atoms {
        let f = schema
            .feature_index(atom.feature())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature `{}`", atom.feature())))?;
        let Some(v) = outside_value(schema, f, atom, witness.values[f]) else {
            continue;
        };
        let mut moved = witness.clone();
        moved.values[f] = v;
        if schema.valid_combos(&moved).is_empty() {
            continue;
        }
        ks.push(auditee.evaluate(schema, &moved, epsilon)?.k as f64);
    }
    if ks.is_empty() {
        return Ok(None);
    }
    let pert = ks.iter().sum::<f64>() / ks.len() as f64;
    Ok(Some((pert, base - pert)))
}

/// k of every sample, in order.
pub fn evaluate_k<A: Auditee + ?Sized>(auditee: &A, schema: &FeatureSchema, samples: &[Instance], epsilon: f64) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| auditee.evaluate(schema, s, epsilon).map(|e| e.k))
        .collect()
}

/// Mean k outside the predicate over `cex_samples` uniform draws from its
/// negation. `Err` carries the rejection diagnostic.
pub fn negation_mean_k<A: Auditee + ?Sized, R: Rng + ?Sized>(
    auditee: &A,
    schema: &FeatureSchema,
    predicate: &ExplanationPredicate,
    cex_samples: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<std::result::Result<f64, String>> {
    let mut outside = Vec::with_capacity(cex_samples);
    let mut draws = 0;
    while outside.len() < cex_samples {
        if draws >= MAX_NEGATION_DRAWS {
            return Ok(Err(format!(
                "only {} of {cex_samples} negation samples after {MAX_NEGATION_DRAWS} draws",
                outside.len()
            )));
        }
        draws += 1;
        let x = schema.random_instance(rng)?;
        if !predicate.holds(schema, &x) {
            outside.push(x);
        }
    }
    let ks = evaluate_k(auditee, schema, &outside, epsilon)?;
    Ok(Ok(ks.iter().sum::<usize>() as f64 / ks.len() as f64))
}

/// Inside/outside mean-k test. `inside_k` are the k values of the samples
/// that reached the predicate's leaf.
pub fn validate_path<A: Auditee + ?Sized, R: Rng + ?Sized>(
    auditee: &A,
    schema: &FeatureSchema,
    mut predicate: ExplanationPredicate,
    inside_k: &[usize],
    config: &ExplainConfig,
    rng: &mut R,
) -> Result<std::result::Result<ExplanationPredicate, RejectedPath>> {
    let reject = |p: &ExplanationPredicate, reason: String| {
        Ok(Err(RejectedPath {
            text: p.text.clone(),
            reason,
        }))
    };
    if inside_k.is_empty() {
        return reject(&predicate, "no samples inside the predicate".into());
    }
    let outside = match negation_mean_k(auditee, schema, &predicate, config.cex_samples, config.epsilon, rng)? {
        Ok(m) => m,
        Err(reason) => return reject(&predicate, reason),
    };
    let inside = inside_k.iter().sum::<usize>() as f64 / inside_k.len() as f64;
    predicate.leaf_samples = inside_k.len();
    predicate.mean_k_inside = inside;
    predicate.mean_k_outside = outside;
    predicate.mean_k_diff = inside - outside;
    if inside - outside < config.delta {
        return reject(
            &predicate,
            format!("mean k difference {:.3} below delta {}", inside - outside, config.delta),
        );
    }
    let (volume, count) = coverage_volume(&predicate, schema);
    predicate.coverage_volume = volume;
    predicate.coverage_count = count;
    Ok(Ok(predicate))
}

/// Full pipeline: perturb around `witnesses`, label, fit, extract HighK
/// paths, validate and score them.
pub fn explain<A: Auditee + ?Sized>(
    auditee: &A,
    schema: &FeatureSchema,
    witnesses: &[Instance],
    config: &ExplainConfig,
) -> Result<ExplanationReport> {
    config.validate()?;
    let seeds = SeedStream::new(config.rng_seed);
    let samples = local_perturbation(witnesses, schema, config, &mut seeds.rng(streams::EXPLAIN_PERTURB))?;
    let ks = evaluate_k(auditee, schema, &samples, config.epsilon)?;
    let (labels, kappa) = label_high_low(&ks, config.high_k_percentile)?;
    let (rows, columns) = feature_rows(schema, &samples);
    let tree = build_decision_tree(&rows, &labels, &columns, config.tree_params());

    let mut validate_rng = seeds.rng(streams::EXPLAIN_VALIDATE);
    let mut predicates = Vec::new();
    let mut rejected = Vec::new();
    for (class, path) in extract_paths(&tree, schema) {
        if class != KClass::HighK {
            continue;
        }
        let predicate = match path {
            Ok(p) => p,
            Err(reason) => {
                log::debug!("dropping path: {reason}");
                rejected.push(RejectedPath {
                    text: String::new(),
                    reason,
                });
                continue;
            }
        };
        let inside: Vec<usize> = samples
            .iter()
            .zip(&ks)
            .filter(|(s, _)| predicate.holds(schema, s))
            .map(|(_, &k)| k)
            .collect();
        match validate_path(auditee, schema, predicate, &inside, config, &mut validate_rng)? {
            Ok(mut p) => {
                let witness = best_witness(auditee, schema, &p, witnesses, &samples, &ks, config.epsilon)?;
                if let Some((w, wk)) = witness {
                    p.witness_k = Some(wk);
                    if let Some((pert, diff)) = robustness_diff(auditee, schema, &p, &w, config.epsilon)? {
                        p.perturbed_k = Some(pert);
                        p.robustness_diff = Some(diff);
                    }
                }
                predicates.push(p);
            }
            Err(r) => rejected.push(r),
        }
    }
    Ok(ExplanationReport {
        n_samples: samples.len(),
        kappa,
        high_k_samples: labels.iter().filter(|&&l| l == KClass::HighK).count(),
        tree_depth: tree.depth(),
        tree_leaves: tree.leaf_count(),
        predicates,
        rejected,
    })
}

/// Highest-k seed witness inside the predicate, else the highest-k sample.
fn best_witness<A: Auditee + ?Sized>(
    auditee: &A,
    schema: &FeatureSchema,
    predicate: &ExplanationPredicate,
    witnesses: &[Instance],
    samples: &[Instance],
    ks: &[usize],
    epsilon: f64,
) -> Result<Option<(Instance, usize)>> {
    let mut best: Option<(Instance, usize)> = None;
    for w in witnesses.iter().filter(|w| predicate.holds(schema, w)) {
        let k = auditee.evaluate(schema, w, epsilon)?.k;
        if best.as_ref().is_none_or(|(_, bk)| k > *bk) {
            best = Some((w.clone(), k));
        }
    }
    if best.is_none() {
        for (s, &k) in samples.iter().zip(ks) {
            if predicate.holds(schema, s) && best.as_ref().is_none_or(|(_, bk)| k > *bk) {
                best = Some((s.clone(), k));
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_planted_network, PlantInterval, PlantSpec};
    use crate::model::{Activation, DenseLayer, Network};
    use crate::schema::FeatureSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec::numeric("x", 0.0, 1.0, false),
                FeatureSpec::numeric("n", 0.0, 100.0, true),
                FeatureSpec::categorical("w", &["A", "B", "C", "D"]),
                FeatureSpec::categorical("g", &["p", "q", "r"]).protected(),
            ],
            vec![],
        )
        .unwrap()
    }

    fn num(feature: &str, lower: Option<f64>, upper: Option<f64>) -> Atom {
        Atom::Numeric {
            feature: feature.into(),
            lower,
            upper,
        }
    }

    #[test]
    fn percentile_labels() {
        let ks: Vec<usize> = (1..=100).collect();
        let (labels, kappa) = label_high_low(&ks, 0.95).unwrap();
        assert_eq!(kappa, 95.0);
        assert_eq!(labels.iter().filter(|&&l| l == KClass::HighK).count(), 5);
        assert!(matches!(label_high_low(&[3; 50], 0.95), Err(Error::Degenerate(_))));
        // ties at the top fall back to k >= kappa
        let mut ks = vec![1; 90];
        ks.extend([4; 10]);
        let (labels, kappa) = label_high_low(&ks, 0.95).unwrap();
        assert_eq!(kappa, 4.0);
        assert_eq!(labels.iter().filter(|&&l| l == KClass::HighK).count(), 10);
    }

    #[test]
    fn zero_perturbation_copies_seeds() {
        let s = schema();
        let seed = s.from_raw(&serde_json::from_str(r#"{"x":0.3,"n":40,"w":"B","g":"q"}"#).unwrap()).unwrap();
        let cfg = ExplainConfig {
            perturb_sigma_fraction: 0.0,
            categorical_flip_prob: 0.0,
            n_samples: 100,
            ..Default::default()
        };
        let out = local_perturbation(std::slice::from_ref(&seed), &s, &cfg, &mut SeedStream::new(1).rng(2)).unwrap();
        assert!(out.iter().all(|x| *x == seed));
        assert!(local_perturbation(&[], &s, &cfg, &mut SeedStream::new(1).rng(2)).is_err());
    }

    #[test]
    fn jitter_sigma_and_domain() {
        let s = schema();
        let seed = s.from_raw(&serde_json::from_str(r#"{"x":0.5,"n":50,"w":"B","g":"q"}"#).unwrap()).unwrap();
        let cfg = ExplainConfig {
            n_samples: 20_000,
            perturb_sigma_fraction: 0.05,
            ..Default::default()
        };
        let out = local_perturbation(std::slice::from_ref(&seed), &s, &cfg, &mut SeedStream::new(3).rng(2)).unwrap();
        let xs: Vec<f64> = out.iter().map(|i| i.values[0].as_num()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((sd - 0.05).abs() < 0.05 * 0.05, "sd {sd}");
        for i in &out {
            s.validate(i).unwrap();
            assert_eq!(i.values[3], seed.values[3]);
            assert_eq!(i.values[1].as_num().fract(), 0.0);
        }
    }

    #[test]
    fn merged_paths_and_partition() {
        let s = schema();
        // x <= 0.8 then x <= 0.6 on the left spine
        let leaf = |class| {
            Box::new(Node::Leaf {
                class,
                high: 0,
                low: 0,
            })
        };
        let tree = DecisionTree {
            root: Node::Split {
                column: 0,
                test: Test::Le(0.8),
                left: Box::new(Node::Split {
                    column: 0,
                    test: Test::Le(0.6),
                    left: leaf(KClass::HighK),
                    right: Box::new(Node::Split {
                        column: 2,
                        test: Test::Is(1),
                        left: leaf(KClass::LowK),
                        right: leaf(KClass::HighK),
                    }),
                }),
                right: leaf(KClass::LowK),
            },
        };
        let paths = extract_paths(&tree, &s);
        assert_eq!(paths.len(), tree.leaf_count());
        let p0 = paths[0].1.as_ref().unwrap();
        assert_eq!(p0.size, 1);
        assert_eq!(p0.text, "x <= 0.6");
        let p2 = paths[2].1.as_ref().unwrap();
        assert_eq!(p2.text, "x > 0.6 AND x <= 0.8 AND w IN {A, C, D}");
        assert_eq!(p2.size, 2);

        let mut rng = SeedStream::new(9).rng(1);
        for _ in 0..500 {
            let x = s.random_instance(&mut rng).unwrap();
            let n = paths.iter().filter(|(_, p)| p.as_ref().unwrap().holds(&s, &x)).count();
            assert_eq!(n, 1);
        }
    }

    #[test]
    fn contradictory_integral_path_dropped() {
        let s = schema();
        let leaf = || {
            Box::new(Node::Leaf {
                class: KClass::HighK,
                high: 0,
                low: 0,
            })
        };
        let tree = DecisionTree {
            root: Node::Split {
                column: 1,
                test: Test::Le(40.5),
                left: leaf(),
                right: Box::new(Node::Split {
                    column: 1,
                    test: Test::Le(40.7),
                    left: leaf(),
                    right: leaf(),
                }),
            },
        };
        let paths = extract_paths(&tree, &s);
        assert!(paths[1].1.is_err());
        assert!(paths[0].1.is_ok() && paths[2].1.is_ok());
    }

    #[test]
    fn coverage_product_rule() {
        let s = schema();
        let empty = ExplanationPredicate::new(&s, vec![]).unwrap();
        assert_eq!(coverage_volume(&empty, &s).0, 1.0);
        let half = ExplanationPredicate::new(&s, vec![num("x", None, Some(0.5))]).unwrap();
        assert!((coverage_volume(&half, &s).0 - 0.5).abs() < 1e-12);
        let quarter = ExplanationPredicate::new(
            &s,
            vec![
                num("x", None, Some(0.5)),
                Atom::Categorical {
                    feature: "w".into(),
                    allowed: vec!["A".into(), "D".into()],
                },
            ],
        )
        .unwrap();
        assert!((coverage_volume(&quarter, &s).0 - 0.25).abs() < 1e-12);
        assert!(coverage_volume(&quarter, &s).1.is_none());
        let ints = ExplanationPredicate::new(&s, vec![num("n", Some(29.5), Some(70.5))]).unwrap();
        assert!((coverage_volume(&ints, &s).0 - 41.0 / 101.0).abs() < 1e-12);
        assert!(ExplanationPredicate::new(&s, vec![num("g", None, None)]).is_err());
    }

    #[test]
    fn full_space_predicate_rejected() {
        let s = schema();
        let out = DenseLayer::new(vec![vec![0.0; s.input_width()]], vec![0.0], Activation::Identity).unwrap();
        let net = Network::new(s.input_width(), vec![out], None).unwrap();
        let p = ExplanationPredicate::new(&s, vec![]).unwrap();
        let cfg = ExplainConfig::default();
        let r = validate_path(&net, &s, p, &[5], &cfg, &mut SeedStream::new(0).rng(3)).unwrap();
        assert!(r.is_err());
        // constant network: single class
        let w = s.random_instance(&mut SeedStream::new(0).rng(1)).unwrap();
        assert!(matches!(explain(&net, &s, &[w], &cfg), Err(Error::Degenerate(_))));
    }

    #[test]
    fn planted_region_recovered() {
        let s = schema();
        let spec = PlantSpec::graded(
            vec![PlantInterval {
                feature: "x".into(),
                lower: 0.3,
                upper: 0.7,
            }],
            3,
            3,
            0.05,
            0.001,
        );
        let net = make_planted_network(&s, &spec, 0).unwrap();
        let mut rng = SeedStream::new(4).rng(1);
        let witnesses: Vec<Instance> = (0..2000)
            .map(|_| s.random_instance(&mut rng).unwrap())
            .filter(|x| spec.contains(&s, x) && net.evaluate(&s, x, 0.05).unwrap().k == 3)
            .take(20)
            .collect();
        let report = explain(&net, &s, &witnesses, &ExplainConfig::default()).unwrap();
        assert_eq!(report.predicates.len(), 1, "{report:?}");
        let p = &report.predicates[0];
        assert!(p.atoms.iter().all(|a| a.feature() == "x"));
        assert!((p.coverage_volume - 0.4).abs() < 0.04, "{}", p.coverage_volume);
        assert!(p.mean_k_diff >= 1.5);
        assert_eq!(p.witness_k, Some(3));
        assert_eq!(p.robustness_diff, Some(2.0));
    }
}
