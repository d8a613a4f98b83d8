//! Verdicts and counterexample seeds from the pair encoding.
//!
//! A network is certified fair when the proven optimum of the logit-gap
//! MILP stays at or below `4ε`. An unfair verdict is only issued for a pair
//! whose normalized scores, recomputed by plain forward passes, differ by
//! more than `ε`. Anything else is `Unknown`.

use serde::{Deserialize, Serialize};

use super::branch::{solve_with, SolveConfig, SolveHooks, SolveStats, SolveStatus};
use super::encode::{encode_pair_fairness, logit_threshold, PairDecoding, PairEncoding};
use crate::bounds::{propagate, IntervalBox};
use crate::cluster::{is_2_discriminant, Auditee};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::schema::{FeatureSchema, Instance, RawInstance};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub solve: SolveConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectedGroup {
    pub index: usize,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    /// No pair of counterfactuals differs by more than ε.
    Fair {
        /// Proven upper bound on the logit gap.
        max_logit_gap: f64,
    },
    Unfair {
        /// Carries the protected values of `groups[0]`.
        counterexample: RawInstance,
        groups: [ProtectedGroup; 2],
        scores: [f64; 2],
        score_gap: f64,
    },
    Unknown {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    /// Best logit gap found.
    pub objective: Option<f64>,
    pub best_bound: Option<f64>,
    pub nodes_explored: usize,
    pub lp_iterations: usize,
    pub unresolved_nodes: usize,
    pub variables: usize,
    pub constraints: usize,
    pub binaries: usize,
    /// Excluded from serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub epsilon: f64,
    pub epsilon_logit: f64,
    pub solver: SolverSummary,
}

impl Certificate {
    pub fn is_fair(&self) -> bool {
        matches!(self.verdict, Verdict::Fair { .. })
    }

    pub fn is_unfair(&self) -> bool {
        matches!(self.verdict, Verdict::Unfair { .. })
    }

    /// Proven maximum logit gap, when the solver closed the gap.
    pub fn optimal_logit_gap(&self) -> Option<f64> {
        match self.solver.status {
            SolveStatus::Optimal => self.solver.objective,
            SolveStatus::Infeasible => Some(0.0),
            _ => None,
        }
    }
}

fn check_inputs<T: Scalar>(network: &Network<T>, schema: &FeatureSchema, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1]")));
    }
    network.validate()?;
    if schema.input_width() != network.input_width {
        return Err(Error::Dimension {
            expected: network.input_width,
            got: schema.input_width(),
        });
    }
    Ok(())
}

fn build<T: Scalar>(network: &Network<T>, schema: &FeatureSchema, epsilon: f64) -> Result<PairEncoding<T>> {
    check_inputs(network, schema, epsilon)?;
    let bounds = propagate(network, &IntervalBox::unit(network.input_width))?;
    encode_pair_fairness(network, schema, &bounds, epsilon)
}

struct Witness {
    instance: Instance,
    combos: [usize; 2],
    scores: [f64; 2],
}

/// Forward-pass check of a decoded pair; falls back to the widest pair
/// among all counterfactuals of the decoded instance.
fn validate<T: Scalar>(network: &Network<T>, schema: &FeatureSchema, decoded: &PairDecoding, epsilon: f64) -> Option<Witness> {
    let score = |combo: usize| -> Option<f64> {
        let inst = schema.with_combo(&decoded.instance, combo);
        if schema.violates_rules(&inst) {
            return None;
        }
        let x = schema.encode::<T>(&inst).ok()?;
        Some(network.score(&x).ok()?.as_f64())
    };
    let [a, b] = decoded.combos;
    if let (Some(sa), Some(sb)) = (score(a), score(b)) {
        if is_2_discriminant(sa, sb, epsilon) {
            return Some(Witness {
                instance: schema.with_combo(&decoded.instance, a),
                combos: [a, b],
                scores: [sa, sb],
            });
        }
    }
    let eval = network.evaluate(schema, &decoded.instance, epsilon).ok()?;
    let (gap, hi, lo) = eval.max_gap()?;
    (gap > epsilon).then(|| {
        let s = |c: usize| eval.scores[eval.combos.iter().position(|&x| x == c).expect("combo")];
        Witness {
            instance: schema.with_combo(&decoded.instance, hi),
            combos: [hi, lo],
            scores: [s(hi), s(lo)],
        }
    })
}

fn summary<T: Scalar>(enc: &PairEncoding<T>, status: SolveStatus, objective: Option<T>, bound: Option<T>, stats: &SolveStats) -> SolverSummary {
    SolverSummary {
        status,
        objective: objective.map(|v| v.as_f64()),
        best_bound: bound.map(|v| v.as_f64()),
        nodes_explored: stats.nodes_explored,
        lp_iterations: stats.lp_iterations,
        unresolved_nodes: stats.unresolved_nodes,
        variables: enc.problem.variables.len(),
        constraints: enc.problem.constraints.len(),
        binaries: enc.problem.binary_count(),
        wall_time_seconds: stats.wall_time_seconds,
    }
}

/// Decides 2-fairness of `network` over the whole input space.
pub fn certify<T: Scalar>(
    network: &Network<T>,
    schema: &FeatureSchema,
    epsilon: f64,
    config: &CertifyConfig,
) -> Result<Certificate> {
    let enc = build(network, schema, epsilon)?;
    let repair = |relaxed: &[T]| enc.forward_assignment(network, schema, relaxed);
    let hooks = SolveHooks {
        repair: Some(&repair),
        accept: None,
    };
    let result = solve_with(&enc.problem, &config.solve, hooks);
    let solver = summary(&enc, result.status, result.objective_value, result.best_bound, &result.stats);
    let eps_logit = enc.epsilon_logit;
    let objective = result.objective_value.map(|v| v.as_f64());

    let unfair = |assignment: &[T]| -> Option<Verdict> {
        let decoded = enc.decode(schema, assignment);
        validate(network, schema, &decoded, epsilon).map(|w| Verdict::Unfair {
            counterexample: schema.to_raw(&w.instance),
            groups: w.combos.map(|c| ProtectedGroup {
                index: c,
                label: schema.combo_label(c),
            }),
            scores: w.scores,
            score_gap: (w.scores[0] - w.scores[1]).abs(),
        })
    };

    let verdict = match result.status {
        SolveStatus::Infeasible if result.stats.unresolved_nodes == 0 => Verdict::Fair { max_logit_gap: 0.0 },
        SolveStatus::Optimal
            if result.stats.unresolved_nodes == 0
                && objective.is_some_and(|v| v + config.solve.tolerance <= eps_logit) =>
        {
            Verdict::Fair {
                max_logit_gap: objective.unwrap_or(0.0) + config.solve.tolerance,
            }
        }
        _ => {
            let found = objective
                .filter(|&v| v > eps_logit)
                .and_then(|_| unfair(&result.assignment));
            match found {
                Some(v) => v,
                None => Verdict::Unknown {
                    reason: unknown_reason(result.status, objective, result.best_bound.map(|b| b.as_f64()), eps_logit, result.stats.unresolved_nodes),
                },
            }
        }
    };
    Ok(Certificate {
        verdict,
        epsilon,
        epsilon_logit: eps_logit,
        solver,
    })
}

fn unknown_reason(status: SolveStatus, objective: Option<f64>, bound: Option<f64>, eps_logit: f64, unresolved: usize) -> String {
    match (status, objective) {
        (_, Some(v)) if v > eps_logit => format!(
            "logit gap {v:.6} exceeds {eps_logit:.6} but no pair validated by forward pass"
        ),
        (SolveStatus::TimedOut, _) => format!(
            "solver budget exhausted; best bound {}",
            bound.map_or("unknown".to_string(), |b| format!("{b:.6}"))
        ),
        _ if unresolved > 0 => format!("{unresolved} relaxation(s) failed numerically"),
        _ => "optimality gap not closed below the logit threshold".into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub solve: SolveConfig,
    /// Neighbourhood radius in encoded units.
    pub radius: f64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            solve: SolveConfig::default(),
            radius: 0.2,
        }
    }
}

/// Reusable seeding front-end: the encoding is built once and restricted per call.
pub struct CounterexampleSeeder<'a, T: Scalar> {
    network: &'a Network<T>,
    schema: &'a FeatureSchema,
    base: PairEncoding<T>,
    epsilon: f64,
    config: SeedConfig,
}

impl<'a, T: Scalar> CounterexampleSeeder<'a, T> {
    pub fn new(network: &'a Network<T>, schema: &'a FeatureSchema, epsilon: f64, config: SeedConfig) -> Result<Self> {
        let base = build(network, schema, epsilon)?;
        Ok(Self {
            network,
            schema,
            base,
            epsilon,
            config,
        })
    }

    /// Looks for a validated 2-discriminant instance, optionally near `near`.
    pub fn seed(&self, near: Option<&Instance>) -> Result<(Option<Instance>, SolveStats)> {
        let mut enc = self.base.clone();
        if let Some(x) = near {
            enc.restrict_near(self.schema, x, self.config.radius)?;
        }
        let mut cfg = self.config.solve.clone();
        cfg.early_stop_threshold = Some(logit_threshold(self.epsilon));
        let repair = |relaxed: &[T]| enc.forward_assignment(self.network, self.schema, relaxed);
        let accept = |a: &[T]| validate(self.network, self.schema, &enc.decode(self.schema, a), self.epsilon).is_some();
        let result = solve_with(
            &enc.problem,
            &cfg,
            SolveHooks {
                repair: Some(&repair),
                accept: Some(&accept),
            },
        );
        let found = if result.assignment.is_empty() || result.objective_value.is_none_or(|v| v.as_f64() <= cfg.early_stop_threshold.unwrap_or(0.0)) {
            None
        } else {
            validate(self.network, self.schema, &enc.decode(self.schema, &result.assignment), self.epsilon)
                .map(|w| w.instance)
        };
        Ok((found, result.stats))
    }
}

/// One-shot seeding; see [`CounterexampleSeeder`].
pub fn seed_counterexample<T: Scalar>(
    network: &Network<T>,
    schema: &FeatureSchema,
    epsilon: f64,
    near: Option<&Instance>,
    config: &SeedConfig,
) -> Result<Option<Instance>> {
    Ok(CounterexampleSeeder::new(network, schema, epsilon, config.clone())?.seed(near)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, DenseLayer};
    use crate::schema::FeatureSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec::numeric("x", 0.0, 10.0, true),
                FeatureSpec::categorical("g", &["a", "b"]).protected(),
            ],
            vec![],
        )
        .unwrap()
    }

    fn net(protected_weight: f64) -> Network<f64> {
        let hidden = DenseLayer::new(
            vec![vec![1.0, 0.0, protected_weight], vec![-1.0, 0.0, 0.0]],
            vec![-0.2, 0.1],
            Activation::Relu,
        )
        .unwrap();
        let out = DenseLayer::new(vec![vec![2.0, -1.0]], vec![0.0], Activation::Identity).unwrap();
        Network::new(3, vec![hidden, out], None).unwrap()
    }

    #[test]
    fn zero_protected_weight_is_fair() {
        let c = certify(&net(0.0), &schema(), 0.05, &CertifyConfig::default()).unwrap();
        assert!(c.is_fair(), "{c:?}");
    }

    #[test]
    fn large_protected_weight_is_unfair_and_validates() {
        let n = net(2.0);
        let s = schema();
        let c = certify(&n, &s, 0.05, &CertifyConfig::default()).unwrap();
        let Verdict::Unfair { counterexample, groups, scores, .. } = &c.verdict else {
            panic!("expected unfair: {c:?}");
        };
        let x = s.from_raw(counterexample).unwrap();
        let a = n.score(&s.encode::<f64>(&s.with_combo(&x, groups[0].index)).unwrap()).unwrap();
        let b = n.score(&s.encode::<f64>(&s.with_combo(&x, groups[1].index)).unwrap()).unwrap();
        assert!((a - scores[0]).abs() < 1e-12 && (b - scores[1]).abs() < 1e-12);
        assert!((a - b).abs() > 0.05);
    }

    #[test]
    fn seeding_finds_a_discriminant_instance() {
        let n = net(2.0);
        let s = schema();
        let x = seed_counterexample(&n, &s, 0.05, None, &SeedConfig::default()).unwrap().unwrap();
        assert!(n.evaluate(&s, &x, 0.05).unwrap().is_id());
        assert!(seed_counterexample(&net(0.0), &s, 0.05, None, &SeedConfig::default())
            .unwrap()
            .is_none());
    }
}
