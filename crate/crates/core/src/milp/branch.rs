//! Best-bound branch-and-bound over the integer variables of a [`MilpProblem`].
//!
//! Nodes carry tightened integer bounds and the bound inherited from their
//! parent relaxation. The open node with the highest bound is expanded next,
//! ties going to the older node; branching picks the most fractional integer
//! variable, ties going to the lowest index. With several workers a batch of
//! nodes is relaxed in parallel and the results are consumed in pop order, so
//! the search tree does not depend on thread timing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simplex::{solve_lp, LpStatus};
use super::{MilpProblem, VarKind};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub timeout_seconds: f64,
    /// Absolute gap below which the incumbent is declared optimal.
    pub tolerance: f64,
    /// Stop with `FeasibleIncumbent` once an (accepted) incumbent exceeds this value.
    pub early_stop_threshold: Option<f64>,
    /// Deterministic budget; hitting it reports `TimedOut`.
    pub node_limit: Option<usize>,
    pub workers: usize,
    pub integrality_tolerance: f64,
    /// Run the rounding/repair heuristic every this many nodes once an incumbent exists.
    pub heuristic_period: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            timeout_seconds: 100.0,
            tolerance: 1e-4,
            early_stop_threshold: None,
            node_limit: None,
            workers: 1,
            integrality_tolerance: 1e-6,
            heuristic_period: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    FeasibleIncumbent,
    Infeasible,
    TimedOut,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes_explored: usize,
    pub lp_iterations: usize,
    /// Relaxations abandoned after a numerical failure.
    pub unresolved_nodes: usize,
    pub incumbent_updates: usize,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<T> {
    pub status: SolveStatus,
    pub objective_value: Option<T>,
    /// Upper bound on the optimum; equals the incumbent value when optimal.
    pub best_bound: Option<T>,
    /// Empty when no incumbent was found.
    pub assignment: Vec<T>,
    pub stats: SolveStats,
}

type RepairFn<'a, T> = dyn Fn(&[T]) -> Option<Vec<T>> + Sync + 'a;
type AcceptFn<'a, T> = dyn Fn(&[T]) -> bool + Sync + 'a;

/// Optional problem-specific callbacks.
#[derive(Default, Clone, Copy)]
pub struct SolveHooks<'a, T> {
    /// Maps a relaxation solution to a guess for every variable; the integer
    /// part of the guess is fixed and the continuous part re-optimized.
    pub repair: Option<&'a RepairFn<'a, T>>,
    /// Early stopping additionally requires the incumbent to pass this check.
    pub accept: Option<&'a AcceptFn<'a, T>>,
}

pub fn solve<T: Scalar>(problem: &MilpProblem<T>, config: &SolveConfig) -> SolveResult<T> {
    solve_with(problem, config, SolveHooks { repair: None, accept: None })
}

struct Node<T> {
    bound: f64,
    seq: usize,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T> Eq for Node<T> {}
impl<T> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Node<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum Relaxed<T> {
    Solved { objective: T, values: Vec<T>, iterations: usize },
    Infeasible { iterations: usize },
    Failed,
}

fn relax<T: Scalar>(problem: &MilpProblem<T>, lower: &[T], upper: &[T]) -> Relaxed<T> {
    match solve_lp(&problem.relaxation(lower, upper)) {
        Ok(s) => match s.status {
            LpStatus::Optimal => Relaxed::Solved {
                objective: s.objective,
                values: s.values,
                iterations: s.iterations,
            },
            LpStatus::Infeasible => Relaxed::Infeasible { iterations: s.iterations },
            // all variables are bounded, so this is a numerical artifact
            LpStatus::Unbounded => Relaxed::Failed,
        },
        Err(e) => {
            log::debug!("relaxation abandoned: {e}");
            Relaxed::Failed
        }
    }
}

struct Search<'p, 'h, T: Scalar> {
    problem: &'p MilpProblem<T>,
    config: &'p SolveConfig,
    hooks: SolveHooks<'h, T>,
    integer: Vec<usize>,
    incumbent: Option<(T, Vec<T>)>,
    stats: SolveStats,
    early_stopped: bool,
}

impl<T: Scalar> Search<'_, '_, T> {
    fn fractional(&self, values: &[T]) -> Option<usize> {
        let tol = self.config.integrality_tolerance;
        let mut best: Option<(f64, usize)> = None;
        for &j in &self.integer {
            let v = values[j].as_f64();
            let frac = (v - v.round()).abs();
            if frac > tol {
                let score = (v - v.floor() - 0.5).abs();
                if best.is_none_or(|(s, _)| score < s) {
                    best = Some((score, j));
                }
            }
        }
        best.map(|(_, j)| j)
    }

    fn incumbent_value(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|(v, _)| v.as_f64())
    }

    /// Offers a candidate incumbent; returns true when it triggers early stopping.
    fn offer(&mut self, _relaxed: T, mut values: Vec<T>) -> bool {
        for &j in &self.integer {
            values[j] = values[j].round();
        }
        let objective = self.problem.objective_value(&values);
        if self.incumbent_value().is_some_and(|v| objective.as_f64() <= v) {
            return false;
        }
        self.stats.incumbent_updates += 1;
        let stop = match self.config.early_stop_threshold {
            Some(th) => objective.as_f64() > th && self.hooks.accept.is_none_or(|acc| acc(&values)),
            None => false,
        };
        self.incumbent = Some((objective, values));
        stop
    }

    /// Fixes the integer part of `guess` and re-optimizes the continuous part.
    fn try_fixed(&mut self, guess: &[T], lower: &[T], upper: &[T]) -> bool {
        let mut lo = lower.to_vec();
        let mut hi = upper.to_vec();
        for &j in &self.integer {
            let v = guess[j].round().max(lower[j]).min(upper[j]);
            lo[j] = v;
            hi[j] = v;
        }
        if self.integer.is_empty() {
            return false;
        }
        match relax(self.problem, &lo, &hi) {
            Relaxed::Solved {
                objective,
                values,
                iterations,
            } => {
                self.stats.lp_iterations += iterations;
                self.offer(objective, values)
            }
            Relaxed::Infeasible { iterations } => {
                self.stats.lp_iterations += iterations;
                false
            }
            Relaxed::Failed => false,
        }
    }

    fn heuristic(&mut self, values: &[T], lower: &[T], upper: &[T]) -> bool {
        if let Some(repair) = self.hooks.repair {
            if let Some(guess) = repair(values) {
                if guess.len() == values.len() && self.try_fixed(&guess, lower, upper) {
                    return true;
                }
            }
        }
        if self.incumbent.is_none() {
            return self.try_fixed(values, lower, upper);
        }
        false
    }
}

pub fn solve_with<T: Scalar>(problem: &MilpProblem<T>, config: &SolveConfig, hooks: SolveHooks<'_, T>) -> SolveResult<T> {
    let start = Instant::now();
    let integer: Vec<usize> = (0..problem.variables.len())
        .filter(|&j| problem.variables[j].kind == VarKind::Integer)
        .collect();
    let mut lower: Vec<T> = problem.variables.iter().map(|v| v.lower).collect();
    let mut upper: Vec<T> = problem.variables.iter().map(|v| v.upper).collect();
    for &j in &integer {
        lower[j] = lower[j].ceil();
        upper[j] = upper[j].floor();
    }
    let mut search = Search {
        problem,
        config,
        hooks,
        integer,
        incumbent: None,
        stats: SolveStats::default(),
        early_stopped: false,
    };
    let pool = if config.workers > 1 {
        rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().ok()
    } else {
        None
    };

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Node {
        bound: f64::INFINITY,
        seq,
        lower,
        upper,
    });
    let mut limited = false;
    let gap_closed = |bound: f64, inc: Option<f64>| inc.is_some_and(|v| bound <= v + config.tolerance);

    'outer: while !heap.is_empty() {
        if start.elapsed().as_secs_f64() > config.timeout_seconds
            || config.node_limit.is_some_and(|l| search.stats.nodes_explored >= l)
        {
            limited = true;
            break;
        }
        let mut batch = Vec::new();
        let width = config.workers.max(1);
        while batch.len() < width {
            let Some(node) = heap.pop() else { break };
            if gap_closed(node.bound, search.incumbent_value()) {
                // best-first: everything left is dominated as well
                heap.clear();
                break;
            }
            batch.push(node);
        }
        if batch.is_empty() {
            break;
        }
        let relaxed: Vec<Relaxed<T>> = match &pool {
            Some(pool) => pool.install(|| batch.par_iter().map(|n| relax(problem, &n.lower, &n.upper)).collect()),
            None => batch.iter().map(|n| relax(problem, &n.lower, &n.upper)).collect(),
        };
        for (node, result) in batch.into_iter().zip(relaxed) {
            search.stats.nodes_explored += 1;
            let (objective, values) = match result {
                Relaxed::Solved {
                    objective,
                    values,
                    iterations,
                } => {
                    search.stats.lp_iterations += iterations;
                    (objective, values)
                }
                Relaxed::Infeasible { iterations } => {
                    search.stats.lp_iterations += iterations;
                    continue;
                }
                Relaxed::Failed => {
                    search.stats.unresolved_nodes += 1;
                    continue;
                }
            };
            let bound = objective.as_f64().min(node.bound);
            if gap_closed(bound, search.incumbent_value()) {
                continue;
            }
            match search.fractional(&values) {
                None => {
                    if search.offer(objective, values) {
                        search.early_stopped = true;
                        break 'outer;
                    }
                }
                Some(j) => {
                    let run_heuristic = search.incumbent.is_none()
                        || search.stats.nodes_explored % config.heuristic_period.max(1) == 1;
                    if run_heuristic && search.heuristic(&values, &node.lower, &node.upper) {
                        search.early_stopped = true;
                        break 'outer;
                    }
                    if gap_closed(bound, search.incumbent_value()) {
                        continue;
                    }
                    let v = values[j];
                    let mut down_upper = node.upper.clone();
                    down_upper[j] = v.floor();
                    let mut up_lower = node.lower.clone();
                    up_lower[j] = v.ceil();
                    seq += 1;
                    heap.push(Node {
                        bound,
                        seq,
                        lower: node.lower.clone(),
                        upper: down_upper,
                    });
                    seq += 1;
                    heap.push(Node {
                        bound,
                        seq,
                        lower: up_lower,
                        upper: node.upper,
                    });
                }
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max);
    search.stats.wall_time_seconds = start.elapsed().as_secs_f64();
    let (objective_value, assignment) = match search.incumbent.take() {
        Some((v, a)) => (Some(v), a),
        None => (None, Vec::new()),
    };
    let status = if search.early_stopped {
        SolveStatus::FeasibleIncumbent
    } else if limited && !heap.is_empty() {
        SolveStatus::TimedOut
    } else if objective_value.is_some() {
        SolveStatus::Optimal
    } else if search.stats.unresolved_nodes > 0 {
        SolveStatus::TimedOut
    } else {
        SolveStatus::Infeasible
    };
    let best_bound = match status {
        SolveStatus::Optimal => objective_value,
        SolveStatus::Infeasible => None,
        _ if heap.is_empty() => objective_value,
        _ => {
            let inc = objective_value.map_or(f64::NEG_INFINITY, |v| v.as_f64());
            Some(T::lit(open_bound.max(inc)))
        }
    };
    SolveResult {
        status,
        objective_value,
        best_bound,
        assignment,
        stats: search.stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{LinearExpr, Relation};

    fn knapsack() -> MilpProblem<f64> {
        // values 10, 13, 7, 8; weights 3, 4, 2, 3; capacity 7: items 0 and 1 give 23
        let mut p = MilpProblem::new();
        let vals = [10.0, 13.0, 7.0, 8.0];
        let wts = [3.0, 4.0, 2.0, 3.0];
        let ids: Vec<_> = (0..4).map(|i| p.add_binary(format!("x{i}"))).collect();
        let mut w = LinearExpr::new();
        let mut obj = LinearExpr::new();
        for i in 0..4 {
            w.add_term(ids[i], wts[i]);
            obj.add_term(ids[i], vals[i]);
        }
        p.add_constraint("cap", w, Relation::Le, 7.0);
        p.objective = obj;
        p
    }

    #[test]
    fn solves_small_knapsack() {
        let r = solve(&knapsack(), &SolveConfig::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective_value.unwrap() - 23.0).abs() < 1e-9);
        assert_eq!(r.best_bound, r.objective_value);
    }

    #[test]
    fn worker_count_does_not_change_answer() {
        let one = solve(&knapsack(), &SolveConfig::default());
        let four = solve(&knapsack(), &SolveConfig { workers: 4, ..Default::default() });
        assert_eq!(one.objective_value, four.objective_value);
    }

    #[test]
    fn infeasible_problem() {
        let mut p = MilpProblem::<f64>::new();
        let x = p.add_binary("x");
        let y = p.add_binary("y");
        let mut e = LinearExpr::var(x);
        e.add_term(y, 1.0);
        p.add_constraint("half", e, Relation::Eq, 1.5);
        assert_eq!(solve(&p, &SolveConfig::default()).status, SolveStatus::Infeasible);
    }

    #[test]
    fn early_stop_returns_incumbent() {
        let cfg = SolveConfig {
            early_stop_threshold: Some(5.0),
            ..Default::default()
        };
        let r = solve(&knapsack(), &cfg);
        assert_eq!(r.status, SolveStatus::FeasibleIncumbent);
        assert!(r.objective_value.unwrap() > 5.0);
        assert!(knapsack().is_feasible(&r.assignment, 1e-7));
    }

    #[test]
    fn general_integers() {
        // max x + y; 2x + 2y ≤ 7, x, y ∈ {0..5} → 3
        let mut p = MilpProblem::<f64>::new();
        let x = p.add_var("x", VarKind::Integer, 0.0, 5.0);
        let y = p.add_var("y", VarKind::Integer, 0.0, 5.0);
        let mut e = LinearExpr::term(x, 2.0);
        e.add_term(y, 2.0);
        p.add_constraint("c", e, Relation::Le, 7.0);
        p.objective = LinearExpr::var(x);
        p.objective.add_term(y, 1.0);
        let r = solve(&p, &SolveConfig::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective_value.unwrap() - 3.0).abs() < 1e-9);
    }
}
