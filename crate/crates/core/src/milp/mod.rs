//! Mixed-integer linear programming for pair-fairness queries.
//!
//! * [`MilpProblem`]: variables (continuous or integer, finite bounds),
//!   linear constraints and a maximization objective.
//! * [`simplex`]: bounded-variable dense tableau simplex for LP relaxations.
//! * [`solve`]: best-bound branch-and-bound over the integer variables.
//! * [`encode_pair_fairness`]: two network copies sharing non-protected
//!   inputs, ReLUs as big-M indicator constraints, objective `max |F1 − F2|`.
//! * [`certify`] / [`seed_counterexample`]: verdicts and search seeds, always
//!   re-validated by forward passes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

mod branch;
mod certify;
mod encode;
pub mod simplex;

pub use branch::{solve, solve_with, SolveConfig, SolveHooks, SolveStats, SolveStatus, SolveResult};
pub use certify::{
    certify, seed_counterexample, CertifyConfig, Certificate, CounterexampleSeeder, ProtectedGroup, SeedConfig,
    SolverSummary, Verdict,
};
pub use encode::{encode_pair_fairness, NeuronVars, PairDecoding, PairEncoding, SharedInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    /// Integer-valued; binaries are integers on [0, 1].
    Integer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Variable<T> {
    pub name: String,
    pub kind: VarKind,
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> Variable<T> {
    pub fn is_binary(&self) -> bool {
        self.kind == VarKind::Integer && self.lower >= T::zero() && self.upper <= T::one()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearExpr<T> {
    pub coefficients: BTreeMap<VarId, T>,
    pub constant: T,
}

impl<T: Scalar> LinearExpr<T> {
    pub fn new() -> Self {
        Self {
            coefficients: BTreeMap::new(),
            constant: T::zero(),
        }
    }

    pub fn constant(c: T) -> Self {
        Self {
            coefficients: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(id: VarId) -> Self {
        Self::term(id, T::one())
    }

    pub fn term(id: VarId, coef: T) -> Self {
        let mut e = Self::new();
        e.add_term(id, coef);
        e
    }

    pub fn add_term(&mut self, id: VarId, coef: T) -> &mut Self {
        let entry = self.coefficients.entry(id).or_insert(T::zero());
        *entry += coef;
        if *entry == T::zero() {
            self.coefficients.remove(&id);
        }
        self
    }

    /// `self += factor · other`.
    pub fn add_scaled(&mut self, other: &LinearExpr<T>, factor: T) -> &mut Self {
        for (&id, &c) in &other.coefficients {
            self.add_term(id, c * factor);
        }
        self.constant += other.constant * factor;
        self
    }

    pub fn scaled(&self, factor: T) -> Self {
        let mut e = Self::new();
        e.add_scaled(self, factor);
        e
    }

    pub fn evaluate(&self, assignment: &[T]) -> T {
        self.coefficients
            .iter()
            .fold(self.constant, |acc, (id, &c)| acc + c * assignment[id.0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Constraint<T> {
    pub name: String,
    pub expr: LinearExpr<T>,
    pub relation: Relation,
    pub rhs: T,
}

/// `maximize objective` subject to constraints and variable bounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MilpProblem<T> {
    pub variables: Vec<Variable<T>>,
    pub constraints: Vec<Constraint<T>>,
    pub objective: LinearExpr<T>,
}

impl<T: Scalar> MilpProblem<T> {
    pub fn new() -> Self {
        Self {
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: LinearExpr::new(),
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: T, upper: T) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            kind,
            lower,
            upper,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: T, upper: T) -> VarId {
        self.add_var(name, VarKind::Continuous, lower, upper)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Integer, T::zero(), T::one())
    }

    /// Adds `expr relation rhs`; the expression constant is folded into the rhs.
    pub fn add_constraint(&mut self, name: impl Into<String>, expr: LinearExpr<T>, relation: Relation, rhs: T) {
        let rhs = rhs - expr.constant;
        let expr = LinearExpr {
            coefficients: expr.coefficients,
            constant: T::zero(),
        };
        self.constraints.push(Constraint {
            name: name.into(),
            expr,
            relation,
            rhs,
        });
    }

    pub fn integer_vars(&self) -> Vec<VarId> {
        (0..self.variables.len())
            .filter(|&i| self.variables[i].kind == VarKind::Integer)
            .map(VarId)
            .collect()
    }

    pub fn binary_count(&self) -> usize {
        self.variables.iter().filter(|v| v.is_binary()).count()
    }

    /// Every constraint references declared variables; bounds are finite and ordered.
    pub fn validate(&self) -> Result<(), String> {
        for (i, v) in self.variables.iter().enumerate() {
            if !(v.lower.is_finite() && v.upper.is_finite()) {
                return Err(format!("variable {i} (`{}`) has non-finite bounds", v.name));
            }
            if v.lower > v.upper {
                return Err(format!("variable {i} (`{}`) has lower > upper", v.name));
            }
        }
        let n = self.variables.len();
        let exprs = self.constraints.iter().map(|c| &c.expr).chain(std::iter::once(&self.objective));
        for e in exprs {
            if let Some(id) = e.coefficients.keys().find(|id| id.0 >= n) {
                return Err(format!("expression references undeclared variable {}", id.0));
            }
            if e.coefficients.values().any(|c| !c.is_finite()) {
                return Err("non-finite coefficient".into());
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, assignment: &[T]) -> T {
        self.objective.evaluate(assignment)
    }

    /// Largest violation of bounds, integrality and constraints.
    pub fn max_violation(&self, assignment: &[T]) -> T {
        let mut worst = T::zero();
        for (v, &x) in self.variables.iter().zip(assignment) {
            worst = worst.max(v.lower - x).max(x - v.upper);
            if v.kind == VarKind::Integer {
                worst = worst.max((x - x.round()).abs());
            }
        }
        for c in &self.constraints {
            let lhs = c.expr.evaluate(assignment);
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn is_feasible(&self, assignment: &[T], tolerance: T) -> bool {
        assignment.len() == self.variables.len() && self.max_violation(assignment) <= tolerance
    }

    /// LP relaxation with per-variable bound overrides.
    pub fn relaxation(&self, lower: &[T], upper: &[T]) -> simplex::LinearProgram<T> {
        let mut objective = vec![T::zero(); self.variables.len()];
        for (id, &c) in &self.objective.coefficients {
            objective[id.0] = c;
        }
        simplex::LinearProgram {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            objective,
            rows: self
                .constraints
                .iter()
                .map(|c| simplex::LpRow {
                    coeffs: c.expr.coefficients.iter().map(|(id, &v)| (id.0, v)).collect(),
                    relation: c.relation,
                    rhs: c.rhs,
                })
                .collect(),
        }
    }

    /// Standard LP text format (objective, constraint rows, bounds, general and binary sections).
    pub fn to_lp_format(&self) -> String {
        let name = |i: usize| sanitize(&self.variables[i].name, i);
        let render = |e: &LinearExpr<T>| -> String {
            if e.coefficients.is_empty() {
                return "0".into();
            }
            let mut s = String::new();
            for (k, (id, &c)) in e.coefficients.iter().enumerate() {
                let v = c.as_f64();
                let sign = if v < 0.0 { "-" } else if k > 0 { "+" } else { "" };
                let _ = write!(s, "{}{} {} {}", if k > 0 { " " } else { "" }, sign, v.abs(), name(id.0));
            }
            s.trim_start().to_string()
        };
        let mut out = String::from("\\ pair-fairness encoding\nMaximize\n");
        let _ = writeln!(out, " obj: {}", render(&self.objective));
        out.push_str("Subject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(
                out,
                " {}: {} {} {}",
                sanitize(&c.name, i),
                render(&c.expr),
                c.relation.symbol(),
                c.rhs.as_f64()
            );
        }
        out.push_str("Bounds\n");
        for (i, v) in self.variables.iter().enumerate() {
            if !v.is_binary() {
                let _ = writeln!(out, " {} <= {} <= {}", v.lower.as_f64(), name(i), v.upper.as_f64());
            }
        }
        let general: Vec<String> = (0..self.variables.len())
            .filter(|&i| self.variables[i].kind == VarKind::Integer && !self.variables[i].is_binary())
            .map(name)
            .collect();
        if !general.is_empty() {
            let _ = writeln!(out, "General\n {}", general.join(" "));
        }
        let binary: Vec<String> = (0..self.variables.len())
            .filter(|&i| self.variables[i].is_binary())
            .map(name)
            .collect();
        if !binary.is_empty() {
            let _ = writeln!(out, "Binary\n {}", binary.join(" "));
        }
        out.push_str("End\n");
        out
    }
}

fn sanitize(name: &str, index: usize) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect();
    match cleaned.chars().next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => cleaned,
        _ => format!("v{index}_{cleaned}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_arithmetic() {
        let mut e = LinearExpr::<f64>::term(VarId(0), 2.0);
        e.add_term(VarId(1), -1.0).add_term(VarId(0), -2.0);
        assert!(!e.coefficients.contains_key(&VarId(0)));
        let mut f = LinearExpr::constant(3.0);
        f.add_scaled(&e, 2.0);
        assert_eq!(f.evaluate(&[10.0, 1.0]), 1.0);
    }

    #[test]
    fn lp_format_sections() {
        let mut p = MilpProblem::<f64>::new();
        let x = p.add_continuous("x", 0.0, 4.0);
        let b = p.add_binary("b");
        let n = p.add_var("n", VarKind::Integer, 0.0, 5.0);
        let mut e = LinearExpr::var(x);
        e.add_term(b, -3.0);
        p.add_constraint("c", e, Relation::Le, 1.0);
        p.objective = LinearExpr::var(x);
        p.objective.add_term(n, 1.0);
        let text = p.to_lp_format();
        assert!(text.contains("Maximize\n obj: 1 x + 1 n"));
        assert!(text.contains(" c: 1 x - 3 b <= 1"));
        assert!(text.contains("Bounds\n 0 <= x <= 4"));
        assert!(text.contains("General\n n"));
        assert!(text.contains("Binary\n b"));
        assert!(text.ends_with("End\n"));
    }

    #[test]
    fn feasibility_check() {
        let mut p = MilpProblem::<f64>::new();
        let x = p.add_continuous("x", 0.0, 1.0);
        let b = p.add_binary("b");
        let mut e = LinearExpr::var(x);
        e.add_term(b, 1.0);
        p.add_constraint("sum", e, Relation::Eq, 1.0);
        assert!(p.is_feasible(&[0.0, 1.0], 1e-9));
        assert!(!p.is_feasible(&[0.5, 0.5], 1e-9));
        assert!(!p.is_feasible(&[0.2, 1.0], 1e-9));
        assert!(p.validate().is_ok());
    }
}
