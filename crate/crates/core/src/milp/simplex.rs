//! Dense-tableau primal simplex with bounded variables.
//!
//! Variables are shifted so every lower bound is zero; nonbasic variables
//! rest at either bound and the ratio test considers bound flips. Phase 1
//! drives artificials to zero, phase 2 maximizes the objective. Dantzig
//! pricing switches to Bland's rule after a run of degenerate pivots. Every
//! reported optimum is checked against the original rows before it is returned.

use thiserror::Error;

use super::Relation;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LpRow<T> {
    pub coeffs: Vec<(usize, T)>,
    pub relation: Relation,
    pub rhs: T,
}

/// `maximize objective·x` s.t. rows and `lower ≤ x ≤ upper`. Lower bounds must
/// be finite; upper bounds may be `+∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub objective: Vec<T>,
    pub rows: Vec<LpRow<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    /// Meaningful only when `status` is `Optimal`.
    pub objective: T,
    pub values: Vec<T>,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed program: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug)]
pub struct SimplexOptions {
    pub feasibility_tolerance: f64,
    pub pivot_tolerance: f64,
    pub optimality_tolerance: f64,
    /// `None` scales with problem size.
    pub max_iterations: Option<usize>,
    pub degenerate_switch: usize,
}

impl SimplexOptions {
    pub fn for_scalar<T: Scalar>() -> Self {
        let eps = T::epsilon().as_f64();
        Self {
            feasibility_tolerance: (eps * 1e3).max(1e-7),
            pivot_tolerance: (eps * 100.0).max(1e-9),
            optimality_tolerance: (eps * 1e3).max(1e-9),
            max_iterations: None,
            degenerate_switch: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau<T> {
    rows: usize,
    cols: usize,
    a: Vec<T>,
    xb: Vec<T>,
    basis: Vec<usize>,
    state: Vec<State>,
    upper: Vec<T>,
    d: Vec<T>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

pub fn solve_lp<T: Scalar>(lp: &LinearProgram<T>) -> Result<LpSolution<T>, LpError> {
    solve_lp_with(lp, &SimplexOptions::for_scalar::<T>())
}

pub fn solve_lp_with<T: Scalar>(lp: &LinearProgram<T>, opts: &SimplexOptions) -> Result<LpSolution<T>, LpError> {
    let n = lp.objective.len();
    if lp.lower.len() != n || lp.upper.len() != n {
        return Err(LpError::Malformed("bound vectors differ in length from objective".into()));
    }
    if let Some(j) = (0..n).find(|&j| !lp.lower[j].is_finite() || lp.upper[j].is_nan()) {
        return Err(LpError::Malformed(format!("variable {j} needs a finite lower bound")));
    }
    let ftol = T::lit(opts.feasibility_tolerance);
    let infeasible = |iterations| LpSolution {
        status: LpStatus::Infeasible,
        objective: T::zero(),
        values: Vec::new(),
        iterations,
    };
    let mut ub: Vec<T> = Vec::with_capacity(n);
    for j in 0..n {
        let width = lp.upper[j] - lp.lower[j];
        if width < -ftol {
            return Ok(infeasible(0));
        }
        ub.push(width.max(T::zero()));
    }

    let m = lp.rows.len();
    // columns: structurals, one slack per inequality, then artificials
    let slack_count = lp.rows.iter().filter(|r| r.relation != Relation::Eq).count();
    let mut dense = vec![vec![T::zero(); n + slack_count]; m];
    let mut rhs = vec![T::zero(); m];
    let mut slack_of_row = vec![None; m];
    let mut next_slack = n;
    for (i, row) in lp.rows.iter().enumerate() {
        let mut b = row.rhs;
        for &(j, c) in &row.coeffs {
            if j >= n || !c.is_finite() {
                return Err(LpError::Malformed(format!("row {i} has a bad entry for column {j}")));
            }
            dense[i][j] += c;
            b -= c * lp.lower[j];
        }
        match row.relation {
            Relation::Le => {
                dense[i][next_slack] = T::one();
                slack_of_row[i] = Some(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                dense[i][next_slack] = -T::one();
                slack_of_row[i] = Some(next_slack);
                next_slack += 1;
            }
            Relation::Eq => {}
        }
        if b < T::zero() {
            for v in dense[i].iter_mut() {
                *v = -*v;
            }
            b = -b;
        }
        rhs[i] = b;
    }
    let needs_artificial: Vec<bool> = (0..m)
        .map(|i| match slack_of_row[i] {
            Some(s) => dense[i][s] != T::one(),
            None => true,
        })
        .collect();
    let art_count = needs_artificial.iter().filter(|&&b| b).count();
    let cols = n + slack_count + art_count;
    let first_art = n + slack_count;

    let mut t = Tableau {
        rows: m,
        cols,
        a: vec![T::zero(); m * cols],
        xb: rhs,
        basis: vec![0; m],
        state: vec![State::AtLower; cols],
        upper: ub,
        d: vec![T::zero(); cols],
        iterations: 0,
    };
    t.upper.extend(std::iter::repeat_n(T::infinity(), slack_count + art_count));
    let mut next_art = first_art;
    for i in 0..m {
        t.a[i * cols..i * cols + n + slack_count].copy_from_slice(&dense[i]);
        let b = if needs_artificial[i] {
            t.a[i * cols + next_art] = T::one();
            next_art += 1;
            next_art - 1
        } else {
            slack_of_row[i].expect("slack present")
        };
        t.basis[i] = b;
        t.state[b] = State::Basic;
    }
    drop(dense);

    let max_iter = opts.max_iterations.unwrap_or(50 * (m + cols) + 1000);

    if art_count > 0 {
        let mut cost = vec![T::zero(); cols];
        for c in cost.iter_mut().skip(first_art) {
            *c = -T::one();
        }
        t.price(&cost);
        match t.run(opts, max_iter, cols)? {
            Outcome::Optimal => {}
            Outcome::Unbounded => return Err(LpError::Numerical("phase 1 reported unbounded".into())),
        }
        let infeas: T = (0..m)
            .filter(|&i| t.basis[i] >= first_art)
            .map(|i| t.xb[i])
            .fold(T::zero(), |a, b| a + b.max(T::zero()));
        if infeas > ftol {
            return Ok(infeasible(t.iterations));
        }
        for j in first_art..cols {
            t.upper[j] = T::zero();
            if t.state[j] == State::AtUpper {
                t.state[j] = State::AtLower;
            }
        }
    }

    let mut cost = vec![T::zero(); cols];
    cost[..n].copy_from_slice(&lp.objective);
    t.price(&cost);
    let outcome = t.run(opts, max_iter, first_art)?;
    if let Outcome::Unbounded = outcome {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            objective: T::infinity(),
            values: Vec::new(),
            iterations: t.iterations,
        });
    }

    let mut y = vec![T::zero(); cols];
    for j in 0..cols {
        if t.state[j] == State::AtUpper {
            y[j] = t.upper[j];
        }
    }
    for i in 0..m {
        y[t.basis[i]] = t.xb[i];
    }
    let values: Vec<T> = (0..n)
        .map(|j| (y[j].max(T::zero()).min(t.upper[j]) + lp.lower[j]).min(lp.upper[j]).max(lp.lower[j]))
        .collect();
    verify(lp, &values, opts)?;
    let objective = values.iter().zip(&lp.objective).fold(T::zero(), |a, (&x, &c)| a + x * c);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective,
        values,
        iterations: t.iterations,
    })
}

fn verify<T: Scalar>(lp: &LinearProgram<T>, x: &[T], opts: &SimplexOptions) -> Result<(), LpError> {
    let tol = opts.feasibility_tolerance.sqrt().max(1e-5);
    for (i, row) in lp.rows.iter().enumerate() {
        let mut lhs = 0.0;
        let mut scale = 1.0 + row.rhs.as_f64().abs();
        for &(j, c) in &row.coeffs {
            let term = c.as_f64() * x[j].as_f64();
            lhs += term;
            scale += term.abs();
        }
        let viol = match row.relation {
            Relation::Le => lhs - row.rhs.as_f64(),
            Relation::Ge => row.rhs.as_f64() - lhs,
            Relation::Eq => (lhs - row.rhs.as_f64()).abs(),
        };
        if !viol.is_finite() || viol > tol * scale {
            return Err(LpError::Numerical(format!("row {i} violated by {viol:e} after solve")));
        }
    }
    Ok(())
}

impl<T: Scalar> Tableau<T> {
    fn entry(&self, i: usize, j: usize) -> T {
        self.a[i * self.cols + j]
    }

    /// Reduced costs `d_j = c_j − c_B·A_j`.
    fn price(&mut self, cost: &[T]) {
        self.d.copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != T::zero() {
                let row = &self.a[i * self.cols..(i + 1) * self.cols];
                for (d, &a) in self.d.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
        }
        for i in 0..self.rows {
            self.d[self.basis[i]] = T::zero();
        }
    }

    /// Simplex iterations over columns `0..limit`.
    fn run(&mut self, opts: &SimplexOptions, max_iter: usize, limit: usize) -> Result<Outcome, LpError> {
        let otol = T::lit(opts.optimality_tolerance);
        let ptol = T::lit(opts.pivot_tolerance);
        let mut degenerate_run = 0usize;
        loop {
            let bland = degenerate_run >= opts.degenerate_switch;
            let mut entering: Option<usize> = None;
            let mut best = T::zero();
            for j in 0..limit {
                let gain = match self.state[j] {
                    State::Basic => continue,
                    State::AtLower if self.upper[j] > T::zero() => self.d[j],
                    State::AtUpper => -self.d[j],
                    State::AtLower => continue,
                };
                if gain > otol {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    if gain > best {
                        best = gain;
                        entering = Some(j);
                    }
                }
            }
            let Some(q) = entering else {
                return Ok(Outcome::Optimal);
            };
            if self.iterations >= max_iter {
                return Err(LpError::IterationLimit(max_iter));
            }
            self.iterations += 1;

            let dir = if self.state[q] == State::AtLower { T::one() } else { -T::one() };
            let mut theta = self.upper[q];
            let mut leave: Option<(usize, State)> = None;
            let mut leave_alpha = T::zero();
            for i in 0..self.rows {
                let alpha = dir * self.entry(i, q);
                let (limit_i, to) = if alpha > ptol {
                    ((self.xb[i] / alpha).max(T::zero()), State::AtLower)
                } else if alpha < -ptol && self.upper[self.basis[i]].is_finite() {
                    (((self.upper[self.basis[i]] - self.xb[i]) / -alpha).max(T::zero()), State::AtUpper)
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit_i < theta,
                    Some((r, _)) => {
                        if limit_i < theta - ptol {
                            true
                        } else if limit_i <= theta + ptol {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                alpha.abs() > leave_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = theta.min(limit_i);
                    leave = Some((i, to));
                    leave_alpha = alpha.abs();
                }
            }
            if leave.is_none() && !theta.is_finite() {
                return Ok(Outcome::Unbounded);
            }
            if theta <= ptol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            for i in 0..self.rows {
                let a = self.entry(i, q);
                if a != T::zero() {
                    self.xb[i] -= dir * theta * a;
                }
            }
            match leave {
                None => {
                    self.state[q] = if self.state[q] == State::AtLower {
                        State::AtUpper
                    } else {
                        State::AtLower
                    };
                }
                Some((r, to)) => {
                    let entering_value = if self.state[q] == State::AtLower {
                        theta
                    } else {
                        self.upper[q] - theta
                    };
                    let out = self.basis[r];
                    self.state[out] = to;
                    self.state[q] = State::Basic;
                    self.basis[r] = q;
                    self.xb[r] = entering_value;
                    self.pivot(r, q);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let p = self.entry(r, q);
        let inv = T::one() / p;
        for v in self.a[r * cols..(r + 1) * cols].iter_mut() {
            *v *= inv;
        }
        self.a[r * cols + q] = T::one();
        let (before, rest) = self.a.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        let eliminate = |row: &mut [T]| {
            let f = row[q];
            if f != T::zero() {
                for (v, &pr) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pr;
                }
                row[q] = T::zero();
            }
        };
        before.chunks_mut(cols).for_each(eliminate);
        after.chunks_mut(cols).for_each(eliminate);
        let f = self.d[q];
        if f != T::zero() {
            for (v, &pr) in self.d.iter_mut().zip(prow.iter()) {
                *v -= f * pr;
            }
            self.d[q] = T::zero();
        }
    }
}
