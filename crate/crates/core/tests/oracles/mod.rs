//! Independent reference computations shared by integration and acceptance tests.
#![allow(dead_code)]

use kfair::milp::simplex::{LinearProgram, LpStatus};
use kfair::milp::Relation;
use kfair::model::{Activation, DenseLayer, Network};
use kfair::schema::{FeatureSchema, FeatureSpec, FeatureValue, Instance};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn random_network<R: Rng>(rng: &mut R, input: usize, hidden: &[usize], outputs: usize, scale: f64) -> Network<f64> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(outputs);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == widths.len() { Activation::Identity } else { Activation::Relu };
            DenseLayer::new(
                (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random_range(-scale..scale)).collect()).collect(),
                (0..w[1]).map(|_| rng.random_range(-0.5 * scale..0.5 * scale)).collect(),
                act,
            )
            .unwrap()
        })
        .collect();
    Network::new(input, layers, None).unwrap()
}

/// Fully discrete schema: integral and categorical features plus one
/// protected categorical feature with `groups` labels.
pub fn discrete_schema<R: Rng>(rng: &mut R, groups: usize) -> FeatureSchema {
    let mut features = vec![
        FeatureSpec::numeric("age", 0.0, rng.random_range(2..5) as f64, true),
        FeatureSpec::categorical("job", &["a", "b", "c"][..rng.random_range(2..4)]),
        FeatureSpec::numeric("hours", 1.0, rng.random_range(3..6) as f64, true),
    ];
    let labels = ["g0", "g1", "g2", "g3"];
    features.push(FeatureSpec::categorical("group", &labels[..groups]).protected());
    FeatureSchema::new(features, vec![]).unwrap()
}

/// Every assignment of the non-protected features (protected at label 0).
pub fn all_instances(schema: &FeatureSchema) -> Vec<Instance> {
    let mut out = vec![Instance {
        values: schema
            .features()
            .iter()
            .map(|f| if f.is_categorical() { FeatureValue::Cat(0) } else { FeatureValue::Num(f.numeric_range().unwrap().0.ceil()) })
            .collect(),
    }];
    for &f in schema.unprotected_features() {
        let spec = schema.feature(f);
        let domain: Vec<FeatureValue> = match spec.numeric_range() {
            Some((lo, hi, true)) => (lo.ceil() as i64..=hi.floor() as i64).map(|v| FeatureValue::Num(v as f64)).collect(),
            Some(_) => panic!("continuous feature in exhaustive enumeration"),
            None => (0..spec.width()).map(FeatureValue::Cat).collect(),
        };
        out = out
            .into_iter()
            .flat_map(|base| {
                domain.iter().map(move |&v| {
                    let mut x = base.clone();
                    x.values[f] = v;
                    x
                })
            })
            .collect();
    }
    out
}

pub fn margin(net: &Network<f64>, x: &[f64]) -> f64 {
    let logits = net.forward(x).unwrap();
    net.decision_margin(&logits).unwrap()
}

/// Maximum logit-margin gap over all counterfactual pairs, by enumeration.
pub fn exhaustive_max_logit_gap(net: &Network<f64>, schema: &FeatureSchema) -> f64 {
    let mut best = 0.0f64;
    for x in all_instances(schema) {
        let m: Vec<f64> = schema
            .counterfactual_encodings::<f64>(&x)
            .unwrap()
            .iter()
            .map(|(_, v)| margin(net, v))
            .collect();
        let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = m.iter().cloned().fold(f64::INFINITY, f64::min);
        best = best.max(hi - lo);
    }
    best
}

/// Maximum normalized score gap by enumeration.
pub fn exhaustive_max_score_gap(net: &Network<f64>, schema: &FeatureSchema) -> f64 {
    all_instances(schema)
        .iter()
        .map(|x| {
            let s: Vec<f64> = schema
                .counterfactual_encodings::<f64>(x)
                .unwrap()
                .iter()
                .map(|(_, v)| net.score(v).unwrap())
                .collect();
            s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Random bounded LP with `n` variables and `m` rows of mixed relations.
pub fn random_lp<R: Rng>(rng: &mut R, n: usize, m: usize) -> LinearProgram<f64> {
    let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0f64).round()).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(1.0..4.0f64).round()).collect();
    let objective = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let rows = (0..m)
        .map(|_| {
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for j in 0..n {
                if rng.random_bool(0.7) {
                    coeffs.push((j, rng.random_range(-2.0..2.0)));
                }
            }
            let relation = match rng.random_range(0..6) {
                0 => Relation::Eq,
                1 | 2 => Relation::Ge,
                _ => Relation::Le,
            };
            kfair::milp::simplex::LpRow {
                coeffs,
                relation,
                rhs: rng.random_range(-2.0..3.0),
            }
        })
        .collect();
    LinearProgram { lower, upper, objective, rows }
}

fn lp_feasible(lp: &LinearProgram<f64>, x: &[f64], tol: f64) -> bool {
    let bounds = x.iter().zip(lp.lower.iter().zip(&lp.upper)).all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol);
    bounds
        && lp.rows.iter().all(|r| {
            let lhs: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            match r.relation {
                Relation::Le => lhs <= r.rhs + tol,
                Relation::Ge => lhs >= r.rhs - tol,
                Relation::Eq => (lhs - r.rhs).abs() <= tol,
            }
        })
}

/// Optimum over basic feasible solutions: every choice of `n` linearly
/// independent active constraints (rows or bounds) is solved with LU and
/// kept when feasible. `None` means infeasible (all variables are bounded).
pub fn vertex_enumeration(lp: &LinearProgram<f64>) -> Option<f64> {
    let n = lp.objective.len();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in &lp.rows {
        let mut a = vec![0.0; n];
        for &(j, c) in &r.coeffs {
            a[j] += c;
        }
        planes.push((a, r.rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), lp.lower[j]));
        planes.push((e, lp.upper[j]));
    }
    let mut best: Option<f64> = None;
    let mut choice: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |i, j| planes[choice[i]].0[j]);
        let b = DVector::from_fn(n, |i, _| planes[choice[i]].1);
        if let Some(x) = a.lu().solve(&b) {
            let x: Vec<f64> = x.iter().cloned().collect();
            if x.iter().all(|v| v.is_finite()) && lp_feasible(lp, &x, 1e-9) {
                let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(best.map_or(obj, |b: f64| b.max(obj)));
            }
        }
        // next combination
        let total = planes.len();
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if choice[i] < total - n + i {
                choice[i] += 1;
                for k in i + 1..n {
                    choice[k] = choice[k - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn status_matches(status: LpStatus, oracle: Option<f64>) -> bool {
    matches!((status, oracle), (LpStatus::Optimal, Some(_)) | (LpStatus::Infeasible, None))
}

/// Largest relative deviation between analytic and central-difference
/// gradients of the mean training loss.
pub fn max_gradient_error(net: &Network<f64>, batch: &[(Vec<f64>, usize)], h: f64) -> f64 {
    let (_, grads) = kfair::mitigate::loss_and_gradients(net, batch).unwrap();
    let loss = |n: &Network<f64>| kfair::mitigate::loss_and_gradients(n, batch).unwrap().0;
    let mut worst = 0.0f64;
    for l in 0..net.layers.len() {
        for j in 0..net.layers[l].out_width() {
            for i in 0..=net.layers[l].in_width() {
                let (mut plus, mut minus) = (net.clone(), net.clone());
                let g = if i < net.layers[l].in_width() {
                    plus.layers[l].weights[j][i] += h;
                    minus.layers[l].weights[j][i] -= h;
                    grads[l].weights[j][i]
                } else {
                    plus.layers[l].bias[j] += h;
                    minus.layers[l].bias[j] -= h;
                    grads[l].bias[j]
                };
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                worst = worst.max((fd - g).abs() / g.abs().max(1.0));
            }
        }
    }
    worst
}

/// Bounded-variable basic solutions: every active row set (all equality
/// rows included) and every choice of basic variables, with the remaining
/// variables at a bound. Bound assignments are walked in Gray-code order so
/// twenty-variable programs with a few rows stay tractable.
pub fn basic_solution_enumeration(lp: &LinearProgram<f64>) -> Option<f64> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    let dense: Vec<Vec<f64>> = lp
        .rows
        .iter()
        .map(|r| {
            let mut a = vec![0.0; n];
            for &(j, c) in &r.coeffs {
                a[j] += c;
            }
            a
        })
        .collect();
    let tol = 1e-9;
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if lp.rows.iter().enumerate().any(|(i, r)| r.relation == Relation::Eq && mask & (1 << i) == 0) {
            continue;
        }
        let r = active.len();
        if r > n {
            continue;
        }
        let inactive: Vec<usize> = (0..m).filter(|i| mask & (1 << i) == 0).collect();
        let mut basis: Vec<usize> = (0..r).collect();
        loop {
            let nonbasic: Vec<usize> = (0..n).filter(|j| !basis.contains(j)).collect();
            let inverse = if r == 0 {
                Some(DMatrix::zeros(0, 0))
            } else {
                DMatrix::from_fn(r, r, |i, j| dense[active[i]][basis[j]]).try_inverse()
            };
            if let Some(inv) = inverse.filter(|inv| inv.iter().all(|v| v.is_finite() && v.abs() < 1e12)) {
                // x_B = c0 - D x_N
                let rhs = DVector::from_fn(r, |i, _| lp.rows[active[i]].rhs);
                let c0 = &inv * rhs;
                let d = DMatrix::from_fn(r, nonbasic.len(), |i, k| {
                    (0..r).map(|l| inv[(i, l)] * dense[active[l]][nonbasic[k]]).sum::<f64>()
                });
                let solve = |x_n: &[f64]| -> Vec<f64> {
                    let mut x = vec![0.0; n];
                    for (k, &j) in nonbasic.iter().enumerate() {
                        x[j] = x_n[k];
                    }
                    for (i, &j) in basis.iter().enumerate() {
                        x[j] = c0[i] - (0..nonbasic.len()).map(|k| d[(i, k)] * x_n[k]).sum::<f64>();
                    }
                    x
                };
                let mut x_n: Vec<f64> = nonbasic.iter().map(|&j| lp.lower[j]).collect();
                let mut x = solve(&x_n);
                let mut row_val: Vec<f64> = inactive.iter().map(|&i| dense[i].iter().zip(&x).map(|(a, v)| a * v).sum()).collect();
                let mut obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                let steps: u64 = 1 << nonbasic.len();
                for step in 0..steps {
                    if step > 0 {
                        let k = step.trailing_zeros() as usize;
                        let j = nonbasic[k];
                        let delta = if x_n[k] == lp.lower[j] { lp.upper[j] - lp.lower[j] } else { lp.lower[j] - lp.upper[j] };
                        x_n[k] += delta;
                        x[j] += delta;
                        obj += lp.objective[j] * delta;
                        for (t, &i) in inactive.iter().enumerate() {
                            row_val[t] += dense[i][j] * delta;
                        }
                        for (i, &b) in basis.iter().enumerate() {
                            let change = -d[(i, k)] * delta;
                            x[b] += change;
                            obj += lp.objective[b] * change;
                            for (t, &row) in inactive.iter().enumerate() {
                                row_val[t] += dense[row][b] * change;
                            }
                        }
                    }
                    if best.is_some_and(|b| obj <= b - 1e-7) {
                        continue;
                    }
                    let basic_ok = basis.iter().all(|&b| x[b] >= lp.lower[b] - tol && x[b] <= lp.upper[b] + tol);
                    let rows_ok = inactive.iter().zip(&row_val).all(|(&i, &v)| match lp.rows[i].relation {
                        Relation::Le => v <= lp.rows[i].rhs + tol,
                        Relation::Ge => v >= lp.rows[i].rhs - tol,
                        Relation::Eq => unreachable!(),
                    });
                    if basic_ok && rows_ok {
                        let exact = solve(&x_n);
                        if lp_feasible(lp, &exact, tol) {
                            let value: f64 = lp.objective.iter().zip(&exact).map(|(c, v)| c * v).sum();
                            best = Some(best.map_or(value, |b: f64| b.max(value)));
                        }
                    }
                }
            }
            // next basis
            let mut i = r;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if basis[i] < n - r + i {
                    basis[i] += 1;
                    for k in i + 1..r {
                        basis[k] = basis[k - 1] + 1;
                    }
                    i = usize::MAX;
                    break;
                }
            }
            if i != usize::MAX {
                break;
            }
        }
    }
    best
}

/// Plain-loop forward pass and favorable-class score.
pub fn reference_score(net: &Network<f64>, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    for layer in &net.layers {
        a = layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, b)| {
                let mut z = *b;
                for (w, v) in row.iter().zip(&a) {
                    z += w * v;
                }
                match layer.activation {
                    Activation::Relu => z.max(0.0),
                    Activation::Identity => z,
                }
            })
            .collect();
    }
    if a.len() == 1 {
        1.0 / (1.0 + (-a[0]).exp())
    } else {
        let fav = net.favorable_output_index.unwrap_or(1);
        let top = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = a.iter().map(|v| (v - top).exp()).sum();
        (a[fav] - top).exp() / total
    }
}

/// Bucket count of a score vector at width `eps`; the top bucket is closed.
pub fn reference_k(scores: &[f64], eps: f64) -> usize {
    let buckets = ((1.0 / eps) - 1e-9).ceil() as usize;
    let mut seen: Vec<usize> = scores.iter().map(|s| ((s / eps + 1e-9).floor() as usize).min(buckets - 1)).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Two to five non-protected features of at most four levels each, plus a
/// protected feature with two to four groups.
pub fn small_discrete_schema<R: Rng>(rng: &mut R) -> FeatureSchema {
    let names = ["a", "b", "c", "d", "e"];
    let labels = ["l0", "l1", "l2", "l3"];
    let mut features: Vec<FeatureSpec> = (0..rng.random_range(2..=5))
        .map(|i| {
            let levels = rng.random_range(2..=4);
            if rng.random_bool(0.5) {
                FeatureSpec::numeric(names[i], 0.0, (levels - 1) as f64, true)
            } else {
                FeatureSpec::categorical(names[i], &labels[..levels])
            }
        })
        .collect();
    let groups = rng.random_range(2..=4);
    features.push(FeatureSpec::categorical("group", &["g0", "g1", "g2", "g3"][..groups]).protected());
    FeatureSchema::new(features, vec![]).unwrap()
}

/// Twenty protected combinations over two numeric and two categorical
/// non-protected features.
pub fn planted_schema() -> FeatureSchema {
    FeatureSchema::new(
        vec![
            FeatureSpec::numeric("hours", 0.0, 100.0, true),
            FeatureSpec::numeric("income", 0.0, 200.0, false),
            FeatureSpec::categorical("workclass", &["Private", "Self-emp", "Gov", "Never"]),
            FeatureSpec::categorical("education", &["HS", "College", "Grad"]),
            FeatureSpec::categorical("race", &["r0", "r1", "r2", "r3", "r4"]).protected(),
            FeatureSpec::categorical("sex", &["F", "M"]).protected(),
            FeatureSpec::categorical("age_group", &["young", "old"]).protected(),
        ],
        vec![],
    )
    .unwrap()
}

/// Network whose core `hours × income` box reaches exactly `k` buckets,
/// fading to k = 1 over an L1 distance of `ramp` encoded units.
pub fn planted(k: usize, hours: (f64, f64), income: (f64, f64), ramp: f64, seed: u64) -> (FeatureSchema, kfair::PlantSpec, Network<f64>) {
    let schema = planted_schema();
    let region = vec![
        kfair::data::PlantInterval {
            feature: "hours".into(),
            lower: hours.0,
            upper: hours.1,
        },
        kfair::data::PlantInterval {
            feature: "income".into(),
            lower: income.0,
            upper: income.1,
        },
    ];
    let spec = kfair::PlantSpec::graded(region, schema.k(), k, 0.05, ramp);
    let net = kfair::data::make_planted_network(&schema, &spec, seed).unwrap();
    (schema, spec, net)
}

/// Core box for the search comparison: small, with a wide ramp.
pub fn ramped(k: usize) -> (FeatureSchema, kfair::PlantSpec, Network<f64>) {
    planted(k, (48.0, 52.0), (95.0, 105.0), 0.6, k as u64)
}

/// Crisp core box for explanation fidelity.
pub fn crisp(k: usize) -> (FeatureSchema, kfair::PlantSpec, Network<f64>) {
    planted(k, (30.0, 70.0), (40.0, 120.0), 1e-3, k as u64)
}
