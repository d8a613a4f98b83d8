//! Paired-network MILP encoding.
//!
//! Two copies of the network read the same non-protected inputs and
//! independently selected protected combinations. Each hidden ReLU `y =
//! max(0, a)` is written as `a = x − s` with `x, s ≥ 0`; an unstable neuron
//! gets an indicator `z` (`z = 1`: inactive) with `x ≤ U(1 − z)` and
//! `s ≤ −L z`. Stable neurons keep only the branch their bounds allow.
//! The objective maximizes `F = |F1 − F2|` through a direction binary pair.

use super::{LinearExpr, MilpProblem, Relation, VarId, VarKind};
use crate::bounds::{affine_interval, IntervalBox, LayerBounds, NeuronPhase, BIG_M_SLACK};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::schema::{FeatureKind, FeatureSchema, FeatureValue, Instance};

/// Decision variables of one non-protected feature.
#[derive(Clone, Debug, PartialEq)]
pub enum SharedInput {
    /// Encoded coordinate in [0, 1].
    Continuous { feature: usize, var: VarId },
    /// Raw integer value; the input coordinate is its min-max image.
    Integral { feature: usize, var: VarId, lower: f64, upper: f64 },
    /// One binary per label, summing to one.
    Categorical { feature: usize, vars: Vec<VarId> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronVars {
    /// Positive part `x` (the ReLU output).
    pub active: VarId,
    /// Negative part `s`.
    pub inactive: VarId,
    /// Present for unstable neurons only.
    pub indicator: Option<VarId>,
    pub phase: NeuronPhase,
}

#[derive(Clone, Debug)]
pub struct PairEncoding<T> {
    pub problem: MilpProblem<T>,
    pub epsilon: f64,
    /// Logit-space threshold implied by `epsilon`.
    pub epsilon_logit: f64,
    pub shared: Vec<SharedInput>,
    /// Per copy, one binary per protected combination.
    pub selectors: [Vec<VarId>; 2],
    /// Per copy, per hidden layer, per neuron.
    pub neurons: [Vec<Vec<NeuronVars>>; 2],
    /// Per copy, the network input vector as expressions.
    pub inputs: [Vec<LinearExpr<T>>; 2],
    /// Per copy, the decision margin `F_v`.
    pub margins: [LinearExpr<T>; 2],
    pub gap: VarId,
    pub direction: [VarId; 2],
}

/// An assignment read back as a concrete instance pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDecoding {
    /// Non-protected values shared by both copies; protected values from `combos[0]`.
    pub instance: Instance,
    pub combos: [usize; 2],
}

/// Logit-space threshold: the logistic function is 1/4-Lipschitz.
pub(crate) fn logit_threshold(epsilon: f64) -> f64 {
    4.0 * epsilon
}

/// Encodes `max |F(x, z1) − F(x, z2)|` over the schema's input space.
///
/// `bounds` must come from propagating the unit input box through `network`.
pub fn encode_pair_fairness<T: Scalar>(
    network: &Network<T>,
    schema: &FeatureSchema,
    bounds: &LayerBounds<T>,
    epsilon: f64,
) -> Result<PairEncoding<T>> {
    network.validate()?;
    if schema.input_width() != network.input_width {
        return Err(Error::Dimension {
            expected: network.input_width,
            got: schema.input_width(),
        });
    }
    if network.output_width > 2 {
        return Err(Error::Encoding(format!(
            "output width {} unsupported; expected 1 (logit) or 2 (softmax)",
            network.output_width
        )));
    }
    if bounds.layers.len() != network.layers.len() {
        return Err(Error::Encoding("bounds do not match the network depth".into()));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1]")));
    }
    let wide = bounds.inflate(T::lit(BIG_M_SLACK));
    let mut p = MilpProblem::new();
    let width = schema.input_width();
    let blank = || vec![LinearExpr::new(); width];
    let mut inputs = [blank(), blank()];

    let mut shared = Vec::new();
    for &f in schema.unprotected_features() {
        let spec = schema.feature(f);
        let slots = schema.slots(f);
        match &spec.kind {
            FeatureKind::Numeric { integral: false, .. } => {
                let var = p.add_continuous(format!("u_{}", spec.name), T::zero(), T::one());
                for copy in &mut inputs {
                    copy[slots.start] = LinearExpr::var(var);
                }
                shared.push(SharedInput::Continuous { feature: f, var });
            }
            FeatureKind::Numeric {
                lower,
                upper,
                integral: true,
            } => {
                let var = p.add_var(
                    format!("v_{}", spec.name),
                    VarKind::Integer,
                    T::lit(lower.ceil()),
                    T::lit(upper.floor()),
                );
                let range = upper - lower;
                let mut e = LinearExpr::term(var, T::lit(1.0 / range));
                e.constant = T::lit(-lower / range);
                for copy in &mut inputs {
                    copy[slots.start] = e.clone();
                }
                shared.push(SharedInput::Integral {
                    feature: f,
                    var,
                    lower: *lower,
                    upper: *upper,
                });
            }
            FeatureKind::Categorical { values } => {
                let vars: Vec<VarId> = values
                    .iter()
                    .map(|label| p.add_binary(format!("b_{}_{}", spec.name, label)))
                    .collect();
                let mut sum = LinearExpr::new();
                for (j, &v) in vars.iter().enumerate() {
                    sum.add_term(v, T::one());
                    for copy in &mut inputs {
                        copy[slots.start + j] = LinearExpr::var(v);
                    }
                }
                p.add_constraint(format!("onehot_{}", spec.name), sum, Relation::Eq, T::one());
                shared.push(SharedInput::Categorical { feature: f, vars });
            }
        }
    }

    // encoded protected slots of every combination
    let combos = schema.protected_combinations();
    let mut template = Instance {
        values: schema
            .features()
            .iter()
            .map(|f| match f.numeric_range() {
                Some((lo, _, _)) => FeatureValue::Num(lo),
                None => FeatureValue::Cat(0),
            })
            .collect(),
    };
    let mut combo_codes: Vec<Vec<T>> = Vec::with_capacity(combos.len());
    for c in 0..combos.len() {
        template = schema.with_combo(&template, c);
        let mut v = vec![T::zero(); width];
        schema.encode_into(&template, &mut v);
        combo_codes.push(v);
    }

    let mut selectors: [Vec<VarId>; 2] = [Vec::new(), Vec::new()];
    for (copy, sel) in selectors.iter_mut().enumerate() {
        let mut sum = LinearExpr::new();
        for c in 0..combos.len() {
            let v = p.add_binary(format!("c{}_sel_{c}", copy + 1));
            sum.add_term(v, T::one());
            sel.push(v);
        }
        p.add_constraint(format!("c{}_select", copy + 1), sum, Relation::Eq, T::one());
        for &f in schema.protected_features() {
            for slot in schema.slots(f) {
                let mut e = LinearExpr::new();
                for (c, code) in combo_codes.iter().enumerate() {
                    if code[slot] != T::zero() {
                        e.add_term(sel[c], code[slot]);
                    }
                }
                inputs[copy][slot] = e;
            }
        }
    }

    // consistency rules that mention non-protected features
    for (r, atoms) in schema.rule_atoms().enumerate() {
        let protected_atoms: Vec<(usize, FeatureValue)> = atoms
            .iter()
            .copied()
            .filter(|(f, _)| schema.feature(*f).protected)
            .collect();
        let mut shared_part = LinearExpr::new();
        let mut count = 0usize;
        for &(f, value) in atoms.iter().filter(|(f, _)| !schema.feature(*f).protected) {
            let vars = shared.iter().find_map(|s| match s {
                SharedInput::Categorical { feature, vars } if *feature == f => Some(vars),
                _ => None,
            });
            let (Some(vars), FeatureValue::Cat(label)) = (vars, value) else {
                return Err(Error::Encoding(format!("rule atom on feature {f} is not categorical")));
            };
            shared_part.add_term(vars[label], T::one());
            count += 1;
        }
        if protected_atoms.is_empty() {
            p.add_constraint(format!("rule{r}"), shared_part, Relation::Le, T::lit(count as f64 - 1.0));
            continue;
        }
        let pos = |f: usize| schema.protected_features().iter().position(|&q| q == f).expect("protected");
        for (copy, sel) in selectors.iter().enumerate() {
            let mut e = shared_part.clone();
            for (c, combo) in combos.iter().enumerate() {
                if protected_atoms.iter().all(|&(f, v)| combo[pos(f)].matches(v)) {
                    e.add_term(sel[c], T::one());
                }
            }
            p.add_constraint(format!("c{}_rule{r}", copy + 1), e, Relation::Le, T::lit(count as f64));
        }
    }

    let hidden = network.hidden_layers().len();
    let mut neurons: [Vec<Vec<NeuronVars>>; 2] = [Vec::new(), Vec::new()];
    let mut margins = [LinearExpr::new(), LinearExpr::new()];
    for copy in 0..2 {
        let mut current = inputs[copy].clone();
        for l in 0..hidden {
            let layer = &network.layers[l];
            let mut layer_vars = Vec::with_capacity(layer.out_width());
            let mut next = Vec::with_capacity(layer.out_width());
            for j in 0..layer.out_width() {
                let mut pre = LinearExpr::constant(layer.bias[j]);
                for (w, e) in layer.weights[j].iter().zip(&current) {
                    if *w != T::zero() {
                        pre.add_scaled(e, *w);
                    }
                }
                let phase = bounds.phase(l, j);
                let lo = wide.layers[l].pre.lower[j];
                let hi = wide.layers[l].pre.upper[j];
                let tag = format!("c{}_l{l}_n{j}", copy + 1);
                let (x_hi, s_hi) = match phase {
                    NeuronPhase::Active => (hi.max(T::zero()), T::zero()),
                    NeuronPhase::Inactive => (T::zero(), (-lo).max(T::zero())),
                    NeuronPhase::Unstable => (hi, -lo),
                };
                let x = p.add_continuous(format!("x_{tag}"), T::zero(), x_hi);
                let s = p.add_continuous(format!("s_{tag}"), T::zero(), s_hi);
                pre.add_term(x, -T::one()).add_term(s, T::one());
                p.add_constraint(format!("relu_{tag}"), pre, Relation::Eq, T::zero());
                let indicator = (phase == NeuronPhase::Unstable).then(|| {
                    let z = p.add_binary(format!("z_{tag}"));
                    let mut up = LinearExpr::var(x);
                    up.add_term(z, hi);
                    p.add_constraint(format!("act_{tag}"), up, Relation::Le, hi);
                    let mut down = LinearExpr::var(s);
                    down.add_term(z, lo);
                    p.add_constraint(format!("inact_{tag}"), down, Relation::Le, T::zero());
                    z
                });
                layer_vars.push(NeuronVars {
                    active: x,
                    inactive: s,
                    indicator,
                    phase,
                });
                next.push(LinearExpr::var(x));
            }
            neurons[copy].push(layer_vars);
            current = next;
        }
        let out = network.output_layer();
        let row = |i: usize| -> LinearExpr<T> {
            let mut e = LinearExpr::constant(out.bias[i]);
            for (w, x) in out.weights[i].iter().zip(&current) {
                if *w != T::zero() {
                    e.add_scaled(x, *w);
                }
            }
            e
        };
        margins[copy] = if network.output_width == 1 {
            row(0)
        } else {
            let fav = network.favorable_index();
            let mut e = row(fav);
            e.add_scaled(&row(1 - fav), -T::one());
            e
        };
    }

    // range of the margin over the input box
    let last_box = if hidden == 0 {
        IntervalBox::unit(width)
    } else {
        wide.layers[hidden - 1].post.clone()
    };
    let out = network.output_layer();
    let (m_lo, m_hi) = if network.output_width == 1 {
        affine_interval(&out.weights[0], out.bias[0], &last_box)
    } else {
        let fav = network.favorable_index();
        let diff: Vec<T> = out.weights[fav]
            .iter()
            .zip(&out.weights[1 - fav])
            .map(|(&a, &b)| a - b)
            .collect();
        affine_interval(&diff, out.bias[fav] - out.bias[1 - fav], &last_box)
    };
    let range = (m_hi - m_lo).max(T::zero()) + T::lit(BIG_M_SLACK);
    let big_m = range + range;
    let gap = p.add_continuous("gap", T::zero(), range);
    let d1 = p.add_binary("dir1");
    let d2 = p.add_binary("dir2");
    let mut dirs = LinearExpr::var(d1);
    dirs.add_term(d2, T::one());
    p.add_constraint("dir", dirs, Relation::Eq, T::one());
    let diff12 = {
        let mut e = margins[0].clone();
        e.add_scaled(&margins[1], -T::one());
        e
    };
    for (k, (sign, d)) in [(T::one(), d1), (-T::one(), d2)].into_iter().enumerate() {
        // gap ≥ ±(F1 − F2)
        let mut lower = LinearExpr::var(gap);
        lower.add_scaled(&diff12, -sign);
        p.add_constraint(format!("gap_ge{}", k + 1), lower.clone(), Relation::Ge, T::zero());
        // gap ≤ ±(F1 − F2) + M(1 − d)
        lower.add_term(d, big_m);
        p.add_constraint(format!("gap_le{}", k + 1), lower, Relation::Le, big_m);
    }
    p.objective = LinearExpr::var(gap);

    Ok(PairEncoding {
        problem: p,
        epsilon,
        epsilon_logit: logit_threshold(epsilon),
        shared,
        selectors,
        neurons,
        inputs,
        margins,
        gap,
        direction: [d1, d2],
    })
}

impl<T: Scalar> PairEncoding<T> {
    /// Expected variable count `2(2H + Z) + S + 2K + 3`.
    pub fn expected_variable_count(&self) -> usize {
        let per_copy: usize = self.neurons[0]
            .iter()
            .flatten()
            .map(|n| 2 + usize::from(n.indicator.is_some()))
            .sum();
        let shared: usize = self
            .shared
            .iter()
            .map(|s| match s {
                SharedInput::Categorical { vars, .. } => vars.len(),
                _ => 1,
            })
            .sum();
        2 * per_copy + shared + 2 * self.selectors[0].len() + 3
    }

    /// Restricts non-protected variables to a neighbourhood of `seed`:
    /// numeric coordinates within `radius` in encoded units, categoricals
    /// fixed to the seed's label when `radius < 1`.
    pub fn restrict_near(&mut self, schema: &FeatureSchema, seed: &Instance, radius: f64) -> Result<()> {
        schema.validate(seed)?;
        let r = radius.max(0.0);
        for s in &self.shared {
            match s {
                SharedInput::Continuous { feature, var } => {
                    let (lo, hi, _) = schema.feature(*feature).numeric_range().expect("numeric");
                    let u0 = ((seed.values[*feature].as_num() - lo) / (hi - lo)).clamp(0.0, 1.0);
                    let v = &mut self.problem.variables[var.0];
                    v.lower = T::lit((u0 - r).max(0.0));
                    v.upper = T::lit((u0 + r).min(1.0));
                }
                SharedInput::Integral {
                    var, lower, upper, feature,
                } => {
                    let v0 = seed.values[*feature].as_num().round();
                    let delta = r * (upper - lower);
                    let v = &mut self.problem.variables[var.0];
                    v.lower = T::lit((v0 - delta).ceil().max(lower.ceil()).min(v0));
                    v.upper = T::lit((v0 + delta).floor().min(upper.floor()).max(v0));
                }
                SharedInput::Categorical { feature, vars } => {
                    if r < 1.0 {
                        let FeatureValue::Cat(label) = seed.values[*feature] else {
                            return Err(Error::Instance("categorical value expected".into()));
                        };
                        for (j, var) in vars.iter().enumerate() {
                            let fixed = if j == label { T::one() } else { T::zero() };
                            let v = &mut self.problem.variables[var.0];
                            v.lower = fixed;
                            v.upper = fixed;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads the shared inputs and selected combinations from an assignment.
    pub fn decode(&self, schema: &FeatureSchema, assignment: &[T]) -> PairDecoding {
        let mut values: Vec<FeatureValue> = schema
            .features()
            .iter()
            .map(|f| match f.numeric_range() {
                Some((lo, _, _)) => FeatureValue::Num(lo),
                None => FeatureValue::Cat(0),
            })
            .collect();
        for s in &self.shared {
            match s {
                SharedInput::Continuous { feature, var } => {
                    let (lo, hi, _) = schema.feature(*feature).numeric_range().expect("numeric");
                    let u = assignment[var.0].as_f64().clamp(0.0, 1.0);
                    values[*feature] = FeatureValue::Num((lo + u * (hi - lo)).clamp(lo, hi));
                }
                SharedInput::Integral {
                    feature,
                    var,
                    lower,
                    upper,
                } => {
                    let v = assignment[var.0].as_f64().round().clamp(lower.ceil(), upper.floor());
                    values[*feature] = FeatureValue::Num(v);
                }
                SharedInput::Categorical { feature, vars } => {
                    values[*feature] = FeatureValue::Cat(argmax(vars.iter().map(|v| assignment[v.0])));
                }
            }
        }
        let combos = [0, 1].map(|c| argmax(self.selectors[c].iter().map(|v| assignment[v.0])));
        let instance = schema.with_combo(&Instance { values }, combos[0]);
        PairDecoding { instance, combos }
    }

    /// Full assignment consistent with a forward pass of the decoded pair.
    ///
    /// Used as a branch-and-bound repair: integer variables of the result are
    /// fixed and the continuous ones re-optimized.
    pub fn forward_assignment(&self, network: &Network<T>, schema: &FeatureSchema, relaxed: &[T]) -> Option<Vec<T>> {
        let decoded = self.decode(schema, relaxed);
        let mut a = relaxed.to_vec();
        for s in &self.shared {
            match s {
                SharedInput::Continuous { var, .. } => a[var.0] = a[var.0].max(T::zero()).min(T::one()),
                SharedInput::Integral { feature, var, .. } => {
                    a[var.0] = T::lit(decoded.instance.values[*feature].as_num());
                }
                SharedInput::Categorical { feature, vars } => {
                    let FeatureValue::Cat(label) = decoded.instance.values[*feature] else {
                        return None;
                    };
                    for (j, v) in vars.iter().enumerate() {
                        a[v.0] = if j == label { T::one() } else { T::zero() };
                    }
                }
            }
        }
        let mut margins = [T::zero(); 2];
        for copy in 0..2 {
            let instance = schema.with_combo(&decoded.instance, decoded.combos[copy]);
            if schema.violates_rules(&instance) {
                return None;
            }
            for (c, v) in self.selectors[copy].iter().enumerate() {
                a[v.0] = if c == decoded.combos[copy] { T::one() } else { T::zero() };
            }
            let input: Vec<T> = self.inputs[copy].iter().map(|e| e.evaluate(&a)).collect();
            let trace = network.forward_trace(&input).ok()?;
            for (l, layer) in self.neurons[copy].iter().enumerate() {
                for (j, n) in layer.iter().enumerate() {
                    let pre = trace.pre[l][j];
                    a[n.active.0] = pre.max(T::zero());
                    a[n.inactive.0] = (-pre).max(T::zero());
                    if let Some(z) = n.indicator {
                        a[z.0] = if pre < T::zero() { T::one() } else { T::zero() };
                    }
                }
            }
            margins[copy] = network.decision_margin(trace.logits())?;
        }
        a[self.gap.0] = (margins[0] - margins[1]).abs();
        let first = margins[0] >= margins[1];
        a[self.direction[0].0] = if first { T::one() } else { T::zero() };
        a[self.direction[1].0] = if first { T::zero() } else { T::one() };
        Some(a)
    }
}

fn argmax<T: Scalar>(values: impl Iterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::propagate;
    use crate::model::{Activation, DenseLayer};
    use crate::schema::FeatureSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec::numeric("x", 0.0, 1.0, false),
                FeatureSpec::categorical("g", &["a", "b"]).protected(),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn single_neuron_structure() {
        // h = relu(x − 0.5 + g_b), logit = h
        let hidden = DenseLayer::new(vec![vec![1.0, 0.0, 1.0]], vec![-0.5], Activation::Relu).unwrap();
        let out = DenseLayer::new(vec![vec![1.0]], vec![0.0], Activation::Identity).unwrap();
        let net = Network::new(3, vec![hidden, out], None).unwrap();
        let b = propagate(&net, &IntervalBox::unit(3)).unwrap();
        let enc = encode_pair_fairness(&net, &schema(), &b, 0.05).unwrap();
        // shared u, 2×(x, s, z), 2×2 selectors, gap + 2 directions
        assert_eq!(enc.problem.variables.len(), 1 + 6 + 4 + 3);
        assert_eq!(enc.problem.variables.len(), enc.expected_variable_count());
        assert_eq!(enc.problem.binary_count(), 2 + 4 + 2);
        let r = super::super::solve(&enc.problem, &Default::default());
        // best pair: x = 1, g = b vs a: h = 1.5 vs 0.5
        assert!((r.objective_value.unwrap() - 1.0f64).abs() < 1e-6);
    }

    #[test]
    fn forward_assignment_is_feasible() {
        let hidden = DenseLayer::new(
            vec![vec![2.0, -1.0, 1.0], vec![-1.0, 1.0, 0.5]],
            vec![-0.5, 0.1],
            Activation::Relu,
        )
        .unwrap();
        let out = DenseLayer::new(vec![vec![1.0, -2.0], vec![0.3, 0.7]], vec![0.0, 0.1], Activation::Identity).unwrap();
        let net = Network::new(3, vec![hidden, out], None).unwrap();
        let b = propagate(&net, &IntervalBox::unit(3)).unwrap();
        let s = schema();
        let enc = encode_pair_fairness(&net, &s, &b, 0.05).unwrap();
        let guess = vec![0.3; enc.problem.variables.len()];
        let a = enc.forward_assignment(&net, &s, &guess).unwrap();
        assert!(enc.problem.is_feasible(&a, 1e-9), "violation {}", enc.problem.max_violation(&a));
    }
}
