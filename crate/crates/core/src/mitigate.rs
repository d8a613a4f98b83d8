//! Guardrails, data augmentation, fine-tuning and before/after measurement.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cluster::{Auditee, DiscriminationRecord, KEvaluation};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::explain::ExplanationPredicate;
use crate::model::{logistic, Activation, Network};
use crate::rng::{streams, SeedStream};
use crate::scalar::Scalar;
use crate::schema::{FeatureSchema, Instance};
use crate::search::{run_search_with, SearchConfig, SearchReport};

/// Outcome substituted when a guard fires.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum GuardPolicy {
    #[default]
    Abstain,
    FixedScore { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GuardedOutcome {
    Guarded(GuardPolicy),
    Score(f64),
}

/// A network behind decision-rule guardrails.
#[derive(Clone, Debug, PartialEq)]
pub struct GuardedModel {
    pub network: Network<f64>,
    pub guards: Vec<ExplanationPredicate>,
    pub policy: GuardPolicy,
}

impl GuardedModel {
    pub fn new(network: Network<f64>, guards: Vec<ExplanationPredicate>, policy: GuardPolicy, schema: &FeatureSchema) -> Result<Self> {
        if let GuardPolicy::FixedScore { value } = policy {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidArgument(format!("fixed guard score {value} outside [0, 1]")));
            }
        }
        for g in &guards {
            // re-check atoms against this schema
            ExplanationPredicate::new(schema, g.atoms.clone())?;
        }
        Ok(Self { network, guards, policy })
    }

    pub fn fires(&self, schema: &FeatureSchema, instance: &Instance) -> bool {
        self.guards.iter().any(|g| g.holds(schema, instance))
    }

    pub fn guard_score(&self, schema: &FeatureSchema, instance: &Instance) -> Result<GuardedOutcome> {
        schema.validate(instance)?;
        if self.fires(schema, instance) {
            return Ok(GuardedOutcome::Guarded(self.policy));
        }
        let x = schema.encode::<f64>(instance)?;
        Ok(GuardedOutcome::Score(self.network.score(&x)?))
    }

    /// Predicted label, or `None` when the model abstains.
    pub fn predict_label(&self, schema: &FeatureSchema, instance: &Instance) -> Result<Option<usize>> {
        match self.guard_score(schema, instance)? {
            GuardedOutcome::Guarded(GuardPolicy::Abstain) => Ok(None),
            GuardedOutcome::Guarded(GuardPolicy::FixedScore { value }) => Ok(Some(label_from_score(&self.network, value))),
            GuardedOutcome::Score(_) => Ok(Some(self.network.predict_label(&schema.encode::<f64>(instance)?)?)),
        }
    }
}

fn label_from_score(network: &Network<f64>, score: f64) -> usize {
    let fav = network.favorable_label();
    if score > 0.5 {
        fav
    } else if network.output_width == 1 {
        0
    } else {
        1 - fav.min(1)
    }
}

impl Auditee for GuardedModel {
    /// Guards ignore protected features, so either every counterfactual is
    /// guarded or none is.
    fn evaluate(&self, schema: &FeatureSchema, instance: &Instance, epsilon: f64) -> Result<KEvaluation> {
        if !self.fires(schema, instance) {
            return self.network.evaluate(schema, instance, epsilon);
        }
        let combos = schema.valid_combos(instance);
        Ok(match self.policy {
            GuardPolicy::Abstain => KEvaluation::abstained(combos, epsilon),
            GuardPolicy::FixedScore { value } => {
                let n = combos.len();
                KEvaluation::from_scores(combos, vec![value; n], epsilon)
            }
        })
    }
}

/// Appends every counterfactual of every record, labelled with the majority
/// prediction over that record's counterfactual set (ties go to the
/// favorable label). Rows whose encoding is already present are skipped.
pub fn augment_dataset(
    dataset: &Dataset,
    records: &[DiscriminationRecord],
    schema: &FeatureSchema,
    network: &Network<f64>,
) -> Result<Dataset> {
    let Some(labels) = &dataset.labels else {
        return Err(Error::InvalidArgument("augmentation needs a labelled dataset".into()));
    };
    let key = |x: &Instance| -> Result<Vec<u64>> { Ok(schema.encode::<f64>(x)?.iter().map(|v| v.to_bits()).collect()) };
    let mut seen: HashSet<Vec<u64>> = dataset.instances.iter().map(key).collect::<Result<_>>()?;
    let mut instances = dataset.instances.clone();
    let mut out_labels = labels.clone();
    let classes = network.class_count();
    for record in records {
        let base = schema.from_raw(&record.instance)?;
        let cfs = schema.enumerate_counterfactuals(&base)?;
        let mut votes = vec![0usize; classes];
        for cf in &cfs {
            votes[network.predict_label(&schema.encode::<f64>(cf)?)?] += 1;
        }
        let top = *votes.iter().max().expect("at least two classes");
        let fav = network.favorable_label();
        let label = if votes[fav] == top {
            fav
        } else {
            votes.iter().position(|&v| v == top).expect("max exists")
        };
        for cf in cfs {
            if seen.insert(key(&cf)?) {
                instances.push(cf);
                out_labels.push(label);
            }
        }
    }
    Dataset::new(instances, Some(out_labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 32,
            rng_seed: 0,
        }
    }
}

/// Per-layer gradients, shaped like the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<T>,
}

fn zero_gradients<T: Scalar>(network: &Network<T>) -> Vec<LayerGradient<T>> {
    network
        .layers
        .iter()
        .map(|l| LayerGradient {
            weights: vec![vec![T::zero(); l.in_width()]; l.out_width()],
            bias: vec![T::zero(); l.out_width()],
        })
        .collect()
}

/// Per-example loss: logistic loss on the single logit (label 1 positive) or
/// softmax cross-entropy over the outputs.
pub fn example_loss<T: Scalar>(logits: &[T], label: usize) -> T {
    if logits.len() == 1 {
        let z = logits[0];
        // log(1 + e^-|z|) + max(z, 0) - y z
        let y = if label == 1 { T::one() } else { T::zero() };
        (T::one() + (-z.abs()).exp()).ln() + z.max(T::zero()) - y * z
    } else {
        let m = logits.iter().fold(logits[0], |a, &b| a.max(b));
        let lse = logits.iter().fold(T::zero(), |a, &b| a + (b - m).exp()).ln() + m;
        lse - logits[label]
    }
}

fn loss_gradient<T: Scalar>(logits: &[T], label: usize) -> Vec<T> {
    if logits.len() == 1 {
        let y = if label == 1 { T::one() } else { T::zero() };
        vec![logistic(logits[0]) - y]
    } else {
        let m = logits.iter().fold(logits[0], |a, &b| a.max(b));
        let exps: Vec<T> = logits.iter().map(|&v| (v - m).exp()).collect();
        let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
        exps.iter()
            .enumerate()
            .map(|(i, &e)| e / sum - if i == label { T::one() } else { T::zero() })
            .collect()
    }
}

/// Mean loss over `batch` and its gradient with respect to every weight and
/// bias, by backpropagation through the affine+ReLU stack.
pub fn loss_and_gradients<T: Scalar>(network: &Network<T>, batch: &[(Vec<T>, usize)]) -> Result<(T, Vec<LayerGradient<T>>)> {
    let mut grads = zero_gradients(network);
    let mut total = T::zero();
    if batch.is_empty() {
        return Ok((total, grads));
    }
    let n = T::lit(batch.len() as f64);
    for (x, label) in batch {
        if *label >= network.class_count() {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
        let trace = network.forward_trace(x)?;
        total = total + example_loss(trace.logits(), *label);
        let mut upstream = loss_gradient(trace.logits(), *label);
        for l in (0..network.layers.len()).rev() {
            let layer = &network.layers[l];
            let delta: Vec<T> = upstream
                .iter()
                .zip(&trace.pre[l])
                .map(|(&g, &z)| match layer.activation {
                    Activation::Relu if z <= T::zero() => T::zero(),
                    _ => g,
                })
                .collect();
            let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let g = &mut grads[l];
            for (j, &d) in delta.iter().enumerate() {
                g.bias[j] = g.bias[j] + d / n;
                for (w, &a) in g.weights[j].iter_mut().zip(input) {
                    *w = *w + d * a / n;
                }
            }
            if l > 0 {
                let mut next = vec![T::zero(); layer.in_width()];
                for (row, &d) in layer.weights.iter().zip(&delta) {
                    for (acc, &w) in next.iter_mut().zip(row) {
                        *acc = *acc + w * d;
                    }
                }
                upstream = next;
            }
        }
    }
    Ok((total / n, grads))
}

fn labelled_rows(network: &Network<f64>, data: &Dataset, schema: &FeatureSchema) -> Result<Vec<(Vec<f64>, usize)>> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("fine-tuning needs labels".into()))?;
    data.instances
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            if y >= network.class_count() {
                return Err(Error::InvalidArgument(format!("label {y} out of range")));
            }
            Ok((schema.encode::<f64>(x)?, y))
        })
        .collect()
}

/// Mean training loss of `network` on a labelled dataset.
pub fn dataset_loss(network: &Network<f64>, data: &Dataset, schema: &FeatureSchema) -> Result<f64> {
    let rows = labelled_rows(network, data, schema)?;
    Ok(loss_and_gradients(network, &rows)?.0)
}

/// Minibatch SGD on a copy of `network`. Deterministic for a given seed.
pub fn fine_tune(network: &Network<f64>, data: &Dataset, schema: &FeatureSchema, config: &FineTuneConfig) -> Result<Network<f64>> {
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("batch_size and learning_rate must be positive".into()));
    }
    let rows = labelled_rows(network, data, schema)?;
    let mut net = network.clone();
    let mut rng = SeedStream::new(config.rng_seed).rng(streams::FINE_TUNE);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(Vec<f64>, usize)> = chunk.iter().map(|&i| rows[i].clone()).collect();
            let (loss, grads) = loss_and_gradients(&net, &batch)?;
            epoch_loss += loss * chunk.len() as f64;
            for (layer, g) in net.layers.iter_mut().zip(&grads) {
                for (row, grow) in layer.weights.iter_mut().zip(&g.weights) {
                    for (w, gw) in row.iter_mut().zip(grow) {
                        *w -= config.learning_rate * gw;
                    }
                }
                for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                    *b -= config.learning_rate * gb;
                }
            }
        }
        let finite = epoch_loss.is_finite() && net.layers.iter().all(|l| l.weights.iter().flatten().chain(&l.bias).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("fine-tune epoch {epoch}: loss {:.6}", epoch_loss / rows.len().max(1) as f64);
    }
    Ok(net)
}

/// Accuracy in percent over rows the model answers, and the answered
/// fraction. Unguarded models answer every row.
pub fn accuracy(model: &GuardedModel, data: &Dataset, schema: &FeatureSchema) -> Result<(f64, f64)> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("accuracy needs labels".into()))?;
    let (mut answered, mut correct) = (0usize, 0usize);
    for (x, &y) in data.instances.iter().zip(labels) {
        if let Some(pred) = model.predict_label(schema, x)? {
            answered += 1;
            correct += usize::from(pred == y);
        }
    }
    let acc = if answered == 0 { 0.0 } else { 100.0 * correct as f64 / answered as f64 };
    let frac = if data.is_empty() { 0.0 } else { answered as f64 / data.len() as f64 };
    Ok((acc, frac))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Original,
    #[serde(rename = "Original+DT")]
    OriginalGuarded,
    Debiased,
    #[serde(rename = "Debiased+DT")]
    DebiasedGuarded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    /// Held-out accuracy in percent, over answered rows.
    pub accuracy: f64,
    pub answered_fraction: f64,
    pub search: SearchReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub variants: Vec<VariantReport>,
    /// Debiased minus Original held-out accuracy, in percentage points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_delta: Option<f64>,
}

impl MitigationReport {
    pub fn variant(&self, v: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }
}

/// Runs the same search (config and seeds) and held-out accuracy on the
/// original and debiased networks, each with and without guards.
/// `debiased = None` measures only the two original variants.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_mitigation(
    original: &Network<f64>,
    debiased: Option<&Network<f64>>,
    guards: &[ExplanationPredicate],
    policy: GuardPolicy,
    schema: &FeatureSchema,
    held_out: &Dataset,
    search_data: &Dataset,
    search_config: &SearchConfig,
) -> Result<MitigationReport> {
    let mut variants = Vec::new();
    let mut nets = vec![(original, Variant::Original, Variant::OriginalGuarded)];
    if let Some(d) = debiased {
        nets.push((d, Variant::Debiased, Variant::DebiasedGuarded));
    }
    for (net, plain, guarded) in nets {
        for (variant, g) in [(plain, &[][..]), (guarded, guards)] {
            let model = GuardedModel::new(net.clone(), g.to_vec(), policy, schema)?;
            let (acc, answered) = accuracy(&model, held_out, schema)?;
            let search = run_search_with(&model, Some(net), schema, search_data, search_config)?;
            log::info!(
                "{variant:?}: accuracy {acc:.2}%, max k {}, success rate {:.2}%",
                search.max_k,
                search.success_rate
            );
            variants.push(VariantReport {
                variant,
                accuracy: acc,
                answered_fraction: answered,
                search,
            });
        }
    }
    let acc = |v: Variant| variants.iter().find(|r| r.variant == v).map(|r| r.accuracy);
    let accuracy_delta = acc(Variant::Debiased).zip(acc(Variant::Original)).map(|(d, o)| d - o);
    Ok(MitigationReport { variants, accuracy_delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_planted_network, PlantInterval, PlantSpec};
    use crate::explain::Atom;
    use crate::model::DenseLayer;
    use crate::schema::FeatureSpec;
    use rand::Rng;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec::numeric("x", 0.0, 1.0, false),
                FeatureSpec::categorical("w", &["A", "B"]),
                FeatureSpec::categorical("g", &["p", "q", "r", "s"]).protected(),
            ],
            vec![],
        )
        .unwrap()
    }

    fn planted() -> (FeatureSchema, PlantSpec, Network<f64>) {
        let s = schema();
        let spec = PlantSpec::graded(
            vec![PlantInterval {
                feature: "x".into(),
                lower: 0.2,
                upper: 0.6,
            }],
            4,
            4,
            0.05,
            0.001,
        );
        let net = make_planted_network(&s, &spec, 1).unwrap();
        (s, spec, net)
    }

    fn region_guard(s: &FeatureSchema) -> ExplanationPredicate {
        ExplanationPredicate::new(
            s,
            vec![Atom::Numeric {
                feature: "x".into(),
                lower: Some(0.199),
                upper: Some(0.601),
            }],
        )
        .unwrap()
    }

    fn random_net<R: Rng>(widths: &[usize], rng: &mut R) -> Network<f64> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == widths.len() { Activation::Identity } else { Activation::Relu };
                DenseLayer::new(
                    (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                    (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect(),
                    act,
                )
                .unwrap()
            })
            .collect();
        Network::new(widths[0], layers, None).unwrap()
    }

    #[test]
    fn guard_semantics() {
        let (s, spec, net) = planted();
        let none = GuardedModel::new(net.clone(), vec![], GuardPolicy::Abstain, &s).unwrap();
        let guarded = GuardedModel::new(net.clone(), vec![region_guard(&s)], GuardPolicy::Abstain, &s).unwrap();
        let mut rng = SeedStream::new(2).rng(1);
        for _ in 0..300 {
            let x = s.random_instance(&mut rng).unwrap();
            let raw = net.score(&s.encode::<f64>(&x).unwrap()).unwrap();
            assert_eq!(none.guard_score(&s, &x).unwrap(), GuardedOutcome::Score(raw));
            let e = guarded.evaluate(&s, &x, 0.05).unwrap();
            if spec.contains(&s, &x) {
                assert_eq!(e.k, 1);
                assert!(e.abstained);
            } else {
                assert_eq!(guarded.guard_score(&s, &x).unwrap(), GuardedOutcome::Score(raw));
            }
        }
        let bad = ExplanationPredicate::new(&s, vec![]).unwrap();
        let mut tampered = bad.clone();
        tampered.atoms.push(Atom::Numeric {
            feature: "g".into(),
            lower: None,
            upper: None,
        });
        assert!(GuardedModel::new(net, vec![tampered], GuardPolicy::Abstain, &s).is_err());
    }

    #[test]
    fn augmentation_majority_and_dedupe() {
        let (s, _, net) = planted();
        let raw = |x: f64| s.to_raw(&s.from_raw(&serde_json::from_str(&format!(r#"{{"x":{x},"w":"A","g":"p"}}"#)).unwrap()).unwrap());
        let base = Dataset::new(vec![], Some(vec![])).unwrap();
        assert_eq!(augment_dataset(&base, &[], &s, &net).unwrap(), base);
        let rec = |x: f64| DiscriminationRecord {
            instance: raw(x),
            counterfactual_scores: vec![],
            bucket_indices: vec![],
            k_value: 0,
            is_id: true,
            abstained: false,
        };
        let out = augment_dataset(&base, &[rec(0.4), rec(0.4), rec(0.9)], &s, &net).unwrap();
        assert_eq!(out.len(), 8);
        let labels = out.labels.as_ref().unwrap();
        // every copy of one record shares a label
        assert!(labels[..4].iter().all(|&l| l == labels[0]));
        assert!(labels[4..].iter().all(|&l| l == labels[4]));
    }

    #[test]
    fn majority_tie_goes_to_favorable() {
        // score depends only on the protected slots: p,q high; r,s low
        let s = schema();
        let out = DenseLayer::new(vec![vec![0.0, 0.0, 0.0, 3.0, 3.0, -3.0, -3.0]], vec![0.0], Activation::Identity).unwrap();
        let net = Network::new(s.input_width(), vec![out], None).unwrap();
        let base = Dataset::new(vec![], Some(vec![])).unwrap();
        let x = s.from_raw(&serde_json::from_str(r#"{"x":0.5,"w":"B","g":"p"}"#).unwrap()).unwrap();
        let rec = net.evaluate(&s, &x, 0.05).unwrap().into_record(&s, &x);
        let aug = augment_dataset(&base, &[rec], &s, &net).unwrap();
        assert_eq!(aug.labels.unwrap(), vec![1; 4]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeedStream::new(7).rng(1);
        for widths in [[3, 4, 1], [3, 5, 2]] {
            let net = random_net(&widths, &mut rng);
            let batch: Vec<(Vec<f64>, usize)> = (0..6)
                .map(|_| ((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0..2)))
                .collect();
            let (_, grads) = loss_and_gradients(&net, &batch).unwrap();
            let h = 1e-6;
            for l in 0..net.layers.len() {
                for j in 0..net.layers[l].out_width() {
                    for i in 0..net.layers[l].in_width() {
                        let mut plus = net.clone();
                        plus.layers[l].weights[j][i] += h;
                        let mut minus = net.clone();
                        minus.layers[l].weights[j][i] -= h;
                        let fd = (loss_and_gradients(&plus, &batch).unwrap().0 - loss_and_gradients(&minus, &batch).unwrap().0) / (2.0 * h);
                        let g = grads[l].weights[j][i];
                        assert!((fd - g).abs() <= 1e-5 * g.abs().max(1.0), "layer {l} w[{j}][{i}]: {g} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_epochs_and_descent() {
        let s = FeatureSchema::new(
            vec![
                FeatureSpec::numeric("x", 0.0, 1.0, false),
                FeatureSpec::categorical("g", &["p", "q"]).protected(),
            ],
            vec![],
        )
        .unwrap();
        let mut rng = SeedStream::new(5).rng(1);
        let net = random_net(&[3, 4, 1], &mut rng);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..200 {
            let x = s.random_instance(&mut rng).unwrap();
            ys.push(usize::from(x.values[0].as_num() > 0.5));
            xs.push(x);
        }
        let data = Dataset::new(xs, Some(ys)).unwrap();
        let zero = FineTuneConfig {
            epochs: 0,
            ..Default::default()
        };
        assert_eq!(fine_tune(&net, &data, &s, &zero).unwrap(), net);
        let mut prev = dataset_loss(&net, &data, &s).unwrap();
        let mut current = net.clone();
        for _ in 0..5 {
            let cfg = FineTuneConfig {
                epochs: 1,
                learning_rate: 0.01,
                batch_size: 200,
                rng_seed: 0,
            };
            current = fine_tune(&current, &data, &s, &cfg).unwrap();
            let loss = dataset_loss(&current, &data, &s).unwrap();
            assert!(loss <= prev + 1e-12, "{loss} > {prev}");
            prev = loss;
        }
        let again = fine_tune(&net, &data, &s, &FineTuneConfig::default()).unwrap();
        assert_eq!(again, fine_tune(&net, &data, &s, &FineTuneConfig::default()).unwrap());
        let wild = FineTuneConfig {
            learning_rate: 1e308,
            ..Default::default()
        };
        assert!(matches!(fine_tune(&net, &data, &s, &wild), Err(Error::Divergence { epoch: 1 })));
    }

    #[test]
    fn guarding_lowers_success_rate() {
        let (s, _, net) = planted();
        let data = Dataset::sample_labeled(&s, &net, 200, 0.0, 3).unwrap();
        let cfg = SearchConfig {
            max_iterations: Some(400),
            use_solver: false,
            rng_seed: 11,
            ..Default::default()
        };
        let report = evaluate_mitigation(&net, None, &[region_guard(&s)], GuardPolicy::Abstain, &s, &data, &data, &cfg).unwrap();
        let orig = report.variant(Variant::Original).unwrap();
        let guarded = report.variant(Variant::OriginalGuarded).unwrap();
        assert_eq!(orig.search.max_k, 4);
        assert!(guarded.search.success_rate < orig.search.success_rate);
        assert!(guarded.search.max_k <= 1);
        assert!(guarded.answered_fraction < 1.0);
        // guards that never fire leave the row unchanged
        let never = ExplanationPredicate::new(
            &s,
            vec![Atom::Numeric {
                feature: "x".into(),
                lower: Some(2.0),
                upper: None,
            }],
        )
        .unwrap();
        let r2 = evaluate_mitigation(&net, None, &[never], GuardPolicy::Abstain, &s, &data, &data, &cfg).unwrap();
        let (a, b) = (r2.variant(Variant::Original).unwrap(), r2.variant(Variant::OriginalGuarded).unwrap());
        // wall-clock fields are not serialized
        assert_eq!(serde_json::to_string(&a.search).unwrap(), serde_json::to_string(&b.search).unwrap());
        assert_eq!(a.accuracy, b.accuracy);
    }
}
