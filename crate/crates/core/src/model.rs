//! Feed-forward affine+ReLU networks.
//!
//! A [`Network`] maps an encoded input vector to raw logits. The scalar
//! decision score used by every fairness measure is derived from the logits:
//! a logistic of the single logit for one-output networks, otherwise the
//! softmax probability of the favorable output.
//!
//! Networks are stored as JSON:
//!
//! ```json
//! {"input_width": 3, "output_width": 1, "favorable_output_index": 0,
//!  "layers": [{"weights": [[1.0, 0.0, -1.0]], "bias": [0.5], "activation": "identity"}]}
//! ```
//!
//! Weights are row-major: one row per output neuron.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DenseLayer<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Vec<Vec<T>>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        let layer = Self {
            weights,
            bias,
            activation,
        };
        layer.check().map_err(|msg| Error::InvalidNetwork { layer: None, msg })?;
        Ok(layer)
    }

    pub fn in_width(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn out_width(&self) -> usize {
        self.weights.len()
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.weights.is_empty() {
            return Err("layer has no output neurons".into());
        }
        let cols = self.in_width();
        if cols == 0 {
            return Err("layer has zero input width".into());
        }
        if let Some(r) = self.weights.iter().position(|row| row.len() != cols) {
            return Err(format!("weight row {r} has length {}, expected {cols}", self.weights[r].len()));
        }
        if self.bias.len() != self.weights.len() {
            return Err(format!(
                "bias length {} does not match {} weight rows",
                self.bias.len(),
                self.weights.len()
            ));
        }
        let finite = self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite());
        if !finite {
            return Err("non-finite weight or bias".into());
        }
        Ok(())
    }

    /// Affine part `W·x + b`.
    pub fn pre_activation(&self, input: &[T]) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(input).fold(b, |acc, (&w, &x)| acc + w * x))
            .collect()
    }

    pub fn activate(&self, pre: &mut [T]) {
        if self.activation == Activation::Relu {
            for v in pre.iter_mut() {
                *v = v.max(T::zero());
            }
        }
    }

    pub fn apply(&self, input: &[T]) -> Vec<T> {
        let mut out = self.pre_activation(input);
        self.activate(&mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Network<T> {
    pub input_width: usize,
    pub output_width: usize,
    #[serde(default)]
    pub favorable_output_index: Option<usize>,
    pub layers: Vec<DenseLayer<T>>,
}

/// Pre- and post-activation values of every layer for one input.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub input: Vec<T>,
    pub pre: Vec<Vec<T>>,
    pub post: Vec<Vec<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn logits(&self) -> &[T] {
        self.post.last().map_or(&[], Vec::as_slice)
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(
        input_width: usize,
        layers: Vec<DenseLayer<T>>,
        favorable_output_index: Option<usize>,
    ) -> Result<Self> {
        let output_width = layers.last().map_or(0, DenseLayer::out_width);
        let net = Self {
            input_width,
            output_width,
            favorable_output_index,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    /// Checks all structural invariants; reports the first violation.
    pub fn validate(&self) -> Result<()> {
        let bad = |layer: Option<usize>, msg: String| Err(Error::InvalidNetwork { layer, msg });
        if self.layers.is_empty() {
            return bad(None, "network has no layers".into());
        }
        let mut width = self.input_width;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Err(msg) = layer.check() {
                return bad(Some(i), msg);
            }
            if layer.in_width() != width {
                return bad(
                    Some(i),
                    format!("input width {} does not chain with previous width {width}", layer.in_width()),
                );
            }
            match (i == last, layer.activation) {
                (true, Activation::Relu) => {
                    return bad(Some(i), "output layer must use identity activation".into())
                }
                (false, Activation::Identity) => {
                    return bad(Some(i), "hidden layers must use relu activation".into())
                }
                _ => {}
            }
            width = layer.out_width();
        }
        if width != self.output_width {
            return bad(
                Some(last),
                format!("output width {width} does not match declared {}", self.output_width),
            );
        }
        if self.favorable_index() >= self.output_width {
            return bad(
                None,
                format!(
                    "favorable_output_index {} out of range for {} outputs",
                    self.favorable_index(),
                    self.output_width
                ),
            );
        }
        Ok(())
    }

    /// Favorable output; defaults to 0 for one output and 1 otherwise.
    pub fn favorable_index(&self) -> usize {
        self.favorable_output_index
            .unwrap_or(if self.output_width == 1 { 0 } else { 1 })
    }

    pub fn hidden_layers(&self) -> &[DenseLayer<T>] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &DenseLayer<T> {
        self.layers.last().expect("validated network has layers")
    }

    pub fn hidden_neuron_count(&self) -> usize {
        self.hidden_layers().iter().map(DenseLayer::out_width).sum()
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_width {
            return Err(Error::Dimension {
                expected: self.input_width,
                got: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instance("non-finite network input".into()));
        }
        Ok(())
    }

    /// Last-layer logits.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &[T]) -> Vec<T> {
        let mut act = self.layers[0].apply(input);
        for layer in &self.layers[1..] {
            act = layer.apply(&act);
        }
        act
    }

    pub fn forward_trace(&self, input: &[T]) -> Result<ForwardTrace<T>> {
        self.check_input(input)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&current);
            let mut a = z.clone();
            layer.activate(&mut a);
            pre.push(z);
            current = a.clone();
            post.push(a);
        }
        Ok(ForwardTrace {
            input: input.to_vec(),
            pre,
            post,
        })
    }

    /// Normalized favorable score in [0, 1].
    pub fn score(&self, input: &[T]) -> Result<T> {
        let logits = self.forward(input)?;
        Ok(self.score_from_logits(&logits))
    }

    pub fn score_from_logits(&self, logits: &[T]) -> T {
        if logits.len() == 1 {
            logistic(logits[0])
        } else {
            softmax_component(logits, self.favorable_index())
        }
    }

    /// Linear decision margin: the logit for one output, favorable minus
    /// other logit for two outputs. Undefined (None) for wider outputs.
    pub fn decision_margin(&self, logits: &[T]) -> Option<T> {
        match logits.len() {
            1 => Some(logits[0]),
            2 => {
                let fav = self.favorable_index();
                Some(logits[fav] - logits[1 - fav])
            }
            _ => None,
        }
    }

    pub fn predict_label(&self, input: &[T]) -> Result<usize> {
        let logits = self.forward(input)?;
        Ok(self.label_from_logits(&logits))
    }

    /// Argmax with lowest-index tie-break; single output means label 1 iff score > 0.5.
    pub fn label_from_logits(&self, logits: &[T]) -> usize {
        if logits.len() == 1 {
            return usize::from(logistic(logits[0]) > T::lit(0.5));
        }
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }

    /// Label counted as favorable in binary framing.
    pub fn favorable_label(&self) -> usize {
        if self.output_width == 1 {
            1
        } else {
            self.favorable_index()
        }
    }

    pub fn class_count(&self) -> usize {
        self.output_width.max(2)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(text).map_err(|e| Error::json("<network>", e))?;
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let net: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("network serializes");
        value["favorable_output_index"] = self.favorable_index().into();
        serde_json::to_string_pretty(&value).expect("network serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_component<T: Scalar>(logits: &[T], index: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = logits.iter().map(|&l| (l - max).exp()).sum();
    (logits[index] - max).exp() / total
}
