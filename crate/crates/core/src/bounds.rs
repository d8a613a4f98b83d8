//! Interval bound propagation.
//!
//! Affine layers map a box with `W⁺·l + W⁻·u + b` / `W⁺·u + W⁻·l + b`;
//! ReLU clamps both ends at zero. The resulting pre-activation bounds size
//! the big-M constants of the MILP encoding and decide which ReLUs are
//! stable over the whole input box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, Network};
use crate::scalar::Scalar;

/// Slack added to every bound before it is used as a big-M constant.
pub const BIG_M_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IntervalBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> IntervalBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidArgument(format!(
                "box coordinate {i}: lower {} > upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(n: usize) -> Self {
        Self {
            lower: vec![T::zero(); n],
            upper: vec![T::one(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, point: &[T], tolerance: T) -> bool {
        point.len() == self.len()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&l, &u))| x >= l - tolerance && x <= u + tolerance)
    }

    pub fn inflate(&self, slack: T) -> Self {
        Self {
            lower: self.lower.iter().map(|&l| l - slack).collect(),
            upper: self.upper.iter().map(|&u| u + slack).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronPhase {
    Active,
    Inactive,
    Unstable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LayerBound<T> {
    pub pre: IntervalBox<T>,
    pub post: IntervalBox<T>,
    pub relu: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LayerBounds<T> {
    pub layers: Vec<LayerBound<T>>,
}

impl<T: Scalar> LayerBounds<T> {
    /// Pre-activation phase of neuron `neuron` in layer `layer`.
    pub fn phase(&self, layer: usize, neuron: usize) -> NeuronPhase {
        let pre = &self.layers[layer].pre;
        if pre.lower[neuron] >= T::zero() {
            NeuronPhase::Active
        } else if pre.upper[neuron] <= T::zero() {
            NeuronPhase::Inactive
        } else {
            NeuronPhase::Unstable
        }
    }

    /// Widens pre-activation bounds by `slack` and recomputes post-activation bounds.
    pub fn inflate(&self, slack: T) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|lb| {
                let pre = lb.pre.inflate(slack);
                let post = if lb.relu { relu_box(&pre) } else { pre.clone() };
                LayerBound {
                    pre,
                    post,
                    relu: lb.relu,
                }
            })
            .collect();
        Self { layers }
    }
}

fn relu_box<T: Scalar>(b: &IntervalBox<T>) -> IntervalBox<T> {
    IntervalBox {
        lower: b.lower.iter().map(|&v| v.max(T::zero())).collect(),
        upper: b.upper.iter().map(|&v| v.max(T::zero())).collect(),
    }
}

/// Interval image of an affine map `row·x + bias` over `input`.
pub fn affine_interval<T: Scalar>(row: &[T], bias: T, input: &IntervalBox<T>) -> (T, T) {
    row.iter()
        .zip(input.lower.iter().zip(&input.upper))
        .fold((bias, bias), |(lo, hi), (&w, (&l, &u))| {
            if w >= T::zero() {
                (lo + w * l, hi + w * u)
            } else {
                (lo + w * u, hi + w * l)
            }
        })
}

pub fn propagate<T: Scalar>(network: &Network<T>, input_box: &IntervalBox<T>) -> Result<LayerBounds<T>> {
    if input_box.len() != network.input_width {
        return Err(Error::Dimension {
            expected: network.input_width,
            got: input_box.len(),
        });
    }
    let mut current = input_box.clone();
    let mut layers = Vec::with_capacity(network.layers.len());
    for layer in &network.layers {
        let (lower, upper): (Vec<T>, Vec<T>) = layer
            .weights
            .iter()
            .zip(&layer.bias)
            .map(|(row, &b)| affine_interval(row, b, &current))
            .unzip();
        let pre = IntervalBox { lower, upper };
        let relu = layer.activation == Activation::Relu;
        let post = if relu { relu_box(&pre) } else { pre.clone() };
        current = post.clone();
        layers.push(LayerBound { pre, post, relu });
    }
    Ok(LayerBounds { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DenseLayer;

    #[test]
    fn identity_weights_preserve_box() {
        let layer = DenseLayer::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], Activation::Identity).unwrap();
        let net = Network::new(2, vec![layer], None).unwrap();
        let b = propagate(&net, &IntervalBox::unit(2)).unwrap();
        assert_eq!(b.layers[0].pre, IntervalBox::unit(2));
    }

    #[test]
    fn difference_of_inputs() {
        let layer = DenseLayer::new(vec![vec![1.0, -1.0]], vec![0.0], Activation::Identity).unwrap();
        let net = Network::new(2, vec![layer], None).unwrap();
        let b = propagate(&net, &IntervalBox::unit(2)).unwrap();
        assert_eq!(b.layers[0].pre.lower, vec![-1.0]);
        assert_eq!(b.layers[0].pre.upper, vec![1.0]);
    }

    #[test]
    fn relu_layers_have_nonnegative_post_bounds_and_phases() {
        let hidden = DenseLayer::new(
            vec![vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]],
            vec![0.5, -0.5, 0.0],
            Activation::Relu,
        )
        .unwrap();
        let out = DenseLayer::new(vec![vec![1.0, 1.0, 1.0]], vec![0.0], Activation::Identity).unwrap();
        let net = Network::new(2, vec![hidden, out], None).unwrap();
        let b = propagate(&net, &IntervalBox::unit(2)).unwrap();
        assert!(b.layers[0].post.lower.iter().all(|&v| v >= 0.0));
        assert_eq!(b.phase(0, 0), NeuronPhase::Active);
        assert_eq!(b.phase(0, 1), NeuronPhase::Inactive);
        assert_eq!(b.phase(0, 2), NeuronPhase::Unstable);
        let wide = b.inflate(BIG_M_SLACK);
        assert!(wide.layers[0].pre.lower[0] < b.layers[0].pre.lower[0]);
        assert!(wide.layers[0].post.lower.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(IntervalBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(IntervalBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }
}
