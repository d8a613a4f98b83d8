//! Outcome bucketing and k-discrimination.
//!
//! The score space [0, 1] is split into `ceil(1/ε)` uniform buckets; the
//! top boundary 1.0 falls into the last bucket. The k value of an instance
//! is the number of distinct buckets occupied by its K counterfactual scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;
use crate::scalar::Scalar;
use crate::schema::{FeatureSchema, Instance, RawInstance};

// Guards floor() against representation error, e.g. 0.15 / 0.05 = 2.9999999999999996.
const BUCKET_FUZZ: f64 = 1e-9;

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1]")));
    }
    Ok(())
}

pub fn bucket_count(epsilon: f64) -> usize {
    ((1.0 / epsilon) - BUCKET_FUZZ).ceil().max(1.0) as usize
}

pub fn bucketize(score: f64, epsilon: f64) -> Result<usize> {
    check_epsilon(epsilon)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::InvalidArgument(format!("score {score} outside [0, 1]")));
    }
    Ok(bucket_unchecked(score, epsilon))
}

fn bucket_unchecked(score: f64, epsilon: f64) -> usize {
    let raw = (score / epsilon + BUCKET_FUZZ).floor() as usize;
    raw.min(bucket_count(epsilon) - 1)
}

/// Strict pairwise distance test.
pub fn is_2_discriminant(score_a: f64, score_b: f64, epsilon: f64) -> bool {
    (score_a - score_b).abs() > epsilon
}

/// Number of distinct values in `buckets`.
pub fn distinct_count(buckets: &[usize]) -> usize {
    let mut sorted = buckets.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len()
}

/// Counterfactual outcome set of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct KEvaluation {
    /// Protected combination index of each counterfactual.
    pub combos: Vec<usize>,
    /// Normalized scores; empty when the model abstained.
    pub scores: Vec<f64>,
    pub buckets: Vec<usize>,
    pub k: usize,
    pub abstained: bool,
}

impl KEvaluation {
    pub fn from_scores(combos: Vec<usize>, scores: Vec<f64>, epsilon: f64) -> Self {
        let buckets: Vec<usize> = scores.iter().map(|&s| bucket_unchecked(s, epsilon)).collect();
        let k = distinct_count(&buckets);
        Self {
            combos,
            scores,
            buckets,
            k,
            abstained: false,
        }
    }

    /// Every counterfactual refused: one reserved bucket past the score buckets.
    pub fn abstained(combos: Vec<usize>, epsilon: f64) -> Self {
        let reserved = bucket_count(epsilon);
        Self {
            buckets: vec![reserved; combos.len()],
            combos,
            scores: Vec::new(),
            k: 1,
            abstained: true,
        }
    }

    pub fn is_id(&self) -> bool {
        self.k >= 2
    }

    /// Largest pairwise score gap and the combos realizing it.
    pub fn max_gap(&self) -> Option<(f64, usize, usize)> {
        let (lo, hi) = self.scores.iter().enumerate().fold((0, 0), |(lo, hi), (i, &s)| {
            (
                if s < self.scores[lo] { i } else { lo },
                if s > self.scores[hi] { i } else { hi },
            )
        });
        (!self.scores.is_empty()).then(|| (self.scores[hi] - self.scores[lo], self.combos[hi], self.combos[lo]))
    }

    pub fn into_record(self, schema: &FeatureSchema, instance: &Instance) -> DiscriminationRecord {
        DiscriminationRecord {
            instance: schema.to_raw(instance),
            is_id: self.is_id(),
            counterfactual_scores: self.scores,
            bucket_indices: self.buckets,
            k_value: self.k,
            abstained: self.abstained,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationRecord {
    pub instance: RawInstance,
    pub counterfactual_scores: Vec<f64>,
    pub bucket_indices: Vec<usize>,
    pub k_value: usize,
    pub is_id: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub abstained: bool,
}

/// Anything whose counterfactual outcome set can be measured: a bare network
/// or a network behind guardrails.
pub trait Auditee: Sync {
    fn evaluate(&self, schema: &FeatureSchema, instance: &Instance, epsilon: f64) -> Result<KEvaluation>;
}

impl<T: Scalar> Auditee for Network<T> {
    fn evaluate(&self, schema: &FeatureSchema, instance: &Instance, epsilon: f64) -> Result<KEvaluation> {
        check_epsilon(epsilon)?;
        if schema.input_width() != self.input_width {
            return Err(Error::Dimension {
                expected: self.input_width,
                got: schema.input_width(),
            });
        }
        let encoded = schema.counterfactual_encodings::<T>(instance)?;
        let mut combos = Vec::with_capacity(encoded.len());
        let mut scores = Vec::with_capacity(encoded.len());
        for (combo, x) in encoded {
            let logits = self.forward_unchecked(&x);
            combos.push(combo);
            scores.push(self.score_from_logits(&logits).as_f64().clamp(0.0, 1.0));
        }
        Ok(KEvaluation::from_scores(combos, scores, epsilon))
    }
}

pub fn k_discrimination<A: Auditee + ?Sized>(
    auditee: &A,
    schema: &FeatureSchema,
    instance: &Instance,
    epsilon: f64,
) -> Result<DiscriminationRecord> {
    Ok(auditee.evaluate(schema, instance, epsilon)?.into_record(schema, instance))
}
