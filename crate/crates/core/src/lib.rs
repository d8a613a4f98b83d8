//! Individual-fairness auditing for small feed-forward ReLU networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: dense affine+ReLU networks, logits, normalized scores.
//! * [`schema`]: tabular feature space, encoding, protected counterfactuals.
//! * [`data`]: CSV ingestion, train/test split and planted-structure generators.
//! * [`cluster`]: outcome bucketing and the k-discrimination measure.
//! * [`bounds`]: interval bound propagation used to size big-M constants.
//! * [`milp`]: paired-network MILP encoding, dense simplex, branch-and-bound,
//!   certification and counterexample seeding.
//! * [`search`]: randomized k-discrimination search (random walk, simulated
//!   annealing, annealing with nearest-neighbour moves).
//! * [`explain`]: decision-tree explanations of high-k regions.
//! * [`mitigate`]: guardrails, augmentation, fine-tuning and before/after reports.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the pipeline
//! modules and the command-line tool use.

pub mod bounds;
pub mod cluster;
pub mod data;
pub mod error;
pub mod explain;
pub mod milp;
pub mod mitigate;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod schema;
pub mod search;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default output-bucket width for k-discrimination.
pub const DEFAULT_EPSILON: f64 = 0.05;

pub type Network = model::Network<f64>;
pub type DenseLayer = model::DenseLayer<f64>;
pub type IntervalBox = bounds::IntervalBox<f64>;
pub type LayerBounds = bounds::LayerBounds<f64>;
pub type MilpProblem = milp::MilpProblem<f64>;
pub type LinearExpr = milp::LinearExpr<f64>;
pub type SolveResult = milp::SolveResult<f64>;
pub type LinearProgram = milp::simplex::LinearProgram<f64>;

pub use cluster::{Auditee, DiscriminationRecord, KEvaluation};
pub use data::{Dataset, PlantSpec};
pub use explain::{ExplainConfig, ExplanationPredicate};
pub use milp::{Certificate, Verdict};
pub use mitigate::{GuardedModel, MitigationReport};
pub use schema::{FeatureSchema, Instance, RawInstance};
pub use search::{SearchConfig, SearchReport, Strategy};
