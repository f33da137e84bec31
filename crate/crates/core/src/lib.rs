//! Time-series clustering as a quadratic unconstrained binary optimization
//! problem with a cluster-size balance penalty.
//!
//! The pipeline: load and standardize series ([`dataset`]), optionally
//! denoise with a truncated SVD ([`lowrank`]), compute pairwise similarity
//! ([`similarity`]), build the QUBO ([`qubo`]), minimize it by simulated
//! annealing ([`annealer`]) and decode/evaluate the result ([`analysis`]).
//! [`baselines`] holds the k-means++ comparison method and [`synth`] a
//! generator of noisy periodic frame stacks with known phases.

pub mod analysis;
pub mod annealer;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod lowrank;
pub mod pipeline;
pub mod qubo;
pub mod report;
pub mod similarity;
pub mod synth;

pub use analysis::{Assignment, AssignmentSource};
pub use annealer::{AnnealParams, SolveResult};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use pipeline::RunConfig;
pub use qubo::{EnergyBreakdown, LambdaRegime, QuboModel};
pub use report::ClusterReport;
pub use similarity::{AngularDistanceMatrix, SimilarityKind, SimilarityMatrix};
