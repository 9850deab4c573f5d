//! Latency-constrained layer-wise sparsity search for small transformer
//! encoders.
//!
//! The search state is a per-layer choice of attention-head sparsity and FFN
//! sparsity ([`space`]). Candidates are scored by a latency-aware reward
//! built from an accuracy oracle ([`oracle`]) and a learned latency
//! predictor ([`latency`]). Aging evolution drives the search, with either
//! random mutation or a learned two-stage recurrent mutator
//! ([`controller`]) trained online with REINFORCE ([`engine`]).
//!
//! Numerical components are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision instantiation used by the CLI.

pub mod controller;
pub mod engine;
pub mod error;
pub mod latency;
pub mod mask;
pub mod oracle;
pub mod scalar;
pub mod space;

pub use error::{ControllerError, LatencyError, MaskError, OracleError, SearchError, SpaceError};
pub use scalar::Scalar;
pub use space::{SpaceSpec, SparsityConfig, Sublayer};

pub type LatencyModel = latency::LatencyModel<f64>;
pub type CostModelParams = latency::CostModelParams<f64>;
pub type SurrogateParams = oracle::SurrogateParams<f64>;
pub type Mutator = controller::MutatorNet<f64>;
pub type RewardParams = engine::RewardParams<f64>;
pub type Candidate = engine::Candidate<f64>;
pub type SearchReport = engine::SearchReport<f64>;
