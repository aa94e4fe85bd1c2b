//! Search for trade-off fronts of classifier cascades.
//!
//! A cascade runs pre-evaluated models in order and stops as soon as the
//! running mean of their class probabilities is confident enough. This crate
//! loads model pools (prediction matrices plus per-model cost), evaluates
//! cascades exactly, searches the space of cascades for the MFLOPs/accuracy
//! trade-off front, and provides the Pareto tooling to compare fronts.

pub mod error;
pub mod eval;
pub mod frontfile;
pub mod greedy;
pub mod pareto;
pub mod pool;
pub mod search;

pub use error::{Error, Result};
pub use eval::{
    decode, evaluate_cascade, evaluate_ensemble, CascadeGenome, CascadeMetrics, ConfidenceMode,
    DecodedCascade, Evaluator, Stage, ThresholdGrid,
};
pub use pareto::{FrontEntry, ObjectivePoint};
pub use pool::{ModelEntry, ModelPool, PredictionMatrix};
pub use search::{search, SearchConfig, SearchResult};
