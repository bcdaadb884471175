//! Seeded simulators that produce run corpora with known ground truth.

pub mod embedding;
pub mod explainer;
pub mod reduction;
pub mod rng;
pub mod shapley;

pub use embedding::{simulate_embedding_runs, EmbeddingSimError};
pub use explainer::{estimator_grid, protocol_setup, simulate_explainer_runs, EstimatorConfig};
pub use reduction::{reduction_order_spread, ReductionError, ReductionSpread};
pub use rng::{derive_seed, SimRng};
pub use shapley::{
    shapley_exact, shapley_mc, Estimator, ModelKind, PairTerm, ShapleyError, ShapleyEstimate,
    ToyModel,
};
