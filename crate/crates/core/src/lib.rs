//! Determinism auditing for ML pipelines: run-record ingestion, stability
//! metrics per layer, seeded simulators and a hash-chained audit ledger.

pub mod canonical;
pub mod embedding;
pub mod error;
pub mod ledger;
pub mod logit;
pub mod rank;
pub mod report;
pub mod run_model;
pub mod sequence;
pub mod sim;
pub mod stats;

pub use canonical::{canonical_serialize, canonical_string, CanonicalError};
pub use error::MetricError;
pub use run_model::{
    group, ingest, ingest_str, ActionTrace, AttributionRanking, Config, Corpus, EmbeddingVector,
    FeatureAttribution, GenerationOutput, IngestError, LogitStep, LogitTrace, Payload,
    PayloadKind, RunRecord, RunSet, ScalarPrediction, SchemaMode, TokenLogit,
};
