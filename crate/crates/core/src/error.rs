/// Errors raised by the metric functions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("need at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("need at least {needed} instances, got {got}")]
    TooFewInstances { needed: usize, got: usize },
    #[error("k = {k} is out of range for rankings of length {len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("rankings are empty")]
    EmptyRanking,
    #[error("decay p = {0} must lie strictly between 0 and 1")]
    InvalidDecay(f64),
    #[error("rankings cover different feature universes")]
    UniverseMismatch,
    #[error("zero vector: cosine similarity is undefined")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("run {0} carries no label")]
    MissingLabel(usize),
    #[error("run {0} carries no embedding")]
    MissingEmbedding(usize),
    #[error("tau = {0} must lie in [0, 1]")]
    InvalidTau(f64),
    #[error("Dirichlet parameters must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("need K >= 2 Dirichlet parameters, got {0}")]
    TooFewCategories(usize),
    #[error("digamma is undefined for x = {0} (x must be > 0)")]
    DigammaDomain(f64),
    #[error("logit trace is empty")]
    EmptyTrace,
    #[error("threshold must be > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("quantile must lie strictly between 0 and 1, got {0}")]
    InvalidQuantile(f64),
    #[error("no values to pool")]
    EmptyPool,
    #[error("payload kind {found} is not valid for this metric (expected {expected})")]
    WrongPayload {
        expected: &'static str,
        found: String,
    },
}
