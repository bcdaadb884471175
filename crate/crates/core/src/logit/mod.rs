//! Logit-level determinism. The top-K logits at each generated token are read
//! as Dirichlet parameters; aleatoric uncertainty (AU) is the expected
//! categorical entropy under that Dirichlet and epistemic uncertainty (EU) is
//! inverse evidence strength. The token determinism index (TDI) is the share of
//! tokens whose EU falls below a calibrated threshold.

pub mod digamma;

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::run_model::LogitTrace;

pub use digamma::digamma;

/// Offset added after shifting the window minimum to zero.
pub const DEFAULT_SHIFT_EPSILON: f64 = 1.0;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenUncertainty {
    pub au: f64,
    pub eu: f64,
    pub alpha: Vec<f64>,
    pub alpha0: f64,
}

/// AU and EU for one Dirichlet parameter vector.
pub fn au_eu(alpha: &[f64]) -> Result<TokenUncertainty, MetricError> {
    if alpha.len() < 2 {
        return Err(MetricError::TooFewCategories(alpha.len()));
    }
    if let Some(&bad) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(MetricError::InvalidAlpha(bad));
    }
    let alpha0: f64 = alpha.iter().sum();
    let psi0 = digamma(alpha0 + 1.0)?;
    let mut au = 0.0;
    for &a in alpha {
        au -= (a / alpha0) * (digamma(a + 1.0)? - psi0);
    }
    let k = alpha.len() as f64;
    let eu = k / (alpha0 + k);
    Ok(TokenUncertainty {
        au: au.max(0.0),
        eu,
        alpha: alpha.to_vec(),
        alpha0,
    })
}

/// How raw logits become Dirichlet parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitMapping {
    /// Keep at most this many top candidates per step.
    pub top_k: usize,
    /// `alpha_k = logit_k - min(window) + epsilon`.
    pub epsilon: f64,
}

impl Default for LogitMapping {
    fn default() -> Self {
        LogitMapping {
            top_k: DEFAULT_TOP_K,
            epsilon: DEFAULT_SHIFT_EPSILON,
        }
    }
}

impl LogitMapping {
    /// Dirichlet parameters for one step; `logits` must be sorted descending.
    pub fn alphas(&self, logits: &[f64]) -> Vec<f64> {
        let window = &logits[..logits.len().min(self.top_k)];
        let min = window.iter().copied().fold(f64::INFINITY, f64::min);
        window.iter().map(|z| z - min + self.epsilon).collect()
    }
}

/// Per-token uncertainty along a trace.
pub fn trace_uncertainty(
    trace: &LogitTrace,
    mapping: &LogitMapping,
) -> Result<Vec<TokenUncertainty>, MetricError> {
    trace
        .steps
        .iter()
        .map(|step| {
            let logits: Vec<f64> = step.top_k.iter().map(|t| t.logit).collect();
            au_eu(&mapping.alphas(&logits))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdiResult {
    pub tdi: f64,
    pub theta_eu: f64,
    pub per_token_eu: Vec<f64>,
    pub per_token_au: Vec<f64>,
    /// Token positions with `EU >= theta_eu`.
    pub flagged_positions: Vec<usize>,
}

/// Fraction of tokens whose EU is strictly below `theta_eu`.
pub fn tdi(trace: &LogitTrace, theta_eu: f64, mapping: &LogitMapping) -> Result<TdiResult, MetricError> {
    if trace.steps.is_empty() {
        return Err(MetricError::EmptyTrace);
    }
    if theta_eu.is_nan() || theta_eu <= 0.0 {
        return Err(MetricError::InvalidThreshold(theta_eu));
    }
    let tokens = trace_uncertainty(trace, mapping)?;
    let flagged_positions: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.eu >= theta_eu)
        .map(|(i, _)| i)
        .collect();
    let passed = tokens.len() - flagged_positions.len();
    Ok(TdiResult {
        tdi: passed as f64 / tokens.len() as f64,
        theta_eu,
        per_token_eu: tokens.iter().map(|t| t.eu).collect(),
        per_token_au: tokens.iter().map(|t| t.au).collect(),
        flagged_positions,
    })
}

/// Quantile of sorted values with midpoint interpolation: position
/// `q (n - 1)`, averaging the two neighbours when it is fractional.
pub fn midpoint_quantile(sorted: &[f64], q: f64) -> Result<f64, MetricError> {
    if sorted.is_empty() {
        return Err(MetricError::EmptyPool);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(MetricError::InvalidQuantile(q));
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(if lo == hi {
        sorted[lo]
    } else {
        0.5 * (sorted[lo] + sorted[hi])
    })
}

/// EU threshold: the `quantile` of the per-token EU pooled over reference traces.
pub fn calibrate_theta(
    reference: &[&LogitTrace],
    quantile: f64,
    mapping: &LogitMapping,
) -> Result<f64, MetricError> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(MetricError::InvalidQuantile(quantile));
    }
    let mut pool = Vec::new();
    for trace in reference {
        pool.extend(trace_uncertainty(trace, mapping)?.into_iter().map(|t| t.eu));
    }
    pool.sort_by(f64::total_cmp);
    midpoint_quantile(&pool, quantile)
}
