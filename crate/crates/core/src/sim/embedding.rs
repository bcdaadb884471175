//! Noisy embedding reruns around fixed per-instance directions.

use super::rng::{derive_seed, SimRng};
use crate::run_model::{Config, EmbeddingVector, Payload, RunRecord};
use crate::stats::normalized;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingSimError {
    #[error("dim must be >= 2, got {0}")]
    Dim(usize),
    #[error("noise scale must be finite and >= 0")]
    Noise,
}

/// Instance `i` has base direction drawn from `derive_seed(seed, [i])`; run
/// `r` adds `N(0, noise^2)` per coordinate from `derive_seed(seed, [i, r])`
/// and re-normalizes. Label is `pos` when the first coordinate is `>= 0`,
/// score is `(1 + v_0) / 2`.
pub fn simulate_embedding_runs(
    n_instances: usize,
    dim: usize,
    noise: f64,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<RunRecord>, EmbeddingSimError> {
    if dim < 2 {
        return Err(EmbeddingSimError::Dim(dim));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(EmbeddingSimError::Noise);
    }
    let mut out = Vec::with_capacity(n_instances * n_runs);
    for i in 0..n_instances {
        let mut base_rng = SimRng::new(derive_seed(seed, &[i as u64]));
        let base = normalized(&(0..dim).map(|_| base_rng.normal()).collect::<Vec<_>>());
        for r in 0..n_runs {
            let mut rng = SimRng::new(derive_seed(seed, &[i as u64, r as u64]));
            let noisy: Vec<f64> = base.iter().map(|b| b + noise * rng.normal()).collect();
            let v = normalized(&noisy);
            let label = if v[0] >= 0.0 { "pos" } else { "neg" };
            let score = (1.0 + v[0]) / 2.0;
            let config: Config = [("noise_scale".to_string(), noise.to_string())].into();
            out.push(RunRecord {
                run_id: format!("run{r:03}"),
                instance_id: format!("e{i:03}"),
                config,
                payload: Payload::Embedding(EmbeddingVector {
                    values: v,
                    label: Some(label.to_string()),
                    score: Some(score),
                }),
                created_at: None,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_reruns_identical() {
        let recs = simulate_embedding_runs(4, 8, 0.0, 3, 5).unwrap();
        assert_eq!(recs.len(), 12);
        for chunk in recs.chunks(3) {
            assert!(chunk.iter().all(|r| r.payload == chunk[0].payload));
        }
    }

    #[test]
    fn seeded_and_normalized() {
        let a = simulate_embedding_runs(3, 5, 0.1, 4, 77).unwrap();
        assert_eq!(a, simulate_embedding_runs(3, 5, 0.1, 4, 77).unwrap());
        assert_ne!(a, simulate_embedding_runs(3, 5, 0.1, 4, 78).unwrap());
        for r in &a {
            let Payload::Embedding(e) = &r.payload else { panic!() };
            let n: f64 = e.values.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(simulate_embedding_runs(1, 1, 0.1, 2, 0), Err(EmbeddingSimError::Dim(1)));
        assert_eq!(simulate_embedding_runs(1, 2, -1.0, 2, 0), Err(EmbeddingSimError::Noise));
    }
}
