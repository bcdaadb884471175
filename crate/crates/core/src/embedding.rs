//! Latent drift and decision stability: pairwise cosine distance, label flip
//! rate and the signal/noise variance ratio (DDR).

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::MetricError;
use crate::stats::{cosine_similarity, l2_norm, mean, pairwise_mean, sample_variance};

fn check_vectors(vectors: &[&[f64]]) -> Result<(), MetricError> {
    if vectors.len() < 2 {
        return Err(MetricError::TooFewRuns {
            needed: 2,
            got: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    for v in vectors {
        if v.len() != dim {
            return Err(MetricError::DimensionMismatch(dim, v.len()));
        }
        if l2_norm(v) == 0.0 {
            return Err(MetricError::ZeroVector);
        }
    }
    Ok(())
}

/// Mean pairwise cosine distance `1 - cos(h_i, h_j)` over all run pairs.
/// Vectors are L2-normalized first whether or not they claim to be.
pub fn d_cos(vectors: &[&[f64]]) -> Result<f64, MetricError> {
    check_vectors(vectors)?;
    Ok(pairwise_mean(vectors.len(), |i, j| {
        1.0 - cosine_similarity(vectors[i], vectors[j])
    }))
}

/// Mean pairwise cosine similarity (the PSD kernel shares this path).
pub fn mean_pairwise_cosine(vectors: &[&[f64]]) -> Result<f64, MetricError> {
    check_vectors(vectors)?;
    Ok(pairwise_mean(vectors.len(), |i, j| {
        cosine_similarity(vectors[i], vectors[j])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipStats {
    /// Fraction of instances whose runs do not all share one label.
    pub flip_rate: f64,
    /// Mean over instances of (modal label count / runs).
    pub majority_agreement: f64,
    pub n_instances: usize,
    pub n_flipped: usize,
}

/// Modal label and its count; ties go to the lexicographically smallest label.
pub fn modal_label<'a>(labels: &[&'a str]) -> (&'a str, usize) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    // BTreeMap iterates in ascending order, so the first maximum wins ties.
    counts
        .into_iter()
        .fold(("", 0), |best, (l, c)| if c > best.1 { (l, c) } else { best })
}

/// Flip rate over instances; `instances[i]` lists the label of every run.
pub fn flip_rate(instances: &[Vec<Option<&str>>]) -> Result<FlipStats, MetricError> {
    let mut flipped = 0usize;
    let mut shares = Vec::with_capacity(instances.len());
    for runs in instances {
        if runs.len() < 2 {
            return Err(MetricError::TooFewRuns {
                needed: 2,
                got: runs.len(),
            });
        }
        let labels: Vec<&str> = runs
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or(MetricError::MissingLabel(i)))
            .collect::<Result<_, _>>()?;
        let (_, count) = modal_label(&labels);
        if count != labels.len() {
            flipped += 1;
        }
        shares.push(count as f64 / labels.len() as f64);
    }
    if instances.is_empty() {
        return Err(MetricError::TooFewInstances { needed: 1, got: 0 });
    }
    Ok(FlipStats {
        flip_rate: flipped as f64 / instances.len() as f64,
        majority_agreement: mean(&shares),
        n_instances: instances.len(),
        n_flipped: flipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdrResult {
    /// `None` when the noise variance is exactly zero.
    pub ddr: Option<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub perfectly_deterministic: bool,
    pub n_instances: usize,
}

/// Signal is the per-instance mean over runs, noise the residuals around it.
/// `DDR = Var_i(D_i) / mean_i Var_r(n_ir)`, both unbiased.
pub fn ddr(instances: &[Vec<f64>]) -> Result<DdrResult, MetricError> {
    if instances.len() < 2 {
        return Err(MetricError::TooFewInstances {
            needed: 2,
            got: instances.len(),
        });
    }
    let mut signals = Vec::with_capacity(instances.len());
    let mut noise = Vec::with_capacity(instances.len());
    for runs in instances {
        if runs.len() < 2 {
            return Err(MetricError::TooFewRuns {
                needed: 2,
                got: runs.len(),
            });
        }
        let d = mean(runs);
        let residuals: Vec<f64> = runs.iter().map(|y| y - d).collect();
        signals.push(d);
        noise.push(sample_variance(&residuals));
    }
    let signal_variance = sample_variance(&signals);
    let noise_variance = mean(&noise);
    let zero_noise = noise_variance == 0.0;
    Ok(DdrResult {
        ddr: (!zero_noise).then(|| signal_variance / noise_variance),
        signal_variance,
        noise_variance,
        perfectly_deterministic: zero_noise,
        n_instances: instances.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn d_cos_examples() {
        let v = [0.2, -0.4, 0.9];
        assert_eq!(d_cos(&[&v, &v, &v]).unwrap(), 0.0);
        assert_eq!(d_cos(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(), 1.0);
        let neg = [-0.2, 0.4, -0.9];
        assert_eq!(d_cos(&[&v, &neg]).unwrap(), 2.0);
    }

    #[test]
    fn d_cos_errors() {
        assert_eq!(d_cos(&[&[0.0, 0.0], &[1.0, 0.0]]), Err(MetricError::ZeroVector));
        assert_eq!(
            d_cos(&[&[1.0, 0.0], &[1.0, 0.0, 0.0]]),
            Err(MetricError::DimensionMismatch(2, 3))
        );
        assert!(matches!(d_cos(&[&[1.0]]), Err(MetricError::TooFewRuns { .. })));
    }

    #[test]
    fn flip_examples() {
        let agree: Vec<Vec<Option<&str>>> = vec![vec![Some("a"); 3]; 4];
        let s = flip_rate(&agree).unwrap();
        assert_eq!((s.flip_rate, s.majority_agreement), (0.0, 1.0));

        let mut ten: Vec<Vec<Option<&str>>> = vec![vec![Some("x"), Some("x")]; 10];
        for inst in ten.iter_mut().take(3) {
            inst[1] = Some("y");
        }
        assert!((flip_rate(&ten).unwrap().flip_rate - 0.3).abs() < 1e-15);

        let one = vec![vec![Some("A"), Some("A"), Some("B")]];
        let s = flip_rate(&one).unwrap();
        assert_eq!(s.flip_rate, 1.0);
        assert!((s.majority_agreement - 2.0 / 3.0).abs() < 1e-15);

        assert_eq!(
            flip_rate(&[vec![Some("a"), None]]),
            Err(MetricError::MissingLabel(1))
        );
    }

    #[test]
    fn modal_tie_breaks_to_smallest() {
        assert_eq!(modal_label(&["b", "a", "b", "a"]), ("a", 2));
    }

    #[test]
    fn ddr_examples() {
        let flat = vec![vec![0.2, 0.2], vec![0.7, 0.7]];
        let r = ddr(&flat).unwrap();
        assert!(r.perfectly_deterministic);
        assert_eq!(r.ddr, None);

        let spread = vec![vec![-0.1, 0.1], vec![0.9, 1.1]];
        let r = ddr(&spread).unwrap();
        assert!((r.signal_variance - 0.5).abs() < 1e-12);
        assert!((r.noise_variance - 0.02).abs() < 1e-12);
        assert!((r.ddr.unwrap() - 25.0).abs() < 1e-9);

        // Var(D) = Var(N) = 2
        let unit = vec![vec![-1.0, 1.0], vec![1.0, 3.0]];
        assert!((ddr(&unit).unwrap().ddr.unwrap() - 1.0).abs() < 1e-12);

        assert!(matches!(ddr(&[vec![1.0, 2.0]]), Err(MetricError::TooFewInstances { .. })));
        assert!(matches!(ddr(&[vec![1.0], vec![2.0]]), Err(MetricError::TooFewRuns { .. })));
    }

    proptest! {
        #[test]
        fn d_cos_scale_and_order_invariant(
            vs in prop::collection::vec(prop::collection::vec(0.1f64..10.0, 4), 2..6),
            scales in prop::collection::vec(0.01f64..100.0, 6),
        ) {
            let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
            let base = d_cos(&refs).unwrap();
            prop_assert!((0.0..=2.0).contains(&base));
            let scaled: Vec<Vec<f64>> = vs.iter().zip(&scales)
                .map(|(v, c)| v.iter().map(|x| x * c).collect()).collect();
            let srefs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
            prop_assert!((d_cos(&srefs).unwrap() - base).abs() < 1e-12);
            let mut rev = refs.clone();
            rev.reverse();
            prop_assert!((d_cos(&rev).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn ddr_affine_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5f64..5.0, 3), 2..6),
            shift in -100f64..100.0,
            scale in 0.1f64..10.0,
        ) {
            let base = ddr(&rows).unwrap();
            prop_assume!(base.noise_variance > 1e-6);
            let moved: Vec<Vec<f64>> = rows.iter()
                .map(|r| r.iter().map(|y| scale * y + shift).collect()).collect();
            let got = ddr(&moved).unwrap();
            let (a, b) = (base.ddr.unwrap(), got.ddr.unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
        }

        #[test]
        fn flip_zero_iff_full_agreement(
            rows in prop::collection::vec(prop::collection::vec(0u8..3, 2..5), 1..8)
        ) {
            let labels = ["a", "b", "c"];
            let inst: Vec<Vec<Option<&str>>> = rows.iter()
                .map(|r| r.iter().map(|&i| Some(labels[i as usize])).collect()).collect();
            let s = flip_rate(&inst).unwrap();
            prop_assert_eq!(s.flip_rate == 0.0, s.majority_agreement == 1.0);
        }
    }
}
