//! Order dependence of single-precision summation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::rng::{derive_seed, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionSpread {
    pub n_values: usize,
    pub n_shuffles: usize,
    pub seed: u64,
    /// Distinct `f32` results across the shuffled orders (`-0.0 == 0.0`).
    pub distinct_sums_single: usize,
    /// Largest minus smallest `f32` result, widened to `f64`.
    pub max_abs_diff: f64,
    pub min_single: f64,
    pub max_single: f64,
    /// Correctly rounded `f64` sum of the inputs.
    pub reference: f64,
    /// Whether the reference came out bit-identical for every shuffled order.
    pub reference_constant: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReductionError {
    #[error("n_shuffles must be >= 2, got {0}")]
    TooFewShuffles(usize),
    #[error("values must be finite")]
    NonFinite,
    #[error("unknown preset {0:?} (expected cancellation or magnitude-spread)")]
    UnknownPreset(String),
}

pub const PRESETS: [&str; 2] = ["cancellation", "magnitude-spread"];

/// `{1e8, 1, -1e8}`: `(1e8 + 1) - 1e8` is 0 in `f32`, `(1e8 - 1e8) + 1` is 1.
pub fn cancellation() -> Vec<f64> {
    vec![1e8, 1.0, -1e8]
}

/// `n` values log-uniform in `[1e-8, 1e8]`.
pub fn magnitude_spread(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SimRng::new(seed);
    (0..n).map(|_| 10f64.powf(rng.uniform_range(-8.0, 8.0))).collect()
}

pub fn preset(name: &str, seed: u64) -> Result<Vec<f64>, ReductionError> {
    match name {
        "cancellation" => Ok(cancellation()),
        "magnitude-spread" => Ok(magnitude_spread(10_000, seed)),
        other => Err(ReductionError::UnknownPreset(other.to_string())),
    }
}

pub fn sum_f32_sequential(values: &[f64]) -> f32 {
    values.iter().fold(0.0f32, |acc, &v| acc + v as f32)
}

/// Correctly rounded sum (Shewchuk's exact partials, final rounding to
/// nearest-even as in Python's `math.fsum`). Independent of input order.
pub fn exact_sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for &v in values {
        let mut x = v;
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // half-way case: the remaining partials decide the rounding direction
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Sum `values` in `n_shuffles` orders. Shuffle `k` permutes the original
/// order with the stream `derive_seed(seed, [k])`.
pub fn reduction_order_spread(
    values: &[f64],
    n_shuffles: usize,
    seed: u64,
) -> Result<ReductionSpread, ReductionError> {
    if n_shuffles < 2 {
        return Err(ReductionError::TooFewShuffles(n_shuffles));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ReductionError::NonFinite);
    }
    let reference = exact_sum(values);
    let mut reference_constant = true;
    let mut distinct = BTreeSet::new();
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    let mut order = values.to_vec();
    for k in 0..n_shuffles {
        order.copy_from_slice(values);
        SimRng::new(derive_seed(seed, &[k as u64])).shuffle(&mut order);
        let s = sum_f32_sequential(&order);
        // + 0.0 folds -0.0 into 0.0
        distinct.insert((s + 0.0).to_bits());
        lo = lo.min(s);
        hi = hi.max(s);
        if exact_sum(&order).to_bits() != reference.to_bits() {
            reference_constant = false;
        }
    }
    Ok(ReductionSpread {
        n_values: values.len(),
        n_shuffles,
        seed,
        distinct_sums_single: distinct.len(),
        max_abs_diff: hi as f64 - lo as f64,
        min_single: lo as f64,
        max_single: hi as f64,
        reference,
        reference_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_precision_orders_by_bits() {
        let big = 1e8f32;
        // 1e8 = 390625 * 2^8 is exact in f32; the spacing there is 8
        assert_eq!(big.to_bits(), 0x4CBE_BC20);
        assert_eq!((big + 1.0).to_bits(), big.to_bits());
        assert_eq!(sum_f32_sequential(&[1e8, 1.0, -1e8]), 0.0);
        assert_eq!(sum_f32_sequential(&[1e8, -1e8, 1.0]), 1.0);
    }

    #[test]
    fn cancellation_spreads() {
        let r = reduction_order_spread(&cancellation(), 50, 3).unwrap();
        assert!(r.distinct_sums_single >= 2);
        assert_eq!(r.reference, 1.0);
        assert!(r.reference_constant);
    }

    #[test]
    fn equal_values_do_not_spread() {
        let r = reduction_order_spread(&[0.25; 64], 20, 9).unwrap();
        assert_eq!(r.distinct_sums_single, 1);
        assert_eq!(r.max_abs_diff, 0.0);
        assert_eq!(r.reference, 16.0);
    }

    #[test]
    fn exact_sum_known_cases() {
        assert_eq!(exact_sum(&[]), 0.0);
        assert_eq!(exact_sum(&[0.1; 10]), 1.0);
        assert_eq!(exact_sum(&[1e100, 1.0, -1e100, 1e-100]), 1.0);
        assert_eq!(exact_sum(&[1.0, 1e-16, 1e-16]), 1.0000000000000002);
        // half-way: 1 + 2^-53 ties to even (1.0), a tiny extra breaks the tie
        let half = 2f64.powi(-53);
        assert_eq!(exact_sum(&[1.0, half]), 1.0);
        assert_eq!(exact_sum(&[1.0, half, 1e-30]), 1.0 + 2.0 * half);
    }

    #[test]
    fn errors() {
        assert_eq!(
            reduction_order_spread(&[1.0], 1, 0),
            Err(ReductionError::TooFewShuffles(1))
        );
        assert_eq!(
            reduction_order_spread(&[f64::NAN], 2, 0),
            Err(ReductionError::NonFinite)
        );
        assert!(preset("nope", 0).is_err());
    }
}
