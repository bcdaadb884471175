//! The digamma function ψ(x) = d/dx ln Γ(x) for x > 0.

use crate::error::MetricError;

// B_2k / (2k) for k = 1..7
const ASYMPTOTIC: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// Recurrence `ψ(x) = ψ(x + 1) - 1/x` up to `x >= 10`, then the asymptotic
/// expansion `ln x - 1/(2x) - Σ B_2k / (2k x^2k)`.
pub fn digamma(x: f64) -> Result<f64, MetricError> {
    if x.is_nan() || x <= 0.0 || x.is_infinite() {
        return Err(MetricError::DigammaDomain(x));
    }
    let mut shift = 0.0;
    let mut x = x;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Horner in 1/x^2, highest order first
    let mut series = 0.0;
    for c in ASYMPTOTIC.iter().rev() {
        series = series * inv2 + c;
    }
    series *= inv2;
    Ok(shift + x.ln() - 0.5 / x - series)
}
