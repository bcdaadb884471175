//! Small sequential aggregation helpers. Every mean in the toolkit goes
//! through these so the summation order is fixed.

/// Mean of `f(i, j)` over all unordered pairs `i < j` of `n` items,
/// visited in lexicographic order.
pub fn pairwise_mean<F: FnMut(usize, usize) -> f64>(n: usize, mut f: F) -> f64 {
    debug_assert!(n >= 2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            sum += f(i, j);
            count += 1;
        }
    }
    sum / count as f64
}

/// Like [`pairwise_mean`] but the pair function may fail.
pub fn try_pairwise_mean<E, F>(n: usize, mut f: F) -> Result<f64, E>
where
    F: FnMut(usize, usize) -> Result<f64, E>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            sum += f(i, j)?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (denominator `n - 1`).
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Cosine similarity on defensively L2-normalized copies of `a` and `b`.
///
/// The final ratio is `dot / sqrt(|u|^2 |w|^2)` so that identical inputs give
/// exactly 1.0 (`sqrt(x*x) == x` in IEEE arithmetic).
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let u = normalized(a);
    let w = normalized(b);
    let dot: f64 = u.iter().zip(&w).map(|(x, y)| x * y).sum();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    let ww: f64 = w.iter().map(|x| x * x).sum();
    (dot / (uu * ww).sqrt()).clamp(-1.0, 1.0)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let n = l2_norm(v);
    v.iter().map(|x| x / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_visited_once() {
        let mut seen = Vec::new();
        let m = pairwise_mean(4, |i, j| {
            seen.push((i, j));
            1.0
        });
        assert_eq!(m, 1.0);
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], (0, 1));
        assert_eq!(seen[5], (2, 3));
    }

    #[test]
    fn variance() {
        assert_eq!(sample_variance(&[0.0, 1.0]), 0.5);
        assert!((sample_variance(&[0.4, 0.6]) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn identical_vectors_exactly_one() {
        let v = [0.3, -1.7, 2.9, 1e-3, 12.5];
        assert_eq!(cosine_similarity(&v, &v), 1.0);
    }
}
