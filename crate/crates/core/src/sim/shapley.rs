//! Toy tabular models and Shapley attribution, exact and sampled.

use serde::{Deserialize, Serialize};

use super::rng::SimRng;

pub const MAX_EXACT_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub j: usize,
    pub l: usize,
    pub weight: f64,
}

/// `f(z) = Σ_j w_j z_j + Σ_(j,l) w_jl z_j z_l`, evaluated against a single
/// baseline vector for off-coalition features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub kind: ModelKind,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub pairs: Vec<PairTerm>,
    pub baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapleyError {
    #[error("exact enumeration supports at most {MAX_EXACT_FEATURES} features, model has {0}")]
    TooManyFeatures(usize),
    #[error("instance has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("n_samples must be >= 1")]
    NoSamples,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    PermutationMc,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Exact => "exact",
            Estimator::PermutationMc => "permutation_mc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEstimate {
    pub phi: Vec<f64>,
    pub estimator: Estimator,
    pub n_samples: u64,
    pub seed: u64,
}

impl ToyModel {
    pub fn linear(weights: Vec<f64>, baseline: Vec<f64>) -> Result<Self, ShapleyError> {
        let m = ToyModel {
            kind: ModelKind::Linear,
            weights,
            pairs: Vec::new(),
            baseline,
        };
        m.check()?;
        Ok(m)
    }

    pub fn interaction(
        weights: Vec<f64>,
        pairs: Vec<PairTerm>,
        baseline: Vec<f64>,
    ) -> Result<Self, ShapleyError> {
        let m = ToyModel {
            kind: ModelKind::Interaction,
            weights,
            pairs,
            baseline,
        };
        m.check()?;
        Ok(m)
    }

    /// Random interaction model: weights and baseline ~ N(0, 1), `n_pairs`
    /// distinct pairwise terms with N(0, 0.25) weights.
    pub fn random_interaction(m: usize, n_pairs: usize, rng: &mut SimRng) -> Self {
        let weights = (0..m).map(|_| rng.normal()).collect();
        let baseline = (0..m).map(|_| rng.normal()).collect();
        let mut pairs: Vec<PairTerm> = Vec::new();
        let max_pairs = m * m.saturating_sub(1) / 2;
        while pairs.len() < n_pairs.min(max_pairs) {
            let a = rng.below(m as u64) as usize;
            let b = rng.below(m as u64) as usize;
            let (j, l) = (a.min(b), a.max(b));
            if j == l || pairs.iter().any(|p| p.j == j && p.l == l) {
                continue;
            }
            pairs.push(PairTerm {
                j,
                l,
                weight: 0.5 * rng.normal(),
            });
        }
        ToyModel {
            kind: ModelKind::Interaction,
            weights,
            pairs,
            baseline,
        }
    }

    pub fn random_linear(m: usize, rng: &mut SimRng) -> Self {
        ToyModel {
            kind: ModelKind::Linear,
            weights: (0..m).map(|_| rng.normal()).collect(),
            pairs: Vec::new(),
            baseline: (0..m).map(|_| rng.normal()).collect(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn check(&self) -> Result<(), ShapleyError> {
        let m = self.weights.len();
        if self.baseline.len() != m {
            return Err(ShapleyError::InvalidModel(format!(
                "baseline has {} entries, weights {m}",
                self.baseline.len()
            )));
        }
        if self.kind == ModelKind::Linear && !self.pairs.is_empty() {
            return Err(ShapleyError::InvalidModel("linear model with pair terms".into()));
        }
        if let Some(p) = self.pairs.iter().find(|p| p.j >= m || p.l >= m || p.j == p.l) {
            return Err(ShapleyError::InvalidModel(format!(
                "bad pair term ({}, {})",
                p.j, p.l
            )));
        }
        Ok(())
    }

    fn check_instance(&self, x: &[f64]) -> Result<(), ShapleyError> {
        self.check()?;
        if x.len() != self.n_features() {
            return Err(ShapleyError::DimensionMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut out: f64 = self.weights.iter().zip(z).map(|(w, v)| w * v).sum();
        for p in &self.pairs {
            out += p.weight * z[p.j] * z[p.l];
        }
        out
    }

    /// Adjacency: for each feature, the `(partner, weight)` of its pair terms.
    fn neighbours(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n_features()];
        for p in &self.pairs {
            adj[p.j].push((p.l, p.weight));
            adj[p.l].push((p.j, p.weight));
        }
        adj
    }
}

/// Change in `f` when feature `j` switches from baseline to `x_j` while the
/// other features hold the values in `z`.
#[inline]
fn marginal(model: &ToyModel, adj: &[Vec<(usize, f64)>], x: &[f64], z: &[f64], j: usize) -> f64 {
    let dj = x[j] - model.baseline[j];
    let mut coupled = model.weights[j];
    for &(l, w) in &adj[j] {
        coupled += w * z[l];
    }
    dj * coupled
}

/// Exact Shapley values by enumerating all `2^M` coalitions with weights
/// `|S|! (M - |S| - 1)! / M!`.
pub fn shapley_exact(model: &ToyModel, x: &[f64]) -> Result<ShapleyEstimate, ShapleyError> {
    model.check_instance(x)?;
    let m = model.n_features();
    if m > MAX_EXACT_FEATURES {
        return Err(ShapleyError::TooManyFeatures(m));
    }
    let adj = model.neighbours();
    let n_masks = 1usize << m;

    // v[mask] = f(x on mask, baseline elsewhere) - f(baseline), built by adding
    // the highest set bit to the already-computed smaller coalition.
    let mut values = vec![0.0f64; n_masks];
    for mask in 1..n_masks {
        let top = usize::BITS as usize - 1 - mask.leading_zeros() as usize;
        let rest = mask & !(1 << top);
        let mut coupled = model.weights[top];
        for &(l, w) in &adj[top] {
            let zl = if rest & (1 << l) != 0 { x[l] } else { model.baseline[l] };
            coupled += w * zl;
        }
        values[mask] = values[rest] + (x[top] - model.baseline[top]) * coupled;
    }

    // weight[s] = s! (m - s - 1)! / m!, computed as 1 / (m * C(m-1, s))
    let weights: Vec<f64> = (0..m).map(|s| 1.0 / (m as f64 * binomial(m - 1, s))).collect();
    let mask_weight: Vec<f64> = (0..n_masks)
        .map(|mask| weights[(mask.count_ones() as usize).min(m - 1)])
        .collect();
    // masks without bit j come in contiguous runs of length 2^j, each paired
    // with the run that has bit j set; runs are summed locally, then in order
    let phi = (0..m)
        .map(|j| {
            let bit = 1usize << j;
            let mut acc = 0.0f64;
            for start in (0..n_masks).step_by(2 * bit) {
                let without = &values[start..start + bit];
                let with = &values[start + bit..start + 2 * bit];
                let w = &mask_weight[start..start + bit];
                let mut run = 0.0f64;
                for k in 0..bit {
                    run += w[k] * (with[k] - without[k]);
                }
                acc += run;
            }
            acc
        })
        .collect();
    Ok(ShapleyEstimate {
        phi,
        estimator: Estimator::Exact,
        n_samples: n_masks as u64,
        seed: 0,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Permutation-sampling estimate: average marginal contribution of each
/// feature over `n_samples` uniformly random orderings.
pub fn shapley_mc(
    model: &ToyModel,
    x: &[f64],
    n_samples: u64,
    seed: u64,
) -> Result<ShapleyEstimate, ShapleyError> {
    model.check_instance(x)?;
    if n_samples == 0 {
        return Err(ShapleyError::NoSamples);
    }
    let m = model.n_features();
    let adj = model.neighbours();
    let mut rng = SimRng::new(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut sums = vec![0.0f64; m];
    let mut z = vec![0.0f64; m];
    for _ in 0..n_samples {
        rng.shuffle(&mut order);
        z.copy_from_slice(&model.baseline);
        for &j in &order {
            sums[j] += marginal(model, &adj, x, &z, j);
            z[j] = x[j];
        }
    }
    let n = n_samples as f64;
    Ok(ShapleyEstimate {
        phi: sums.into_iter().map(|s| s / n).collect(),
        estimator: Estimator::PermutationMc,
        n_samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_closed_form() {
        let model = ToyModel::linear(vec![2.0, -1.0, 0.5], vec![1.0, 0.0, -2.0]).unwrap();
        let x = [3.0, 4.0, 2.0];
        let phi = shapley_exact(&model, &x).unwrap().phi;
        let want = [4.0, -4.0, 2.0];
        for (a, b) in phi.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_instance_gives_zero() {
        let mut rng = SimRng::new(5);
        let model = ToyModel::random_interaction(6, 8, &mut rng);
        let x = model.baseline.clone();
        assert!(shapley_exact(&model, &x).unwrap().phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn two_feature_product() {
        let model = ToyModel::interaction(
            vec![0.0, 0.0],
            vec![PairTerm { j: 0, l: 1, weight: 1.0 }],
            vec![0.0, 0.0],
        )
        .unwrap();
        let phi = shapley_exact(&model, &[1.0, 1.0]).unwrap().phi;
        assert_eq!(phi, vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_oversized_models() {
        let model = ToyModel::linear(vec![1.0; 21], vec![0.0; 21]).unwrap();
        assert_eq!(
            shapley_exact(&model, &[0.0; 21]),
            Err(ShapleyError::TooManyFeatures(21))
        );
        assert!(matches!(
            shapley_exact(&model, &[0.0; 3]),
            Err(ShapleyError::DimensionMismatch { .. })
        ));
        assert_eq!(shapley_mc(&model, &[0.0; 21], 0, 1), Err(ShapleyError::NoSamples));
    }

    #[test]
    fn efficiency_on_random_models() {
        let mut rng = SimRng::new(99);
        for m in [1usize, 2, 5, 9, 12] {
            let model = ToyModel::random_interaction(m, m * 2, &mut rng);
            let x: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
            let phi = shapley_exact(&model, &x).unwrap().phi;
            let gap = model.eval(&x) - model.eval(&model.baseline);
            assert!((phi.iter().sum::<f64>() - gap).abs() < 1e-9, "m = {m}");
        }
    }

    #[test]
    fn symmetry_and_dummy() {
        // features 0 and 1 exchangeable, feature 2 dummy
        let model = ToyModel::interaction(
            vec![1.0, 1.0, 0.0, 0.7],
            vec![
                PairTerm { j: 0, l: 3, weight: 0.5 },
                PairTerm { j: 1, l: 3, weight: 0.5 },
            ],
            vec![0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let phi = shapley_exact(&model, &[2.0, 2.0, 5.0, 1.0]).unwrap().phi;
        assert!((phi[0] - phi[1]).abs() < 1e-12);
        assert_eq!(phi[2], 0.0);
    }

    #[test]
    fn mc_is_seed_deterministic() {
        let mut rng = SimRng::new(1);
        let model = ToyModel::random_interaction(8, 10, &mut rng);
        let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let a = shapley_mc(&model, &x, 50, 7).unwrap();
        let b = shapley_mc(&model, &x, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = shapley_mc(&model, &x, 50, 8).unwrap();
        assert_ne!(a.phi, c.phi);
    }

    #[test]
    fn mc_converges_to_exact() {
        let mut rng = SimRng::new(2024);
        let model = ToyModel::random_interaction(8, 4, &mut rng);
        // per-sample spread grows with |x - b|^2; half-unit offsets keep the
        // standard error near 1e-3 at this budget
        let x: Vec<f64> = model.baseline.iter().map(|b| b + 0.5 * rng.normal()).collect();
        let exact = shapley_exact(&model, &x).unwrap().phi;
        let mc = shapley_mc(&model, &x, 100_000, 3).unwrap().phi;
        for (e, a) in exact.iter().zip(&mc) {
            assert!((e - a).abs() < 1e-2, "{e} vs {a}");
        }
    }

    #[test]
    fn mc_linear_has_no_variance() {
        let model = ToyModel::linear(vec![1.5, -2.0], vec![0.0, 1.0]).unwrap();
        let mc = shapley_mc(&model, &[1.0, 2.0], 3, 9).unwrap().phi;
        assert_eq!(mc, vec![1.5, -2.0]);
    }
}
