//! Stability of feature-attribution rankings across repeated explainer runs:
//! top-k Jaccard, rank-biased overlap and per-feature rank span.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::MetricError;
use crate::run_model::{AttributionRanking, RunSet};
use crate::stats::{mean, try_pairwise_mean};

pub const DEFAULT_KS: [usize; 2] = [3, 5];
pub const DEFAULT_P: f64 = 0.9;

/// Jaccard index of the top-`k` feature sets.
pub fn jaccard_at_k(
    r1: &AttributionRanking,
    r2: &AttributionRanking,
    k: usize,
) -> Result<f64, MetricError> {
    if r1.is_empty() || r2.is_empty() {
        return Err(MetricError::EmptyRanking);
    }
    let len = r1.len().min(r2.len());
    if k == 0 || k > len {
        return Err(MetricError::KOutOfRange { k, len });
    }
    let s1: HashSet<&str> = r1.features[..k].iter().map(|f| f.feature_id.as_str()).collect();
    let s2: HashSet<&str> = r2.features[..k].iter().map(|f| f.feature_id.as_str()).collect();
    let inter = s1.intersection(&s2).count();
    let union = s1.union(&s2).count();
    Ok(inter as f64 / union as f64)
}

fn check_rbo_inputs(a: &[&str], b: &[&str], p: f64) -> Result<(), MetricError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MetricError::InvalidDecay(p));
    }
    if a.len() != b.len() {
        return Err(MetricError::UniverseMismatch);
    }
    Ok(())
}

fn check_same_universe(a: &[&str], b: &[&str]) -> Result<(), MetricError> {
    let ua: HashSet<&str> = a.iter().copied().collect();
    let ub: HashSet<&str> = b.iter().copied().collect();
    if ua != ub || ua.len() != a.len() || ub.len() != b.len() {
        return Err(MetricError::UniverseMismatch);
    }
    Ok(())
}

/// Prefix overlaps `|a[..d] ∩ b[..d]|` for `d = 1..=len`, computed incrementally.
fn prefix_overlaps(a: &[&str], b: &[&str]) -> Vec<usize> {
    let mut seen_a = HashSet::with_capacity(a.len());
    let mut seen_b = HashSet::with_capacity(b.len());
    let mut overlap = 0usize;
    let mut out = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        if x == y {
            overlap += 1;
        } else {
            if seen_b.contains(x) {
                overlap += 1;
            }
            if seen_a.contains(y) {
                overlap += 1;
            }
        }
        seen_a.insert(*x);
        seen_b.insert(*y);
        out.push(overlap);
    }
    out
}

/// Truncated RBO partial sums `(1-p) Σ_{d<=D} p^{d-1} A_d` for every depth `D`.
pub fn rbo_partial_sums(a: &[&str], b: &[&str], p: f64) -> Result<Vec<f64>, MetricError> {
    check_rbo_inputs(a, b, p)?;
    let mut weight = 1.0;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(a.len());
    for (i, &x) in prefix_overlaps(a, b).iter().enumerate() {
        let depth = (i + 1) as f64;
        acc += weight * (x as f64 / depth);
        weight *= p;
        out.push((1.0 - p) * acc);
    }
    Ok(out)
}

/// Extrapolated RBO over equal-length id lists (no duplicates within a list):
/// truncated sum plus the tail term `A_D p^D`, which assumes the agreement at
/// the last depth persists. Unlike [`rbo`] the lists may come from different
/// universes, so fully disjoint lists score 0.
pub fn rbo_ext_ids(a: &[&str], b: &[&str], p: f64) -> Result<f64, MetricError> {
    check_rbo_inputs(a, b, p)?;
    if a.is_empty() {
        return Err(MetricError::EmptyRanking);
    }
    if a == b {
        // (1-p) Σ p^{d-1} + p^D is exactly 1; avoid the rounding residue.
        return Ok(1.0);
    }
    let overlaps = prefix_overlaps(a, b);
    let depth = a.len();
    let mut weight = 1.0;
    let mut acc = 0.0;
    for (i, &x) in overlaps.iter().enumerate() {
        acc += weight * (x as f64 / (i + 1) as f64);
        weight *= p;
    }
    let tail = (overlaps[depth - 1] as f64 / depth as f64) * weight;
    Ok(((1.0 - p) * acc + tail).clamp(0.0, 1.0))
}

/// Extrapolated rank-biased overlap with decay `p`.
/// Both rankings must cover the same feature universe.
pub fn rbo(r1: &AttributionRanking, r2: &AttributionRanking, p: f64) -> Result<f64, MetricError> {
    let (a, b) = (r1.ids(), r2.ids());
    check_same_universe(&a, &b)?;
    rbo_ext_ids(&a, &b, p)
}

/// Truncated RBO (no tail term); identical lists score `1 - p^D`.
pub fn rbo_truncated(
    r1: &AttributionRanking,
    r2: &AttributionRanking,
    p: f64,
) -> Result<f64, MetricError> {
    let (a, b) = (r1.ids(), r2.ids());
    check_same_universe(&a, &b)?;
    let sums = rbo_partial_sums(&a, &b, p)?;
    sums.last().copied().ok_or(MetricError::EmptyRanking)
}

/// Per feature, max minus min 1-based rank position across runs.
pub fn rank_span(rankings: &[&AttributionRanking]) -> Result<BTreeMap<String, usize>, MetricError> {
    if rankings.len() < 2 {
        return Err(MetricError::TooFewRuns {
            needed: 2,
            got: rankings.len(),
        });
    }
    let universe: HashSet<&str> = rankings[0].ids().into_iter().collect();
    let mut bounds: HashMap<&str, (usize, usize)> = HashMap::new();
    for r in rankings {
        let ids = r.ids();
        if ids.len() != universe.len() || ids.iter().any(|id| !universe.contains(id)) {
            return Err(MetricError::UniverseMismatch);
        }
        for (pos, id) in ids.into_iter().enumerate() {
            let rank = pos + 1;
            let e = bounds.entry(id).or_insert((rank, rank));
            e.0 = e.0.min(rank);
            e.1 = e.1.max(rank);
        }
    }
    Ok(bounds
        .into_iter()
        .map(|(id, (lo, hi))| (id.to_owned(), hi - lo))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStabilityResult {
    pub instance_id: String,
    pub group_key: String,
    pub n_runs: usize,
    pub p: f64,
    /// Keyed by `k` as a decimal string so the map serializes as a JSON object.
    pub j_at_k: BTreeMap<String, f64>,
    pub rbo: f64,
    pub rbo_truncated: f64,
    pub rank_span: BTreeMap<String, usize>,
    pub max_rank_span: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub p: f64,
    pub ks: Vec<usize>,
    pub n_sets: usize,
    pub mean_j_at_k: BTreeMap<String, f64>,
    pub mean_rbo: f64,
    pub mean_rbo_truncated: f64,
    pub max_rank_span: usize,
    pub per_set: Vec<RankStabilityResult>,
    pub warnings: Vec<String>,
}

pub fn set_stability(set: &RunSet, ks: &[usize], p: f64) -> Result<RankStabilityResult, MetricError> {
    let rankings = set.rankings();
    if rankings.len() != set.len() {
        return Err(MetricError::WrongPayload {
            expected: "ranking",
            found: set.kind().map(|k| k.to_string()).unwrap_or_default(),
        });
    }
    let n = rankings.len();
    if n < 2 {
        return Err(MetricError::TooFewRuns { needed: 2, got: n });
    }
    let mut j_at_k = BTreeMap::new();
    for &k in ks {
        let m = try_pairwise_mean(n, |i, j| jaccard_at_k(rankings[i], rankings[j], k))?;
        j_at_k.insert(k.to_string(), m);
    }
    let rbo_mean = try_pairwise_mean(n, |i, j| rbo(rankings[i], rankings[j], p))?;
    let rbo_trunc_mean = try_pairwise_mean(n, |i, j| rbo_truncated(rankings[i], rankings[j], p))?;
    let spans = rank_span(&rankings)?;
    let max_rank_span = spans.values().copied().max().unwrap_or(0);
    Ok(RankStabilityResult {
        instance_id: set.instance_id.clone(),
        group_key: set.group_key.clone(),
        n_runs: n,
        p,
        j_at_k,
        rbo: rbo_mean,
        rbo_truncated: rbo_trunc_mean,
        rank_span: spans,
        max_rank_span,
    })
}

/// Per-set stability plus means over sets. Sets with fewer than two runs are
/// skipped and reported in `warnings`. Returns `None` when no set qualifies.
pub fn stability_summary(
    sets: &[RunSet],
    ks: &[usize],
    p: f64,
) -> Result<Option<RankSummary>, MetricError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MetricError::InvalidDecay(p));
    }
    let mut per_set = Vec::new();
    let mut warnings = Vec::new();
    for set in sets {
        if set.len() < 2 {
            warnings.push(format!(
                "rank: set ({}, {}) has {} run(s); excluded",
                set.instance_id,
                set.group_key,
                set.len()
            ));
            continue;
        }
        per_set.push(set_stability(set, ks, p)?);
    }
    if per_set.is_empty() {
        return Ok(None);
    }
    let mean_j_at_k = ks
        .iter()
        .map(|k| {
            let key = k.to_string();
            let vals: Vec<f64> = per_set.iter().map(|r| r.j_at_k[&key]).collect();
            (key, mean(&vals))
        })
        .collect();
    let rbos: Vec<f64> = per_set.iter().map(|r| r.rbo).collect();
    let truncs: Vec<f64> = per_set.iter().map(|r| r.rbo_truncated).collect();
    Ok(Some(RankSummary {
        p,
        ks: ks.to_vec(),
        n_sets: per_set.len(),
        mean_j_at_k,
        mean_rbo: mean(&rbos),
        mean_rbo_truncated: mean(&truncs),
        max_rank_span: per_set.iter().map(|r| r.max_rank_span).max().unwrap_or(0),
        per_set,
        warnings,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranking(ids: &[&str]) -> AttributionRanking {
        let n = ids.len();
        AttributionRanking::from_pairs(ids.iter().enumerate().map(|(i, id)| (*id, (n - i) as f64)))
    }

    /// Direct evaluation of the extrapolated RBO, sets rebuilt at every depth.
    fn rbo_oracle(a: &[&str], b: &[&str], p: f64) -> f64 {
        let d_max = a.len();
        let agreement = |d: usize| {
            let sa: HashSet<&str> = a[..d].iter().copied().collect();
            let sb: HashSet<&str> = b[..d].iter().copied().collect();
            sa.intersection(&sb).count() as f64 / d as f64
        };
        let mut sum = 0.0;
        for d in 1..=d_max {
            sum += p.powi(d as i32 - 1) * agreement(d);
        }
        (1.0 - p) * sum + agreement(d_max) * p.powi(d_max as i32)
    }

    #[test]
    fn jaccard_examples() {
        let a = ranking(&["a", "b", "c", "d"]);
        assert_eq!(jaccard_at_k(&a, &a, 2).unwrap(), 1.0);
        let b = ranking(&["a", "b", "d", "c"]);
        assert_eq!(jaccard_at_k(&a, &b, 3).unwrap(), 0.5);
        let c = ranking(&["x", "y", "a", "b"]);
        assert_eq!(jaccard_at_k(&a, &c, 2).unwrap(), 0.0);
        assert!(matches!(
            jaccard_at_k(&a, &b, 5),
            Err(MetricError::KOutOfRange { k: 5, len: 4 })
        ));
    }

    #[test]
    fn rbo_examples() {
        let a = ranking(&["a", "b", "c"]);
        assert_eq!(rbo(&a, &a, 0.9).unwrap(), 1.0);
        let ab = ranking(&["a", "b"]);
        let ba = ranking(&["b", "a"]);
        assert!((rbo(&ab, &ba, 0.9).unwrap() - 0.90).abs() < 1e-12);
        assert!((rbo_truncated(&ab, &ba, 0.9).unwrap() - 0.09).abs() < 1e-12);
        assert!((rbo_truncated(&a, &a, 0.9).unwrap() - (1.0 - 0.9f64.powi(3))).abs() < 1e-12);
    }

    #[test]
    fn rbo_disjoint_and_errors() {
        assert_eq!(rbo_ext_ids(&["a", "b", "c"], &["x", "y", "z"], 0.9).unwrap(), 0.0);
        // rankings over different universes are rejected
        let a = ranking(&["a", "b"]);
        let b = ranking(&["c", "d"]);
        assert_eq!(rbo(&a, &b, 0.9), Err(MetricError::UniverseMismatch));
        assert_eq!(rbo_ext_ids(&["a", "b"], &["b", "a"], 1.0), Err(MetricError::InvalidDecay(1.0)));
        assert_eq!(rbo_ext_ids(&["a", "b"], &["b", "a"], 0.0), Err(MetricError::InvalidDecay(0.0)));
    }

    #[test]
    fn rbo_matches_oracle_on_all_permutation_pairs() {
        let items = ["a", "b", "c", "d", "e"];
        for n in 1..=5 {
            let perms = permutations(&items[..n]);
            for x in &perms {
                for y in &perms {
                    for p in [0.5, 0.9, 0.98] {
                        let got = rbo_ext_ids(x, y, p).unwrap();
                        let want = rbo_oracle(x, y, p);
                        assert!((got - want).abs() <= 1e-12, "{x:?} {y:?} {p}: {got} vs {want}");
                    }
                }
            }
        }
    }

    pub(crate) fn permutations<'a>(items: &[&'a str]) -> Vec<Vec<&'a str>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn rank_span_examples() {
        let same = ranking(&["a", "b", "c"]);
        let spans = rank_span(&[&same, &same, &same]).unwrap();
        assert!(spans.values().all(|&s| s == 0));

        let r1 = ranking(&["a", "b", "x", "c", "d", "e", "f"]);
        let r2 = ranking(&["a", "b", "c", "d", "e", "f", "x"]);
        assert_eq!(rank_span(&[&r1, &r2]).unwrap()["x"], 4);

        let single = ranking(&["only"]);
        assert_eq!(rank_span(&[&single, &single]).unwrap()["only"], 0);

        let other = ranking(&["a", "b", "z"]);
        assert_eq!(rank_span(&[&same, &other]), Err(MetricError::UniverseMismatch));
    }

    fn arb_perm_pair() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
        (1usize..9).prop_flat_map(|n| {
            let ids: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
            (Just(ids.clone()).prop_shuffle(), Just(ids).prop_shuffle())
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((a, b) in arb_perm_pair(), p in 0.05f64..0.95, k in 1usize..9) {
            let ra: Vec<&str> = a.iter().map(String::as_str).collect();
            let rb: Vec<&str> = b.iter().map(String::as_str).collect();
            let x = rbo_ext_ids(&ra, &rb, p).unwrap();
            let y = rbo_ext_ids(&rb, &ra, p).unwrap();
            prop_assert!((x - y).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&x));
            let sums = rbo_partial_sums(&ra, &rb, p).unwrap();
            prop_assert!(sums.windows(2).all(|w| w[1] >= w[0]));
            if k <= a.len() {
                let r1 = ranking(&ra);
                let r2 = ranking(&rb);
                let j = jaccard_at_k(&r1, &r2, k).unwrap();
                prop_assert_eq!(j, jaccard_at_k(&r2, &r1, k).unwrap());
                prop_assert!((0.0..=1.0).contains(&j));
            }
        }

        #[test]
        fn attribution_scale_invariance(
            attrs in prop::collection::vec(prop::collection::vec(-10f64..10.0, 6), 2..5),
            c in 0.01f64..100.0,
        ) {
            let mk = |row: &Vec<f64>, scale: f64| AttributionRanking::from_pairs(
                row.iter().enumerate().map(|(i, a)| (format!("f{i}"), a * scale)));
            let base: Vec<_> = attrs.iter().map(|r| mk(r, 1.0)).collect();
            let scaled: Vec<_> = attrs.iter().map(|r| mk(r, c)).collect();
            // scaling can merge values that differed by less than an ulp; only compare
            // when the order is unchanged
            prop_assume!(base.iter().zip(&scaled).all(|(a, b)| a.ids() == b.ids()));
            let br: Vec<&AttributionRanking> = base.iter().collect();
            let sr: Vec<&AttributionRanking> = scaled.iter().collect();
            prop_assert_eq!(rank_span(&br).unwrap(), rank_span(&sr).unwrap());
            prop_assert_eq!(rbo(br[0], br[1], 0.9).unwrap(), rbo(sr[0], sr[1], 0.9).unwrap());
            prop_assert_eq!(jaccard_at_k(br[0], br[1], 3).unwrap(), jaccard_at_k(sr[0], sr[1], 3).unwrap());
        }
    }
}
