//! Output-side agreement across runs: exact match, entity Jaccard,
//! assignment-based unit matching, trajectory edit distance and pairwise
//! semantic determinism (PSD).

pub mod hungarian;
pub mod levenshtein;

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::MetricError;
use crate::stats::{cosine_similarity, l2_norm, pairwise_mean};

pub use hungarian::max_weight_assignment;
pub use levenshtein::{edit_similarity, first_divergence, levenshtein, levenshtein_str};

pub const DEFAULT_TAU: f64 = 0.9;

fn need_two(n: usize) -> Result<(), MetricError> {
    if n < 2 {
        Err(MetricError::TooFewRuns { needed: 2, got: n })
    } else {
        Ok(())
    }
}

/// Fraction of unordered run pairs whose texts are byte-identical.
pub fn exact_match(texts: &[&str]) -> Result<f64, MetricError> {
    need_two(texts.len())?;
    Ok(pairwise_mean(texts.len(), |i, j| {
        if texts[i].as_bytes() == texts[j].as_bytes() {
            1.0
        } else {
            0.0
        }
    }))
}

/// Case-fold, trim and collapse internal whitespace runs to one space.
pub fn normalize_unit(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Information units of a generated text: sentence-like spans ending at a
/// newline, or at `.`, `!`, `?` followed by whitespace or the end of text.
/// Spans are trimmed and empty ones dropped, so `"$5.00"` stays whole.
pub fn split_units(text: &str) -> Vec<String> {
    let mut units = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let next_is_space = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
        if c == '\n' || (matches!(c, '.' | '!' | '?') && next_is_space) {
            let end = i + c.len_utf8();
            units.push(&text[start..end]);
            start = end;
        }
    }
    units.push(&text[start..]);
    units
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Set Jaccard of normalized strings; two empty sets agree (1.0).
pub fn set_jaccard(a: &[String], b: &[String]) -> f64 {
    let sa: BTreeSet<String> = a.iter().map(|s| normalize_unit(s)).collect();
    let sb: BTreeSet<String> = b.iter().map(|s| normalize_unit(s)).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Mean pairwise entity-set Jaccard.
pub fn entity_jaccard(entities: &[&[String]]) -> Result<f64, MetricError> {
    need_two(entities.len())?;
    Ok(pairwise_mean(entities.len(), |i, j| {
        set_jaccard(entities[i], entities[j])
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub score: f64,
    pub matches: usize,
    /// Assigned `(left, right, similarity)` triples that cleared `tau`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Assignment-based agreement between two lists of information units.
///
/// Unit similarity is normalized edit similarity on normalized strings. Pairs
/// below `tau` get weight 0; pairs at or above it get `bonus + similarity`
/// with `bonus = min(|u1|, |u2|) + 1`, so the maximum-weight assignment first
/// maximizes the number of matched pairs and then their total similarity.
/// The match count is therefore independent of how ties are broken.
pub fn match_score(u1: &[String], u2: &[String], tau: f64) -> Result<MatchOutcome, MetricError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(MetricError::InvalidTau(tau));
    }
    if u1.is_empty() && u2.is_empty() {
        return Ok(MatchOutcome {
            score: 1.0,
            matches: 0,
            pairs: vec![],
        });
    }
    if u1.is_empty() || u2.is_empty() {
        return Ok(MatchOutcome {
            score: 0.0,
            matches: 0,
            pairs: vec![],
        });
    }
    let a: Vec<String> = u1.iter().map(|s| normalize_unit(s)).collect();
    let b: Vec<String> = u2.iter().map(|s| normalize_unit(s)).collect();
    let sim: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| edit_similarity(x, y)).collect())
        .collect();
    let bonus = a.len().min(b.len()) as f64 + 1.0;
    let weights: Vec<Vec<f64>> = sim
        .iter()
        .map(|row| {
            row.iter()
                .map(|&s| if s >= tau { bonus + s } else { 0.0 })
                .collect()
        })
        .collect();
    let pairs: Vec<(usize, usize, f64)> = max_weight_assignment(&weights)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j, sim[i][j])))
        .filter(|&(_, _, s)| s >= tau)
        .collect();
    let matches = pairs.len();
    Ok(MatchOutcome {
        score: matches as f64 / a.len().max(b.len()) as f64,
        matches,
        pairs,
    })
}

/// Mean pairwise [`match_score`] over per-run unit lists.
pub fn mean_match_score(units: &[&[String]], tau: f64) -> Result<f64, MetricError> {
    need_two(units.len())?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(MetricError::InvalidTau(tau));
    }
    Ok(pairwise_mean(units.len(), |i, j| {
        match_score(units[i], units[j], tau)
            .expect("tau validated")
            .score
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDivergence {
    pub left: usize,
    pub right: usize,
    pub distance: usize,
    pub first_divergence: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEdit {
    pub raw: f64,
    pub normalized: f64,
    pub pairs: Vec<PairDivergence>,
}

/// Mean pairwise Levenshtein distance over action sequences, raw and
/// normalized by the longer trace.
pub fn trajectory_edit(traces: &[&[String]]) -> Result<TrajectoryEdit, MetricError> {
    need_two(traces.len())?;
    let mut pairs = Vec::new();
    let n = traces.len();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(PairDivergence {
                left: i,
                right: j,
                distance: levenshtein(traces[i], traces[j]),
                first_divergence: first_divergence(traces[i], traces[j]),
            });
        }
    }
    let count = pairs.len() as f64;
    let raw = pairs.iter().map(|p| p.distance as f64).sum::<f64>() / count;
    let normalized = pairs
        .iter()
        .map(|p| {
            let longest = traces[p.left].len().max(traces[p.right].len());
            if longest == 0 {
                0.0
            } else {
                p.distance as f64 / longest as f64
            }
        })
        .sum::<f64>()
        / count;
    Ok(TrajectoryEdit {
        raw,
        normalized,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub raw: f64,
    pub clamped: f64,
}

/// Pairwise semantic determinism: mean pairwise cosine similarity of the
/// supplied sentence embeddings.
pub fn psd(embeddings: &[Option<&[f64]>]) -> Result<Psd, MetricError> {
    need_two(embeddings.len())?;
    let vectors: Vec<&[f64]> = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| e.ok_or(MetricError::MissingEmbedding(i)))
        .collect::<Result<_, _>>()?;
    let dim = vectors[0].len();
    for v in &vectors {
        if v.len() != dim {
            return Err(MetricError::DimensionMismatch(dim, v.len()));
        }
        if l2_norm(v) == 0.0 {
            return Err(MetricError::ZeroVector);
        }
    }
    let raw = pairwise_mean(vectors.len(), |i, j| cosine_similarity(vectors[i], vectors[j]));
    Ok(Psd {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn units_split_on_sentence_ends() {
        assert_eq!(
            split_units("Wire $5.00 to acct 12. Done!  Next?\nlast"),
            strings(&["Wire $5.00 to acct 12.", "Done!", "Next?", "last"])
        );
        assert!(split_units("  \n ").is_empty());
    }

    /// Maximum number of pairs with similarity >= tau over all assignments.
    fn brute_matches(a: &[String], b: &[String], tau: f64) -> usize {
        let sim: Vec<Vec<bool>> = a
            .iter()
            .map(|x| {
                b.iter()
                    .map(|y| edit_similarity(&normalize_unit(x), &normalize_unit(y)) >= tau)
                    .collect()
            })
            .collect();
        fn go(sim: &[Vec<bool>], i: usize, used: &mut [bool]) -> usize {
            if i == sim.len() {
                return 0;
            }
            let mut best = go(sim, i + 1, used);
            for j in 0..used.len() {
                if !used[j] && sim[i][j] {
                    used[j] = true;
                    best = best.max(1 + go(sim, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(&sim, 0, &mut vec![false; b.len()])
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match(&["a", "a", "a"]).unwrap(), 1.0);
        assert!((exact_match(&["a", "a", "b"]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(exact_match(&["a", "b", "c"]).unwrap(), 0.0);
        assert!(exact_match(&["a"]).is_err());
    }

    #[test]
    fn entity_jaccard_examples() {
        let x = strings(&["Alice", "Bob"]);
        let y = strings(&["alice", "  Bob "]);
        assert_eq!(entity_jaccard(&[&x, &y]).unwrap(), 1.0);
        let z = strings(&["alice", "carol"]);
        assert!((entity_jaccard(&[&x, &z]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty: Vec<String> = vec![];
        assert_eq!(entity_jaccard(&[&empty, &empty]).unwrap(), 1.0);
        assert_eq!(entity_jaccard(&[&empty, &x]).unwrap(), 0.0);
        assert_eq!(normalize_unit("  Wire   $500\tto ACCT "), "wire $500 to acct");
    }

    #[test]
    fn match_score_examples() {
        let u = strings(&["wire $500", "acct 123"]);
        assert_eq!(match_score(&u, &u, 0.9).unwrap().score, 1.0);
        let v = strings(&["acct 123", "wire $505"]);
        let m = match_score(&u, &v, 0.8).unwrap();
        assert_eq!(m.score, 1.0);
        assert_eq!(m.matches, 2);

        let three = strings(&["acct 123", "wire $500", "memo unrelated"]);
        assert!((match_score(&u, &three, 0.8).unwrap().score - 2.0 / 3.0).abs() < 1e-15);

        let empty: Vec<String> = vec![];
        assert_eq!(match_score(&empty, &empty, 0.5).unwrap().score, 1.0);
        assert_eq!(match_score(&empty, &u, 0.5).unwrap().score, 0.0);
        assert_eq!(match_score(&u, &v, 1.5), Err(MetricError::InvalidTau(1.5)));
    }

    #[test]
    fn trajectory_examples() {
        let t = strings(&["query", "fetch", "score"]);
        let same = trajectory_edit(&[&t, &t]).unwrap();
        assert_eq!((same.raw, same.normalized), (0.0, 0.0));
        assert_eq!(same.pairs[0].first_divergence, None);

        let short = strings(&["query", "score"]);
        let r = trajectory_edit(&[&t, &short]).unwrap();
        assert_eq!(r.raw, 1.0);
        assert_eq!(r.pairs[0].first_divergence, Some(1));

        let other = strings(&["a", "b", "c"]);
        let r = trajectory_edit(&[&t, &other]).unwrap();
        assert_eq!((r.raw, r.normalized), (3.0, 1.0));
    }

    #[test]
    fn psd_examples() {
        let e = [0.1, 0.7, -0.3];
        let p = psd(&[Some(&e), Some(&e), Some(&e)]).unwrap();
        assert_eq!(p.raw, 1.0);
        let p = psd(&[Some(&[1.0, 0.0]), Some(&[0.0, 1.0])]).unwrap();
        assert_eq!(p.raw, 0.0);
        let p = psd(&[Some(&[1.0, 0.0]), Some(&[-1.0, 0.0])]).unwrap();
        assert_eq!((p.raw, p.clamped), (-1.0, 0.0));
        assert_eq!(psd(&[Some(&e), None]), Err(MetricError::MissingEmbedding(1)));
    }

    fn arb_units() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[ab]{1,4}", 0..=7)
    }

    proptest! {
        #[test]
        fn match_score_matches_brute_force(a in arb_units(), b in arb_units(), tau in 0.0f64..=1.0) {
            let got = match_score(&a, &b, tau).unwrap();
            if a.is_empty() || b.is_empty() {
                return Ok(());
            }
            prop_assert_eq!(got.matches, brute_matches(&a, &b, tau));
        }

        #[test]
        fn match_score_monotone_in_tau(a in arb_units(), b in arb_units(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(match_score(&a, &b, hi).unwrap().score <= match_score(&a, &b, lo).unwrap().score);
        }

        #[test]
        fn pairwise_metrics_permutation_invariant(
            texts in prop::collection::vec("[ab]{0,3}", 2..6),
        ) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let mut rev = refs.clone();
            rev.reverse();
            prop_assert!((exact_match(&refs).unwrap() - exact_match(&rev).unwrap()).abs() < 1e-12);
            let units: Vec<Vec<String>> = texts.iter().map(|t| t.chars().map(String::from).collect()).collect();
            let u: Vec<&[String]> = units.iter().map(Vec::as_slice).collect();
            let mut ur = u.clone();
            ur.reverse();
            prop_assert!((entity_jaccard(&u).unwrap() - entity_jaccard(&ur).unwrap()).abs() < 1e-12);
            prop_assert!((trajectory_edit(&u).unwrap().raw - trajectory_edit(&ur).unwrap().raw).abs() < 1e-12);
            if exact_match(&refs).unwrap() == 1.0 {
                prop_assert_eq!(entity_jaccard(&u).unwrap(), 1.0);
                prop_assert_eq!(trajectory_edit(&u).unwrap().raw, 0.0);
            }
        }
    }
}
