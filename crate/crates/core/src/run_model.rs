//! Run records: the data model, JSONL ingestion and grouping into run sets.
//!
//! A corpus is a JSONL file with one [`RunRecord`] per line. The payload is
//! tagged by `payload.kind`, one of `ranking`, `embedding`, `generation`,
//! `trace` or `scalar`.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use crate::canonical::{canonical_string, CanonicalError};

/// Config labels. A `BTreeMap` so iteration order is fixed.
pub type Config = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub instance_id: String,
    #[serde(default)]
    pub config: Config,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Ranking(AttributionRanking),
    Embedding(EmbeddingVector),
    Generation(GenerationOutput),
    Trace(ActionTrace),
    Scalar(ScalarPrediction),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Ranking,
    Embedding,
    Generation,
    Trace,
    Scalar,
}

impl PayloadKind {
    pub const ALL: [&'static str; 5] = ["ranking", "embedding", "generation", "trace", "scalar"];

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::Ranking => "ranking",
            PayloadKind::Embedding => "embedding",
            PayloadKind::Generation => "generation",
            PayloadKind::Trace => "trace",
            PayloadKind::Scalar => "scalar",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Ranking(_) => PayloadKind::Ranking,
            Payload::Embedding(_) => PayloadKind::Embedding,
            Payload::Generation(_) => PayloadKind::Generation,
            Payload::Trace(_) => PayloadKind::Trace,
            Payload::Scalar(_) => PayloadKind::Scalar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature_id: String,
    pub attribution: f64,
}

/// Feature attributions ordered by descending `|attribution|`, ties broken by
/// ascending `feature_id`. Use [`AttributionRanking::new`] or
/// [`AttributionRanking::canonicalize`] to establish the order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRanking {
    pub features: Vec<FeatureAttribution>,
}

impl AttributionRanking {
    pub fn new(features: Vec<FeatureAttribution>) -> Self {
        let mut r = AttributionRanking { features };
        r.canonicalize();
        r
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(id, a)| FeatureAttribution {
                    feature_id: id.into(),
                    attribution: a,
                })
                .collect(),
        )
    }

    pub fn canonicalize(&mut self) {
        self.features.sort_by(|a, b| {
            b.attribution
                .abs()
                .total_cmp(&a.attribution.abs())
                .then_with(|| a.feature_id.cmp(&b.feature_id))
        });
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Feature ids in rank order.
    pub fn ids(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.feature_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub text: String,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<LogitTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogit {
    pub token_id: String,
    pub logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitStep {
    pub top_k: Vec<TokenLogit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTrace {
    pub steps: Vec<LogitStep>,
}

impl LogitTrace {
    /// Build a trace from raw per-step logit rows; token ids are the row positions.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let steps = rows
            .iter()
            .map(|row| {
                let mut top_k: Vec<TokenLogit> = row
                    .iter()
                    .enumerate()
                    .map(|(i, &logit)| TokenLogit {
                        token_id: format!("t{i}"),
                        logit,
                    })
                    .collect();
                top_k.sort_by(|a, b| b.logit.total_cmp(&a.logit));
                LogitStep { top_k }
            })
            .collect();
        LogitTrace { steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTrace {
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarPrediction {
    pub score: f64,
    pub label: String,
}

/// All runs of one instance that share the values of the grouping keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub instance_id: String,
    pub group_key: String,
    pub records: Vec<RunRecord>,
}

impl RunSet {
    pub fn kind(&self) -> Option<PayloadKind> {
        self.records.first().map(|r| r.payload.kind())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rankings(&self) -> Vec<&AttributionRanking> {
        self.records
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::Ranking(x) => Some(x),
                _ => None,
            })
            .collect()
    }

    pub fn embeddings(&self) -> Vec<&EmbeddingVector> {
        self.records
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::Embedding(x) => Some(x),
                _ => None,
            })
            .collect()
    }

    pub fn generations(&self) -> Vec<&GenerationOutput> {
        self.records
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::Generation(x) => Some(x),
                _ => None,
            })
            .collect()
    }

    pub fn traces(&self) -> Vec<&ActionTrace> {
        self.records
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::Trace(x) => Some(x),
                _ => None,
            })
            .collect()
    }

    pub fn scalars(&self) -> Vec<&ScalarPrediction> {
        self.records
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::Scalar(x) => Some(x),
                _ => None,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("empty run_id")]
    EmptyRunId,
    #[error("empty instance_id")]
    EmptyInstanceId,
    #[error("config key {0:?} is empty or contains whitespace")]
    BadConfigKey(String),
    #[error("duplicate feature_id {0:?} in ranking")]
    DuplicateFeature(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("embedding has no dimensions")]
    EmptyEmbedding,
    #[error("logit step {step} has {found} candidates, expected {expected} (K >= 2, constant per trace)")]
    BadTopK {
        step: usize,
        found: usize,
        expected: usize,
    },
}

impl RunRecord {
    /// Check the record invariants and put rankings and logit windows in canonical order.
    pub fn validate(&mut self) -> Result<(), RecordError> {
        if self.run_id.is_empty() {
            return Err(RecordError::EmptyRunId);
        }
        if self.instance_id.is_empty() {
            return Err(RecordError::EmptyInstanceId);
        }
        if let Some(key) = self
            .config
            .keys()
            .find(|k| k.is_empty() || k.chars().any(char::is_whitespace))
        {
            return Err(RecordError::BadConfigKey(key.clone()));
        }
        match &mut self.payload {
            Payload::Ranking(r) => {
                let mut seen = std::collections::HashSet::new();
                for f in &r.features {
                    if !f.attribution.is_finite() {
                        return Err(RecordError::NonFinite("attribution"));
                    }
                    if !seen.insert(f.feature_id.as_str()) {
                        return Err(RecordError::DuplicateFeature(f.feature_id.clone()));
                    }
                }
                r.canonicalize();
            }
            Payload::Embedding(e) => {
                if e.values.is_empty() {
                    return Err(RecordError::EmptyEmbedding);
                }
                if e.values.iter().any(|v| !v.is_finite()) {
                    return Err(RecordError::NonFinite("embedding"));
                }
                if e.score.is_some_and(|s| !s.is_finite()) {
                    return Err(RecordError::NonFinite("score"));
                }
            }
            Payload::Generation(g) => {
                if let Some(emb) = &g.embedding {
                    if emb.is_empty() {
                        return Err(RecordError::EmptyEmbedding);
                    }
                    if emb.iter().any(|v| !v.is_finite()) {
                        return Err(RecordError::NonFinite("embedding"));
                    }
                }
                if let Some(trace) = &mut g.logits {
                    validate_trace(trace)?;
                }
            }
            Payload::Trace(_) => {}
            Payload::Scalar(s) => {
                if !s.score.is_finite() {
                    return Err(RecordError::NonFinite("score"));
                }
            }
        }
        Ok(())
    }
}

fn validate_trace(trace: &mut LogitTrace) -> Result<(), RecordError> {
    let expected = trace.steps.first().map_or(0, |s| s.top_k.len());
    for (step, entry) in trace.steps.iter_mut().enumerate() {
        let found = entry.top_k.len();
        if found < 2 || found != expected {
            return Err(RecordError::BadTopK {
                step,
                found,
                expected: expected.max(2),
            });
        }
        if entry.top_k.iter().any(|t| !t.logit.is_finite()) {
            return Err(RecordError::NonFinite("logit"));
        }
        entry.top_k.sort_by(|a, b| b.logit.total_cmp(&a.logit));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchemaMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineProblem {
    Json(String),
    UnknownPayloadKind(String),
    Invalid(RecordError),
    Duplicate {
        run_id: String,
        instance_id: String,
        first_line: usize,
    },
}

impl fmt::Display for LineProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineProblem::Json(e) => write!(f, "malformed record: {e}"),
            LineProblem::UnknownPayloadKind(k) => write!(
                f,
                "unknown payload kind {k:?} (expected one of {})",
                PayloadKind::ALL.join(", ")
            ),
            LineProblem::Invalid(e) => write!(f, "invalid record: {e}"),
            LineProblem::Duplicate {
                run_id,
                instance_id,
                first_line,
            } => write!(
                f,
                "duplicate (run_id, instance_id) = ({run_id:?}, {instance_id:?}), first seen on line {first_line}"
            ),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("reading input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {problem}")]
    Line { line: usize, problem: LineProblem },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub problem: LineProblem,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<RunRecord>,
    pub skipped: Vec<SkippedLine>,
}

impl Corpus {
    pub fn from_records(records: Vec<RunRecord>) -> Self {
        Corpus {
            records,
            skipped: Vec::new(),
        }
    }

    pub fn kind_counts(&self) -> BTreeMap<PayloadKind, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.payload.kind()).or_insert(0) += 1;
        }
        counts
    }
}

pub fn ingest(path: &Path, mode: SchemaMode) -> Result<Corpus, IngestError> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), mode)
}

pub fn ingest_str(text: &str, mode: SchemaMode) -> Result<Corpus, IngestError> {
    ingest_reader(text.as_bytes(), mode)
}

pub fn ingest_reader<R: BufRead>(reader: R, mode: SchemaMode) -> Result<Corpus, IngestError> {
    let mut corpus = Corpus::default();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = parse_line(&line).and_then(|record| {
            let key = (record.run_id.clone(), record.instance_id.clone());
            match seen.get(&key) {
                Some(&first_line) => Err(LineProblem::Duplicate {
                    run_id: key.0,
                    instance_id: key.1,
                    first_line,
                }),
                None => {
                    seen.insert(key, line_no);
                    Ok(record)
                }
            }
        });
        match (outcome, mode) {
            (Ok(record), _) => corpus.records.push(record),
            (Err(problem), SchemaMode::Strict) => {
                return Err(IngestError::Line {
                    line: line_no,
                    problem,
                })
            }
            (Err(problem), SchemaMode::Lenient) => corpus.skipped.push(SkippedLine {
                line: line_no,
                problem,
            }),
        }
    }
    Ok(corpus)
}

fn parse_line(line: &str) -> Result<RunRecord, LineProblem> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| LineProblem::Json(e.to_string()))?;
    if let Some(kind) = value
        .get("payload")
        .and_then(|p| p.get("kind"))
        .and_then(|k| k.as_str())
    {
        if !PayloadKind::ALL.contains(&kind) {
            return Err(LineProblem::UnknownPayloadKind(kind.to_owned()));
        }
    }
    let mut record: RunRecord =
        serde_json::from_value(value).map_err(|e| LineProblem::Json(e.to_string()))?;
    record.validate().map_err(LineProblem::Invalid)?;
    Ok(record)
}

/// Canonical JSONL for a list of records (one canonical JSON object per line).
pub fn to_canonical_jsonl(records: &[RunRecord]) -> Result<String, CanonicalError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&canonical_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Grouping

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GroupError {
    #[error("run set ({instance_id}, {group_key}) mixes payload kinds {first} and {second}")]
    MixedPayloads {
        instance_id: String,
        group_key: String,
        first: PayloadKind,
        second: PayloadKind,
    },
}

/// Canonical key for the subset of `config` named by `fixed_keys`.
/// Missing keys are omitted, so records lacking a key group together.
pub fn group_key(config: &Config, fixed_keys: &[String]) -> String {
    let subset: BTreeMap<&str, &str> = fixed_keys
        .iter()
        .filter_map(|k| config.get(k).map(|v| (k.as_str(), v.as_str())))
        .collect();
    canonical_string(&subset).expect("string maps are always canonical")
}

/// Partition records by `(instance_id, values of fixed_keys)`.
pub fn group(records: &[RunRecord], fixed_keys: &[String]) -> Result<Vec<RunSet>, GroupError> {
    let mut sets: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.instance_id.clone(), group_key(&r.config, fixed_keys));
        sets.entry(key).or_default().push(r.clone());
    }
    sets.into_iter()
        .map(|((instance_id, group_key), mut records)| {
            records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
            let first = records[0].payload.kind();
            if let Some(other) = records.iter().map(|r| r.payload.kind()).find(|k| *k != first) {
                return Err(GroupError::MixedPayloads {
                    instance_id,
                    group_key,
                    first,
                    second: other,
                });
            }
            Ok(RunSet {
                instance_id,
                group_key,
                records,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_line(run: &str, inst: &str, seed: &str) -> String {
        format!(
            r#"{{"run_id":"{run}","instance_id":"{inst}","config":{{"seed":"{seed}"}},"payload":{{"kind":"scalar","score":0.5,"label":"a"}}}}"#
        )
    }

    #[test]
    fn three_good_lines() {
        let text = [
            scalar_line("r1", "i1", "1"),
            scalar_line("r2", "i1", "2"),
            scalar_line("r3", "i1", "3"),
        ]
        .join("\n");
        let c = ingest_str(&text, SchemaMode::Strict).unwrap();
        assert_eq!(c.records.len(), 3);
        assert!(c.skipped.is_empty());
    }

    #[test]
    fn lenient_skips_missing_payload() {
        let text = [
            scalar_line("r1", "i1", "1"),
            r#"{"run_id":"r2","instance_id":"i1","config":{}}"#.to_owned(),
            scalar_line("r3", "i1", "3"),
        ]
        .join("\n");
        let c = ingest_str(&text, SchemaMode::Lenient).unwrap();
        assert_eq!(c.records.len(), 2);
        assert_eq!(c.skipped.len(), 1);
        assert_eq!(c.skipped[0].line, 2);

        let err = ingest_str(&text, SchemaMode::Strict).unwrap_err();
        assert!(matches!(err, IngestError::Line { line: 2, .. }));
    }

    #[test]
    fn duplicate_names_both_lines() {
        let text = [
            scalar_line("r1", "i1", "1"),
            scalar_line("r2", "i1", "1"),
            scalar_line("r1", "i1", "2"),
        ]
        .join("\n");
        let err = ingest_str(&text, SchemaMode::Strict).unwrap_err();
        match err {
            IngestError::Line {
                line,
                problem: LineProblem::Duplicate { first_line, .. },
            } => {
                assert_eq!((first_line, line), (1, 3));
                let msg = IngestError::Line {
                    line,
                    problem: LineProblem::Duplicate {
                        run_id: "r1".into(),
                        instance_id: "i1".into(),
                        first_line,
                    },
                }
                .to_string();
                assert!(msg.contains("line 3") && msg.contains("line 1"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        // same run_id on a different instance is fine
        let ok = [scalar_line("r1", "i1", "1"), scalar_line("r1", "i2", "1")].join("\n");
        assert_eq!(ingest_str(&ok, SchemaMode::Strict).unwrap().records.len(), 2);
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{}\n{{not json\n", scalar_line("r1", "i1", "1"));
        let err = ingest_str(&text, SchemaMode::Strict).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Line {
                line: 2,
                problem: LineProblem::Json(_)
            }
        ));
    }

    #[test]
    fn unknown_kind_is_reported() {
        let text = r#"{"run_id":"r","instance_id":"i","config":{},"payload":{"kind":"tensor"}}"#;
        let err = ingest_str(text, SchemaMode::Strict).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Line {
                problem: LineProblem::UnknownPayloadKind(ref k),
                ..
            } if k == "tensor"
        ));
    }

    #[test]
    fn bad_config_key_rejected() {
        let text = r#"{"run_id":"r","instance_id":"i","config":{"tp size":"1"},"payload":{"kind":"trace","actions":[]}}"#;
        assert!(ingest_str(text, SchemaMode::Strict).is_err());
    }

    #[test]
    fn rankings_resorted_on_ingest() {
        let text = r#"{"run_id":"r","instance_id":"i","config":{},"payload":{"kind":"ranking","features":[{"feature_id":"c","attribution":0.1},{"feature_id":"b","attribution":-0.5},{"feature_id":"a","attribution":0.5}]}}"#;
        let c = ingest_str(text, SchemaMode::Strict).unwrap();
        let Payload::Ranking(r) = &c.records[0].payload else {
            panic!()
        };
        assert_eq!(r.ids(), vec!["a", "b", "c"]);
    }

    #[test]
    fn inconsistent_top_k_rejected() {
        let text = r#"{"run_id":"r","instance_id":"i","config":{},"payload":{"kind":"generation","text":"x","logits":{"steps":[{"top_k":[{"token_id":"a","logit":1},{"token_id":"b","logit":0}]},{"top_k":[{"token_id":"a","logit":1}]}]}}}"#;
        assert!(ingest_str(text, SchemaMode::Strict).is_err());
    }

    fn rec(run: &str, inst: &str, cfg: &[(&str, &str)]) -> RunRecord {
        RunRecord {
            run_id: run.into(),
            instance_id: inst.into(),
            config: cfg.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            payload: Payload::Scalar(ScalarPrediction {
                score: 0.0,
                label: "x".into(),
            }),
            created_at: None,
        }
    }

    #[test]
    fn group_by_instance() {
        let mut records = Vec::new();
        for inst in ["i2", "i1"] {
            for seed in ["3", "1", "2"] {
                records.push(rec(&format!("s{seed}"), inst, &[("seed", seed)]));
            }
        }
        let sets = group(&records, &[]).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].instance_id, "i1");
        assert!(sets.iter().all(|s| s.len() == 3));
        let ids: Vec<_> = sets[0].records.iter().map(|r| r.run_id.as_str()).collect();
        assert_eq!(ids, vec!["s1", "s2", "s3"]);
    }

    #[test]
    fn group_empty() {
        assert!(group(&[], &["tp".into()]).unwrap().is_empty());
    }

    #[test]
    fn group_by_tp() {
        let records = vec![
            rec("a", "i", &[("tp", "1")]),
            rec("b", "i", &[("tp", "4")]),
            rec("c", "i", &[("tp", "1")]),
        ];
        let sets = group(&records, &["tp".into()]).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].group_key, r#"{"tp":"1"}"#);
        assert_eq!(sets[0].len(), 2);
        assert_eq!(sets[1].group_key, r#"{"tp":"4"}"#);
    }

    #[test]
    fn group_rejects_mixed_payloads() {
        let mut records = vec![rec("a", "i", &[])];
        let mut other = rec("b", "i", &[]);
        other.payload = Payload::Trace(ActionTrace { actions: vec![] });
        records.push(other);
        assert!(matches!(
            group(&records, &[]),
            Err(GroupError::MixedPayloads { .. })
        ));
    }

    fn arb_payload() -> impl Strategy<Value = Payload> {
        let finite = -1e6f64..1e6;
        prop_oneof![
            prop::collection::btree_map("[a-f]{1,3}", finite.clone(), 1..5).prop_map(|m| {
                Payload::Ranking(AttributionRanking::from_pairs(m))
            }),
            (prop::collection::vec(finite.clone(), 1..6), prop::option::of("[ab]"))
                .prop_map(|(values, label)| Payload::Embedding(EmbeddingVector {
                    values,
                    label,
                    score: None
                })),
            ("[a-z ]{0,12}", prop::collection::vec("[a-z]{1,4}", 0..3)).prop_map(|(text, entities)| {
                Payload::Generation(GenerationOutput {
                    text,
                    entities,
                    embedding: Some(vec![0.5, -0.25]),
                    logits: Some(LogitTrace::from_rows(&[vec![2.0, 1.0, 0.5]])),
                })
            }),
            prop::collection::vec("[a-z]{1,5}", 0..4)
                .prop_map(|actions| Payload::Trace(ActionTrace { actions })),
            (finite, "[a-z]{1,3}").prop_map(|(score, label)| Payload::Scalar(ScalarPrediction {
                score,
                label
            })),
        ]
    }

    fn arb_records() -> impl Strategy<Value = Vec<RunRecord>> {
        prop::collection::vec(
            (
                arb_payload(),
                prop::collection::btree_map("[a-z]{1,4}", "[0-9]{1,2}", 0..3),
                prop::option::of(0i64..2_000_000_000_000),
            ),
            0..6,
        )
        .prop_map(|items| {
            items
                .into_iter()
                .enumerate()
                .map(|(i, (payload, config, created_at))| RunRecord {
                    run_id: format!("r{i}"),
                    instance_id: format!("i{}", i % 2),
                    config,
                    payload,
                    created_at,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(records in arb_records()) {
            let text = to_canonical_jsonl(&records).unwrap();
            let back = ingest_str(&text, SchemaMode::Strict).unwrap();
            prop_assert_eq!(&back.records, &records);
            prop_assert_eq!(to_canonical_jsonl(&back.records).unwrap(), text);
        }

        #[test]
        fn group_is_partition(records in arb_records(), keyed in any::<bool>()) {
            // mixed kinds are legal input for this property only when grouping separates them
            let fixed: Vec<String> = if keyed { vec!["a".into()] } else { vec![] };
            let uniform: Vec<RunRecord> = records
                .into_iter()
                .map(|mut r| { r.payload = Payload::Trace(ActionTrace { actions: vec![] }); r })
                .collect();
            let sets = group(&uniform, &fixed).unwrap();
            let total: usize = sets.iter().map(RunSet::len).sum();
            prop_assert_eq!(total, uniform.len());
            for r in &uniform {
                let hits = sets.iter().filter(|s| s.records.contains(r)).count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
