//! The layered determinism report: one section per layer (rank, embedding,
//! sequence, logit, prediction), computed from an ingested corpus.
//!
//! All aggregation is sequential in sorted `(instance_id, group_key, run_id)`
//! order, so identical inputs and parameters give a byte-identical
//! canonical `report.json`.

mod markdown;
pub mod params;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::canonical::{canonical_serialize, to_canonical_value, CanonicalError};
use crate::embedding::{d_cos, ddr, flip_rate, DdrResult, FlipStats};
use crate::error::MetricError;
use crate::logit::{calibrate_theta, tdi, LogitMapping};
use crate::rank::{stability_summary, RankSummary};
use crate::run_model::{
    group, ingest_reader, Corpus, GroupError, IngestError, LogitTrace, PayloadKind, RunRecord,
    RunSet,
};
use crate::sequence::{entity_jaccard, exact_match, mean_match_score, psd, split_units, trajectory_edit};
use crate::stats::mean;

pub use markdown::render_markdown;
pub use params::{
    parse_layers, resolve, AuditParams, GateOp, GateRule, Layer, ParamError, ParamOverrides,
    ParamSource, Selector,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "detaudit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("{layer} layer: {source}")]
    Metric {
        layer: Layer,
        #[source]
        source: MetricError,
    },
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("no applicable metric: {0}")]
    Empty(String),
    #[error("input: {0}")]
    Ingest(#[from] IngestError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AuditError {
    /// Process exit code: 3 when no metric applies, 2 for any other failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Empty(_) => 3,
            _ => 2,
        }
    }
}

fn metric_err(layer: Layer) -> impl Fn(MetricError) -> AuditError {
    move |source| AuditError::Metric { layer, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub ks: Vec<usize>,
    pub p: f64,
    pub tau: f64,
    pub theta_eu: Option<f64>,
    pub theta_quantile: f64,
    pub theta_reference: Option<String>,
    pub logit_top_k: usize,
    pub logit_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub tool_version: String,
    pub input_sha256: String,
    pub n_records: usize,
    pub n_skipped_lines: usize,
    pub schema_mode: String,
    pub layers_requested: Vec<Layer>,
    pub layers_reported: Vec<Layer>,
    pub fixed_keys: Vec<String>,
    pub thresholds: Thresholds,
    pub param_sources: BTreeMap<String, ParamSource>,
    pub conventions: BTreeMap<String, String>,
}

pub fn conventions() -> BTreeMap<String, String> {
    [
        ("aggregation", "sequential f64 means over unordered run pairs, then over run sets in (instance_id, group_key) order"),
        ("rbo", "extrapolated RBO (rbo_truncated reported alongside); identical lists score 1"),
        ("flip_rate", "an instance flips when its runs do not all share one label; modal ties go to the smallest label"),
        ("ddr_estimator", "signal D_i = per-set mean score over runs, noise = residuals around it; DDR = Var(D) / mean Var(noise), unbiased; null with perfectly_deterministic when noise is 0"),
        ("match_units", "texts split into sentence units; similarity 1 - lev/max_len on case-folded, whitespace-collapsed units; optimal assignment"),
        ("psd", "mean pairwise cosine of supplied sentence embeddings, L2-normalized"),
        ("logit_mapping", "alpha_k = logit_k - min(top-k window) + epsilon"),
        ("tdi", "share of tokens with EU < theta_eu; theta calibrated as the midpoint-interpolated quantile of pooled reference-trace EU unless fixed"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSetResult {
    pub instance_id: String,
    pub group_key: String,
    pub n_runs: usize,
    pub d_cos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSection {
    pub n_sets: usize,
    pub mean_d_cos: f64,
    pub max_d_cos: f64,
    pub flip: Option<FlipStats>,
    pub ddr: Option<DdrResult>,
    pub per_set: Vec<EmbeddingSetResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSetResult {
    pub instance_id: String,
    pub group_key: String,
    pub n_runs: usize,
    pub em: f64,
    pub entity_jaccard: f64,
    pub match_score: f64,
    pub psd: Option<f64>,
    pub psd_raw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub n_sets: usize,
    pub tau: f64,
    pub mean_em: f64,
    pub mean_entity_jaccard: f64,
    pub mean_match_score: f64,
    /// Omitted when any set has a run without an embedding.
    pub mean_psd: Option<f64>,
    pub psd_omitted_reason: Option<String>,
    pub per_set: Vec<GenerationSetResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSetResult {
    pub instance_id: String,
    pub group_key: String,
    pub n_runs: usize,
    pub edit_raw: f64,
    pub edit_normalized: f64,
    /// Earliest divergence position over all run pairs, if any pair differs.
    pub first_divergence: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub n_sets: usize,
    pub mean_edit_raw: f64,
    pub mean_edit_normalized: f64,
    pub per_set: Vec<TraceSetResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSection {
    pub generation: Option<GenerationSummary>,
    pub trajectory: Option<TraceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTdi {
    pub instance_id: String,
    pub run_id: String,
    pub n_tokens: usize,
    pub tdi: f64,
    pub flagged_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitSection {
    pub theta_eu: f64,
    /// `flag` when fixed by the caller, `calibrated` otherwise.
    pub theta_origin: String,
    pub theta_quantile: f64,
    pub theta_reference: Option<String>,
    pub mapping: LogitMapping,
    pub n_reference_traces: usize,
    pub n_evaluated_traces: usize,
    pub n_tokens: usize,
    pub n_flagged_tokens: usize,
    pub mean_tdi: f64,
    pub min_tdi: f64,
    /// Mean TDI of the reference traces themselves.
    pub reference_tdi: f64,
    pub per_trace: Vec<TraceTdi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSection {
    pub n_sets: usize,
    pub ddr: Option<DdrResult>,
    pub flip: FlipStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateCheck {
    pub rule: String,
    pub value: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub passed: bool,
    pub checks: Vec<GateCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterminismReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub rank: Option<RankSummary>,
    pub embedding: Option<EmbeddingSection>,
    pub sequence: Option<SequenceSection>,
    pub logit: Option<LogitSection>,
    pub prediction: Option<PredictionSection>,
    pub gate: Option<GateOutcome>,
    pub warnings: Vec<String>,
}

impl DeterminismReport {
    pub fn to_canonical_json(&self) -> Result<Vec<u8>, CanonicalError> {
        let mut bytes = canonical_serialize(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn to_value(&self) -> Result<Value, CanonicalError> {
        to_canonical_value(self)
    }

    /// Scalar metrics addressable by gate rules, e.g. `rank.j@3`.
    pub fn gate_metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if let Some(r) = &self.rank {
            for (k, v) in &r.mean_j_at_k {
                m.insert(format!("rank.j@{k}"), *v);
            }
            m.insert("rank.rbo".into(), r.mean_rbo);
            m.insert("rank.rbo_truncated".into(), r.mean_rbo_truncated);
            m.insert("rank.max_rank_span".into(), r.max_rank_span as f64);
        }
        if let Some(e) = &self.embedding {
            m.insert("embedding.d_cos".into(), e.mean_d_cos);
            if let Some(f) = &e.flip {
                m.insert("embedding.flip_rate".into(), f.flip_rate);
                m.insert("embedding.majority_agreement".into(), f.majority_agreement);
            }
            if let Some(d) = e.ddr.and_then(|d| d.ddr) {
                m.insert("embedding.ddr".into(), d);
            }
        }
        if let Some(s) = &self.sequence {
            if let Some(g) = &s.generation {
                m.insert("sequence.em".into(), g.mean_em);
                m.insert("sequence.entity_jaccard".into(), g.mean_entity_jaccard);
                m.insert("sequence.match_score".into(), g.mean_match_score);
                if let Some(p) = g.mean_psd {
                    m.insert("sequence.psd".into(), p);
                }
            }
            if let Some(t) = &s.trajectory {
                m.insert("sequence.trajectory_edit".into(), t.mean_edit_raw);
                m.insert("sequence.trajectory_edit_normalized".into(), t.mean_edit_normalized);
            }
        }
        if let Some(l) = &self.logit {
            m.insert("logit.tdi".into(), l.mean_tdi);
            m.insert("logit.min_tdi".into(), l.min_tdi);
        }
        if let Some(p) = &self.prediction {
            m.insert("prediction.flip_rate".into(), p.flip.flip_rate);
            m.insert("prediction.majority_agreement".into(), p.flip.majority_agreement);
            if let Some(d) = p.ddr.and_then(|d| d.ddr) {
                m.insert("prediction.ddr".into(), d);
            }
        }
        m
    }

    pub fn evaluate_gate(&self, rules: &[GateRule]) -> GateOutcome {
        let metrics = self.gate_metrics();
        let checks: Vec<GateCheck> = rules
            .iter()
            .map(|r| {
                let value = metrics.get(&r.metric).copied();
                GateCheck {
                    rule: r.to_string(),
                    value,
                    passed: value.is_some_and(|v| r.op.holds(v, r.bound)),
                }
            })
            .collect();
        GateOutcome {
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

fn by_kind(records: &[RunRecord], kind: PayloadKind) -> Vec<RunRecord> {
    records
        .iter()
        .filter(|r| r.payload.kind() == kind)
        .cloned()
        .collect()
}

/// Keep sets with at least two runs, warning about the rest.
fn multi_run(sets: Vec<RunSet>, layer: Layer, warnings: &mut Vec<String>) -> Vec<RunSet> {
    sets.into_iter()
        .filter(|s| {
            let ok = s.len() >= 2;
            if !ok {
                warnings.push(format!(
                    "{layer}: set ({}, {}) has {} run(s); excluded",
                    s.instance_id,
                    s.group_key,
                    s.len()
                ));
            }
            ok
        })
        .collect()
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

fn embedding_section(
    sets: &[RunSet],
    warnings: &mut Vec<String>,
) -> Result<EmbeddingSection, AuditError> {
    let err = metric_err(Layer::Embedding);
    let mut per_set = Vec::with_capacity(sets.len());
    for s in sets {
        let embs = s.embeddings();
        let vectors: Vec<&[f64]> = embs.iter().map(|e| e.values.as_slice()).collect();
        per_set.push(EmbeddingSetResult {
            instance_id: s.instance_id.clone(),
            group_key: s.group_key.clone(),
            n_runs: s.len(),
            d_cos: d_cos(&vectors).map_err(&err)?,
        });
    }
    let labels: Vec<Vec<Option<&str>>> = sets
        .iter()
        .map(|s| s.embeddings().iter().map(|e| e.label.as_deref()).collect())
        .collect();
    let flip = if labels.iter().flatten().all(Option::is_some) {
        Some(flip_rate(&labels).map_err(&err)?)
    } else {
        warnings.push("embedding: some runs carry no label; flip rate omitted".into());
        None
    };
    let scores: Option<Vec<Vec<f64>>> = sets
        .iter()
        .map(|s| s.embeddings().iter().map(|e| e.score).collect())
        .collect();
    let ddr_result = match scores {
        Some(rows) if rows.len() >= 2 => Some(ddr(&rows).map_err(&err)?),
        Some(_) => {
            warnings.push("embedding: DDR needs at least two run sets; omitted".into());
            None
        }
        None => None,
    };
    let dc: Vec<f64> = per_set.iter().map(|r| r.d_cos).collect();
    Ok(EmbeddingSection {
        n_sets: per_set.len(),
        mean_d_cos: mean(&dc),
        max_d_cos: max_of(&dc),
        flip,
        ddr: ddr_result,
        per_set,
    })
}

fn generation_summary(sets: &[RunSet], tau: f64) -> Result<GenerationSummary, AuditError> {
    let err = metric_err(Layer::Sequence);
    let mut per_set = Vec::with_capacity(sets.len());
    let mut psd_missing: Option<String> = None;
    for s in sets {
        let gens = s.generations();
        let texts: Vec<&str> = gens.iter().map(|g| g.text.as_str()).collect();
        let entities: Vec<&[String]> = gens.iter().map(|g| g.entities.as_slice()).collect();
        let units: Vec<Vec<String>> = gens.iter().map(|g| split_units(&g.text)).collect();
        let unit_refs: Vec<&[String]> = units.iter().map(Vec::as_slice).collect();
        let embeddings: Vec<Option<&[f64]>> =
            gens.iter().map(|g| g.embedding.as_deref()).collect();
        let psd_value = if embeddings.iter().all(Option::is_some) {
            Some(psd(&embeddings).map_err(&err)?)
        } else {
            psd_missing.get_or_insert_with(|| {
                format!(
                    "set ({}, {}) has runs without an embedding",
                    s.instance_id, s.group_key
                )
            });
            None
        };
        per_set.push(GenerationSetResult {
            instance_id: s.instance_id.clone(),
            group_key: s.group_key.clone(),
            n_runs: s.len(),
            em: exact_match(&texts).map_err(&err)?,
            entity_jaccard: entity_jaccard(&entities).map_err(&err)?,
            match_score: mean_match_score(&unit_refs, tau).map_err(&err)?,
            psd: psd_value.map(|p| p.clamped),
            psd_raw: psd_value.map(|p| p.raw),
        });
    }
    let col = |f: fn(&GenerationSetResult) -> f64| mean(&per_set.iter().map(f).collect::<Vec<_>>());
    let mean_psd = if psd_missing.is_none() {
        Some(mean(&per_set.iter().map(|r| r.psd.expect("psd present")).collect::<Vec<_>>()))
    } else {
        None
    };
    Ok(GenerationSummary {
        n_sets: per_set.len(),
        tau,
        mean_em: col(|r| r.em),
        mean_entity_jaccard: col(|r| r.entity_jaccard),
        mean_match_score: col(|r| r.match_score),
        mean_psd,
        psd_omitted_reason: psd_missing,
        per_set,
    })
}

fn trace_summary(sets: &[RunSet]) -> Result<TraceSummary, AuditError> {
    let err = metric_err(Layer::Sequence);
    let mut per_set = Vec::with_capacity(sets.len());
    for s in sets {
        let traces = s.traces();
        let actions: Vec<&[String]> = traces.iter().map(|t| t.actions.as_slice()).collect();
        let te = trajectory_edit(&actions).map_err(&err)?;
        per_set.push(TraceSetResult {
            instance_id: s.instance_id.clone(),
            group_key: s.group_key.clone(),
            n_runs: s.len(),
            edit_raw: te.raw,
            edit_normalized: te.normalized,
            first_divergence: te.pairs.iter().filter_map(|p| p.first_divergence).min(),
        });
    }
    Ok(TraceSummary {
        n_sets: per_set.len(),
        mean_edit_raw: mean(&per_set.iter().map(|r| r.edit_raw).collect::<Vec<_>>()),
        mean_edit_normalized: mean(&per_set.iter().map(|r| r.edit_normalized).collect::<Vec<_>>()),
        per_set,
    })
}

fn logit_section(
    records: &[RunRecord],
    params: &AuditParams,
    warnings: &mut Vec<String>,
) -> Result<Option<LogitSection>, AuditError> {
    let err = metric_err(Layer::Logit);
    let mut traced: Vec<(&RunRecord, &LogitTrace)> = records
        .iter()
        .filter_map(|r| match &r.payload {
            crate::run_model::Payload::Generation(g) => g.logits.as_ref().map(|l| (r, l)),
            _ => None,
        })
        .collect();
    if traced.is_empty() {
        return Ok(None);
    }
    traced.sort_by(|a, b| {
        (&a.0.instance_id, &a.0.run_id).cmp(&(&b.0.instance_id, &b.0.run_id))
    });
    let is_reference = |r: &RunRecord| match &params.theta_reference {
        Some(sel) => r.config.get(&sel.key) == Some(&sel.value),
        None => true,
    };
    let reference: Vec<&LogitTrace> = traced
        .iter()
        .filter(|(r, _)| is_reference(r))
        .map(|(_, t)| *t)
        .collect();
    let evaluated: Vec<(&RunRecord, &LogitTrace)> = match params.theta_reference {
        Some(_) => traced.iter().filter(|(r, _)| !is_reference(r)).copied().collect(),
        None => traced.clone(),
    };
    let mapping = LogitMapping {
        top_k: params.logit_top_k,
        epsilon: params.logit_epsilon,
    };
    let (theta, origin) = match params.theta_eu {
        Some(t) => (t, "flag"),
        None => {
            if reference.is_empty() {
                warnings.push(format!(
                    "logit: no trace matches reference selector {}; TDI omitted",
                    params.theta_reference.as_ref().map(|s| s.to_string()).unwrap_or_default()
                ));
                return Ok(None);
            }
            (
                calibrate_theta(&reference, params.theta_quantile, &mapping).map_err(&err)?,
                "calibrated",
            )
        }
    };
    if evaluated.is_empty() {
        warnings.push("logit: every trace is a reference trace; nothing to evaluate".into());
        return Ok(None);
    }
    let mut per_trace = Vec::with_capacity(evaluated.len());
    for (r, t) in &evaluated {
        let res = tdi(t, theta, &mapping).map_err(&err)?;
        per_trace.push(TraceTdi {
            instance_id: r.instance_id.clone(),
            run_id: r.run_id.clone(),
            n_tokens: res.per_token_eu.len(),
            tdi: res.tdi,
            flagged_positions: res.flagged_positions,
        });
    }
    let ref_tdis: Vec<f64> = reference
        .iter()
        .map(|t| tdi(t, theta, &mapping).map(|r| r.tdi))
        .collect::<Result<_, _>>()
        .map_err(&err)?;
    let tdis: Vec<f64> = per_trace.iter().map(|t| t.tdi).collect();
    Ok(Some(LogitSection {
        theta_eu: theta,
        theta_origin: origin.to_string(),
        theta_quantile: params.theta_quantile,
        theta_reference: params.theta_reference.as_ref().map(|s| s.to_string()),
        mapping,
        n_reference_traces: reference.len(),
        n_evaluated_traces: per_trace.len(),
        n_tokens: per_trace.iter().map(|t| t.n_tokens).sum(),
        n_flagged_tokens: per_trace.iter().map(|t| t.flagged_positions.len()).sum(),
        mean_tdi: mean(&tdis),
        min_tdi: min_of(&tdis),
        reference_tdi: if ref_tdis.is_empty() { 0.0 } else { mean(&ref_tdis) },
        per_trace,
    }))
}

fn prediction_section(sets: &[RunSet], warnings: &mut Vec<String>) -> Result<PredictionSection, AuditError> {
    let err = metric_err(Layer::Prediction);
    let labels: Vec<Vec<Option<&str>>> = sets
        .iter()
        .map(|s| s.scalars().iter().map(|p| Some(p.label.as_str())).collect())
        .collect();
    let rows: Vec<Vec<f64>> = sets
        .iter()
        .map(|s| s.scalars().iter().map(|p| p.score).collect())
        .collect();
    let ddr_result = if rows.len() >= 2 {
        Some(ddr(&rows).map_err(&err)?)
    } else {
        warnings.push("prediction: DDR needs at least two run sets; omitted".into());
        None
    };
    Ok(PredictionSection {
        n_sets: sets.len(),
        ddr: ddr_result,
        flip: flip_rate(&labels).map_err(&err)?,
    })
}

/// Compute every requested layer over `corpus`.
pub fn audit_corpus(
    corpus: &Corpus,
    input_sha256: &str,
    params: &AuditParams,
    sources: &BTreeMap<String, ParamSource>,
) -> Result<DeterminismReport, AuditError> {
    let mut warnings: Vec<String> = corpus
        .skipped
        .iter()
        .map(|s| format!("ingest: line {} skipped: {}", s.line, s.problem))
        .collect();
    let wants = |l: Layer| params.layers.contains(&l);
    let records = &corpus.records;

    let mut rank = None;
    if wants(Layer::Rank) {
        let recs = by_kind(records, PayloadKind::Ranking);
        if !recs.is_empty() {
            let sets = group(&recs, &params.fixed_keys)?;
            if let Some(mut s) =
                stability_summary(&sets, &params.ks, params.p).map_err(metric_err(Layer::Rank))?
            {
                warnings.append(&mut s.warnings);
                rank = Some(s);
            } else {
                warnings.push("rank: no run set has two or more runs".into());
            }
        }
    }

    let mut embedding = None;
    if wants(Layer::Embedding) {
        let recs = by_kind(records, PayloadKind::Embedding);
        if !recs.is_empty() {
            let sets = multi_run(group(&recs, &params.fixed_keys)?, Layer::Embedding, &mut warnings);
            if !sets.is_empty() {
                embedding = Some(embedding_section(&sets, &mut warnings)?);
            }
        }
    }

    let mut sequence = None;
    if wants(Layer::Sequence) {
        let gens = by_kind(records, PayloadKind::Generation);
        let generation = if gens.is_empty() {
            None
        } else {
            let sets = multi_run(group(&gens, &params.fixed_keys)?, Layer::Sequence, &mut warnings);
            if sets.is_empty() {
                None
            } else {
                let g = generation_summary(&sets, params.tau)?;
                if let Some(reason) = &g.psd_omitted_reason {
                    warnings.push(format!("sequence: PSD omitted: {reason}"));
                }
                Some(g)
            }
        };
        let traces = by_kind(records, PayloadKind::Trace);
        let trajectory = if traces.is_empty() {
            None
        } else {
            let sets = multi_run(group(&traces, &params.fixed_keys)?, Layer::Sequence, &mut warnings);
            if sets.is_empty() {
                None
            } else {
                Some(trace_summary(&sets)?)
            }
        };
        if generation.is_some() || trajectory.is_some() {
            sequence = Some(SequenceSection {
                generation,
                trajectory,
            });
        }
    }

    let logit = if wants(Layer::Logit) {
        logit_section(records, params, &mut warnings)?
    } else {
        None
    };

    let mut prediction = None;
    if wants(Layer::Prediction) {
        let recs = by_kind(records, PayloadKind::Scalar);
        if !recs.is_empty() {
            let sets = multi_run(group(&recs, &params.fixed_keys)?, Layer::Prediction, &mut warnings);
            if !sets.is_empty() {
                prediction = Some(prediction_section(&sets, &mut warnings)?);
            }
        }
    }

    let layers_reported: Vec<Layer> = [
        (Layer::Rank, rank.is_some()),
        (Layer::Embedding, embedding.is_some()),
        (Layer::Sequence, sequence.is_some()),
        (Layer::Logit, logit.is_some()),
        (Layer::Prediction, prediction.is_some()),
    ]
    .into_iter()
    .filter_map(|(l, present)| present.then_some(l))
    .collect();
    if layers_reported.is_empty() {
        let requested: Vec<&str> = params.layers.iter().map(|l| l.as_str()).collect();
        return Err(AuditError::Empty(format!(
            "no run set with two or more runs for the requested layer(s) {}",
            requested.join(", ")
        )));
    }

    let mut report = DeterminismReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata {
            tool: TOOL_NAME.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            input_sha256: input_sha256.to_string(),
            n_records: records.len(),
            n_skipped_lines: corpus.skipped.len(),
            schema_mode: match params.schema_mode {
                crate::run_model::SchemaMode::Strict => "strict",
                crate::run_model::SchemaMode::Lenient => "lenient",
            }
            .to_string(),
            layers_requested: params.layers.clone(),
            layers_reported,
            fixed_keys: params.fixed_keys.clone(),
            thresholds: Thresholds {
                ks: params.ks.clone(),
                p: params.p,
                tau: params.tau,
                theta_eu: params.theta_eu,
                theta_quantile: params.theta_quantile,
                theta_reference: params.theta_reference.as_ref().map(|s| s.to_string()),
                logit_top_k: params.logit_top_k,
                logit_epsilon: params.logit_epsilon,
            },
            param_sources: sources.clone(),
            conventions: conventions(),
        },
        rank,
        embedding,
        sequence,
        logit,
        prediction,
        gate: None,
        warnings,
    };
    if !params.gate.is_empty() {
        report.gate = Some(report.evaluate_gate(&params.gate));
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AuditOutput {
    pub report: DeterminismReport,
    pub json_path: PathBuf,
    pub markdown_path: PathBuf,
}

/// Ingest `input`, audit it and write `report.json` (canonical) and
/// `report.md` (rendered from the JSON) into `out_dir`.
pub fn run_audit(
    input: &Path,
    params: &AuditParams,
    sources: &BTreeMap<String, ParamSource>,
    out_dir: &Path,
) -> Result<AuditOutput, AuditError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AuditError::Io { path, source }
    };
    let bytes = std::fs::read(input).map_err(io(input))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let corpus = ingest_reader(bytes.as_slice(), params.schema_mode)?;
    let report = audit_corpus(&corpus, &digest, params, sources)?;
    let json = report.to_canonical_json()?;
    let md = render_markdown(&report.to_value()?);
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let json_path = out_dir.join("report.json");
    let markdown_path = out_dir.join("report.md");
    std::fs::write(&json_path, json).map_err(io(&json_path))?;
    std::fs::write(&markdown_path, md).map_err(io(&markdown_path))?;
    Ok(AuditOutput {
        report,
        json_path,
        markdown_path,
    })
}
