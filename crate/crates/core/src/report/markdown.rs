//! Human-readable rendering. Works on the JSON value of a report so the
//! tables show exactly the numbers in `report.json`.

use serde_json::Value;
use std::fmt::Write;

use crate::canonical::canonical_bytes;

fn cell(v: &Value) -> String {
    match v {
        Value::Null => "n/a".to_string(),
        Value::String(s) => s.replace('|', "\\|"),
        other => String::from_utf8(canonical_bytes(other))
            .expect("utf-8")
            .replace('|', "\\|"),
    }
}

fn get<'a>(v: &'a Value, path: &[&str]) -> &'a Value {
    path.iter().fold(v, |cur, k| cur.get(*k).unwrap_or(&Value::Null))
}

fn table(out: &mut String, headers: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", headers.join(" | "));
    let _ = writeln!(out, "|{}|", vec!["---"; headers.len()].join("|"));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn kv_table(out: &mut String, v: &Value, keys: &[(&str, &[&str])]) {
    let rows: Vec<Vec<String>> = keys
        .iter()
        .map(|(label, path)| vec![label.to_string(), cell(get(v, path))])
        .collect();
    table(out, &["metric", "value"], &rows);
}

fn per_set_table(out: &mut String, list: &Value, columns: &[&str]) {
    let Some(items) = list.as_array() else { return };
    if items.is_empty() {
        return;
    }
    let rows: Vec<Vec<String>> = items
        .iter()
        .map(|item| columns.iter().map(|c| cell(get(item, &[c]))).collect())
        .collect();
    table(out, columns, &rows);
}

fn render_rank(out: &mut String, rank: &Value) {
    out.push_str("## Rank layer\n\n");
    let mut rows = Vec::new();
    if let Some(map) = rank.get("mean_j_at_k").and_then(Value::as_object) {
        for (k, v) in map {
            rows.push(vec![format!("mean J@{k}"), cell(v)]);
        }
    }
    for key in ["mean_rbo", "mean_rbo_truncated", "max_rank_span", "n_sets", "p"] {
        rows.push(vec![key.to_string(), cell(get(rank, &[key]))]);
    }
    table(out, &["metric", "value"], &rows);

    let Some(items) = rank.get("per_set").and_then(Value::as_array) else { return };
    let ks: Vec<String> = rank
        .get("mean_j_at_k")
        .and_then(Value::as_object)
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    let mut headers = vec!["instance_id".to_string(), "group_key".into(), "n_runs".into()];
    headers.extend(ks.iter().map(|k| format!("J@{k}")));
    headers.extend(["rbo".to_string(), "max_rank_span".into()]);
    let rows: Vec<Vec<String>> = items
        .iter()
        .map(|item| {
            let mut r = vec![
                cell(get(item, &["instance_id"])),
                cell(get(item, &["group_key"])),
                cell(get(item, &["n_runs"])),
            ];
            r.extend(ks.iter().map(|k| cell(get(item, &["j_at_k", k]))));
            r.push(cell(get(item, &["rbo"])));
            r.push(cell(get(item, &["max_rank_span"])));
            r
        })
        .collect();
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    table(out, &header_refs, &rows);
}

/// Render a report value (as produced by `DeterminismReport::to_value`).
pub fn render_markdown(report: &Value) -> String {
    let mut out = String::new();
    out.push_str("# Determinism report\n\n");
    kv_table(
        &mut out,
        report,
        &[
            ("schema_version", &["schema_version"]),
            ("tool", &["metadata", "tool"]),
            ("tool_version", &["metadata", "tool_version"]),
            ("input_sha256", &["metadata", "input_sha256"]),
            ("records", &["metadata", "n_records"]),
            ("skipped lines", &["metadata", "n_skipped_lines"]),
            ("schema mode", &["metadata", "schema_mode"]),
            ("layers reported", &["metadata", "layers_reported"]),
            ("fixed keys", &["metadata", "fixed_keys"]),
        ],
    );

    out.push_str("### Parameters\n\n");
    let thresholds = get(report, &["metadata", "thresholds"]);
    let sources = get(report, &["metadata", "param_sources"]);
    if let Some(map) = thresholds.as_object() {
        let rows: Vec<Vec<String>> = map
            .iter()
            .map(|(k, v)| vec![k.clone(), cell(v), cell(get(sources, &[k]))])
            .collect();
        table(&mut out, &["parameter", "value", "source"], &rows);
    }

    let rank = get(report, &["rank"]);
    if !rank.is_null() {
        render_rank(&mut out, rank);
    }

    let emb = get(report, &["embedding"]);
    if !emb.is_null() {
        out.push_str("## Embedding layer\n\n");
        kv_table(
            &mut out,
            emb,
            &[
                ("mean D_cos", &["mean_d_cos"]),
                ("max D_cos", &["max_d_cos"]),
                ("flip rate", &["flip", "flip_rate"]),
                ("majority agreement", &["flip", "majority_agreement"]),
                ("DDR", &["ddr", "ddr"]),
                ("perfectly deterministic", &["ddr", "perfectly_deterministic"]),
                ("sets", &["n_sets"]),
            ],
        );
        per_set_table(&mut out, get(emb, &["per_set"]), &["instance_id", "group_key", "n_runs", "d_cos"]);
    }

    let seq = get(report, &["sequence"]);
    let gen = get(seq, &["generation"]);
    if !gen.is_null() {
        out.push_str("## Sequence layer: generations\n\n");
        kv_table(
            &mut out,
            gen,
            &[
                ("mean EM", &["mean_em"]),
                ("mean entity Jaccard", &["mean_entity_jaccard"]),
                ("mean match score", &["mean_match_score"]),
                ("mean PSD", &["mean_psd"]),
                ("tau", &["tau"]),
                ("sets", &["n_sets"]),
            ],
        );
        per_set_table(
            &mut out,
            get(gen, &["per_set"]),
            &["instance_id", "group_key", "n_runs", "em", "entity_jaccard", "match_score", "psd"],
        );
    }
    let traj = get(seq, &["trajectory"]);
    if !traj.is_null() {
        out.push_str("## Sequence layer: action traces\n\n");
        kv_table(
            &mut out,
            traj,
            &[
                ("mean edit distance", &["mean_edit_raw"]),
                ("mean normalized edit distance", &["mean_edit_normalized"]),
                ("sets", &["n_sets"]),
            ],
        );
        per_set_table(
            &mut out,
            get(traj, &["per_set"]),
            &["instance_id", "group_key", "n_runs", "edit_raw", "edit_normalized", "first_divergence"],
        );
    }

    let logit = get(report, &["logit"]);
    if !logit.is_null() {
        out.push_str("## Logit layer\n\n");
        kv_table(
            &mut out,
            logit,
            &[
                ("mean TDI", &["mean_tdi"]),
                ("min TDI", &["min_tdi"]),
                ("reference TDI", &["reference_tdi"]),
                ("theta_eu", &["theta_eu"]),
                ("theta origin", &["theta_origin"]),
                ("reference selector", &["theta_reference"]),
                ("reference traces", &["n_reference_traces"]),
                ("evaluated traces", &["n_evaluated_traces"]),
                ("flagged tokens", &["n_flagged_tokens"]),
                ("tokens", &["n_tokens"]),
            ],
        );
        per_set_table(&mut out, get(logit, &["per_trace"]), &["instance_id", "run_id", "n_tokens", "tdi"]);
    }

    let pred = get(report, &["prediction"]);
    if !pred.is_null() {
        out.push_str("## Prediction layer\n\n");
        kv_table(
            &mut out,
            pred,
            &[
                ("DDR", &["ddr", "ddr"]),
                ("signal variance", &["ddr", "signal_variance"]),
                ("noise variance", &["ddr", "noise_variance"]),
                ("perfectly deterministic", &["ddr", "perfectly_deterministic"]),
                ("flip rate", &["flip", "flip_rate"]),
                ("majority agreement", &["flip", "majority_agreement"]),
                ("sets", &["n_sets"]),
            ],
        );
    }

    let gate = get(report, &["gate"]);
    if !gate.is_null() {
        out.push_str("## Gate\n\n");
        per_set_table(&mut out, get(gate, &["checks"]), &["rule", "value", "passed"]);
        let _ = writeln!(out, "Overall: {}\n", if gate["passed"] == Value::Bool(true) { "PASS" } else { "FAIL" });
    }

    if let Some(ws) = report.get("warnings").and_then(Value::as_array) {
        if !ws.is_empty() {
            out.push_str("## Warnings\n\n");
            for w in ws {
                let _ = writeln!(out, "- {}", w.as_str().unwrap_or_default());
            }
            out.push('\n');
        }
    }

    out.push_str("## Conventions\n\n");
    if let Some(map) = get(report, &["metadata", "conventions"]).as_object() {
        for (k, v) in map {
            let _ = writeln!(out, "- **{k}**: {}", v.as_str().unwrap_or_default());
        }
    }
    out
}
