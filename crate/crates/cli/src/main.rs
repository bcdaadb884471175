use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use detaudit_core::canonical::{canonical_bytes, canonical_string};
use detaudit_core::ledger::{self, LedgerError, VerifyOutcome};
use detaudit_core::report::{
    self, parse_layers, resolve, AuditError, Layer, ParamOverrides, SCHEMA_VERSION, TOOL_VERSION,
};
use detaudit_core::run_model::{ingest, to_canonical_jsonl, SchemaMode};
use detaudit_core::sim::{
    self, estimator_grid, protocol_setup, reduction::preset, simulate_embedding_runs,
    simulate_explainer_runs, Estimator,
};

/// Environment variable overriding the default report directory.
const OUT_DIR_ENV: &str = "DETAUDIT_OUT_DIR";

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_LOCK: u8 = 4;
const EXIT_GATE: u8 = 5;

#[derive(Parser)]
#[command(name = "detaudit", about = "Determinism audits for ML pipelines", version = TOOL_VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a run-record corpus and summarize it.
    Ingest(IngestArgs),
    /// Compute the layered determinism report for a corpus.
    Audit(AuditArgs),
    /// Generate synthetic corpora and spread summaries.
    #[command(subcommand)]
    Simulate(SimCommand),
    /// Hash-chained audit ledger.
    #[command(subcommand)]
    Ledger(LedgerCommand),
    /// Print tool and report schema versions.
    Version,
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    /// Skip invalid lines instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Also write the accepted records in canonical JSONL form.
    #[arg(long)]
    canonical_out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    input: PathBuf,
    /// Comma-separated layers (rank, embedding, sequence, logit, prediction) or `all`.
    #[arg(long)]
    layers: Option<String>,
    /// Config keys held fixed within a run set, comma-separated.
    #[arg(long, value_delimiter = ',')]
    fixed_keys: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// RBO persistence.
    #[arg(long)]
    p: Option<f64>,
    /// Unit-match similarity threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Fixed EU threshold; calibrated from reference traces when absent.
    #[arg(long)]
    theta_eu: Option<f64>,
    #[arg(long)]
    theta_quantile: Option<f64>,
    /// `key=value` selecting the reference traces for θ calibration.
    #[arg(long)]
    theta_reference: Option<String>,
    #[arg(long)]
    logit_top_k: Option<usize>,
    #[arg(long)]
    logit_epsilon: Option<f64>,
    #[arg(long)]
    lenient: bool,
    /// Gate rule such as `rank.j@3>=1`; repeatable. Any failure exits with 5.
    #[arg(long = "gate")]
    gate: Vec<String>,
    /// JSON file with default parameters; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $DETAUDIT_OUT_DIR, else the current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Attribution reruns of exact and Monte-Carlo Shapley on a toy model.
    Shapley(ShapleyArgs),
    /// Order dependence of single-precision summation.
    Reduction(ReductionArgs),
    /// Noisy embedding reruns.
    Embedding(EmbeddingArgs),
}

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ShapleyArgs {
    /// Number of features.
    #[arg(long)]
    m: Option<usize>,
    /// Pairwise interaction terms (default 1.5 × m).
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    reruns: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<u64>>,
    /// Comma-separated: exact, permutation_mc.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus path; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ReductionArgs {
    /// `cancellation` or `magnitude-spread`.
    #[arg(long)]
    preset: Option<String>,
    /// JSON file holding an array of numbers, instead of a preset.
    #[arg(long)]
    values: Option<PathBuf>,
    #[arg(long)]
    shuffles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EmbeddingArgs {
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Append a JSON document to the ledger.
    Append {
        payload: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        /// Entry timestamp; defaults to the current time.
        #[arg(long)]
        timestamp_ms: Option<i64>,
        /// `key=value` metadata stored with the document; repeatable.
        #[arg(long = "meta")]
        meta: Vec<String>,
    },
    /// Recompute every hash and link.
    Verify {
        #[arg(long)]
        ledger: PathBuf,
    },
}

/// An error with a chosen process exit code.
struct Exit {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Exit {
    fn from(e: E) -> Self {
        Exit {
            code: EXIT_FAILURE,
            error: e.into(),
        }
    }
}

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Exit {
    Exit {
        code,
        error: error.into(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Exit> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| fail(EXIT_VALIDATION, e))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(|e| fail(EXIT_VALIDATION, e))
}

fn load_config<T: for<'de> Deserialize<'de> + Default>(path: &Option<PathBuf>) -> Result<T, Exit> {
    path.as_deref().map_or_else(|| Ok(T::default()), read_json)
}

/// Write `bytes` to `out`, or stdout when absent.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Exit> {
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
        }
    }
    Ok(())
}

fn canonical_line(v: &Value) -> Vec<u8> {
    let mut b = canonical_bytes(v);
    b.push(b'\n');
    b
}

fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

fn cmd_ingest(args: IngestArgs) -> Result<(), Exit> {
    let mode = if args.lenient {
        SchemaMode::Lenient
    } else {
        SchemaMode::Strict
    };
    let corpus = ingest(&args.input, mode).map_err(|e| fail(EXIT_VALIDATION, e))?;
    if let Some(out) = &args.canonical_out {
        let text = to_canonical_jsonl(&corpus.records)?;
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    let kinds: serde_json::Map<String, Value> = corpus
        .kind_counts()
        .into_iter()
        .map(|(k, n)| (k.as_str().to_string(), json!(n)))
        .collect();
    let skipped: Vec<Value> = corpus
        .skipped
        .iter()
        .map(|s| json!({"line": s.line, "problem": s.problem.to_string()}))
        .collect();
    for s in &corpus.skipped {
        eprintln!("warning: line {} skipped: {}", s.line, s.problem);
    }
    let summary = json!({
        "records": corpus.records.len(),
        "kinds": kinds,
        "skipped": skipped,
    });
    emit(None, &canonical_line(&summary))
}

fn cmd_audit(args: AuditArgs) -> Result<(), Exit> {
    let layers: Option<Vec<Layer>> = args
        .layers
        .as_deref()
        .map(parse_layers)
        .transpose()
        .map_err(|e| fail(EXIT_VALIDATION, e))?;
    let flags = ParamOverrides {
        layers,
        fixed_keys: args.fixed_keys,
        ks: args.ks,
        p: args.p,
        tau: args.tau,
        theta_eu: args.theta_eu,
        theta_quantile: args.theta_quantile,
        theta_reference: args.theta_reference,
        logit_top_k: args.logit_top_k,
        logit_epsilon: args.logit_epsilon,
        lenient: args.lenient.then_some(true),
        gate: (!args.gate.is_empty()).then_some(args.gate),
    };
    let config: ParamOverrides = load_config(&args.config)?;
    let (params, sources) = resolve(&flags, &config).map_err(|e| fail(EXIT_VALIDATION, e))?;
    let out_dir = args
        .out_dir
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let out = report::run_audit(&args.input, &params, &sources, &out_dir).map_err(|e: AuditError| {
        let code = e.exit_code() as u8;
        fail(code, e)
    })?;
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {} and {}",
        out.json_path.display(),
        out.markdown_path.display()
    );
    if let Some(gate) = &out.report.gate {
        for c in &gate.checks {
            let value = c.value.map_or("n/a".to_string(), |v| v.to_string());
            println!("gate {} {} (value {value})", if c.passed { "PASS" } else { "FAIL" }, c.rule);
        }
        if !gate.passed {
            return Err(fail(EXIT_GATE, anyhow::anyhow!("gate failed")));
        }
    }
    Ok(())
}

fn parse_estimator(s: &str) -> Result<Estimator, Exit> {
    match s.trim() {
        "exact" => Ok(Estimator::Exact),
        "permutation_mc" | "mc" => Ok(Estimator::PermutationMc),
        other => Err(fail(
            EXIT_VALIDATION,
            anyhow::anyhow!("unknown estimator {other:?} (expected exact or permutation_mc)"),
        )),
    }
}

fn sim_shapley(args: ShapleyArgs) -> Result<(), Exit> {
    let cfg: ShapleyArgs = load_config(&args.config)?;
    let m = args.m.or(cfg.m).unwrap_or(20);
    let pairs = args.pairs.or(cfg.pairs).unwrap_or(m * 3 / 2);
    let instances = args.instances.or(cfg.instances).unwrap_or(50);
    let reruns = args.reruns.or(cfg.reruns).unwrap_or(30);
    let budgets = args.budgets.or(cfg.budgets).unwrap_or_else(|| vec![100, 1000, 10000]);
    let estimators = args
        .estimators
        .or(cfg.estimators)
        .unwrap_or_else(|| vec!["exact".into(), "permutation_mc".into()]);
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let out = args
        .out
        .ok_or_else(|| fail(EXIT_VALIDATION, anyhow::anyhow!("--out is required")))?;
    if m > sim::shapley::MAX_EXACT_FEATURES && estimators.iter().any(|e| e == "exact") {
        return Err(fail(
            EXIT_VALIDATION,
            sim::ShapleyError::TooManyFeatures(m),
        ));
    }
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(fail(EXIT_VALIDATION, anyhow::anyhow!("budgets must be >= 1")));
    }
    let ests: Vec<Estimator> = estimators.iter().map(|e| parse_estimator(e)).collect::<Result<_, _>>()?;

    let (model, xs) = protocol_setup(m, pairs, instances, seed);
    let grid = estimator_grid(&ests, &budgets);
    let records = simulate_explainer_runs(&model, &xs, &grid, reruns, seed)
        .map_err(|e| fail(EXIT_VALIDATION, e))?;
    emit(Some(&out), to_canonical_jsonl(&records)?.as_bytes())?;
    let meta = json!({
        "simulator": "shapley",
        "tool_version": TOOL_VERSION,
        "flags": {
            "m": m, "pairs": pairs, "instances": instances, "reruns": reruns,
            "budgets": budgets, "estimators": estimators, "seed": seed,
        },
        "records": records.len(),
        "model": model,
    });
    emit(Some(&meta_path(&out)), canonical_string(&meta)?.as_bytes())?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn sim_reduction(args: ReductionArgs) -> Result<(), Exit> {
    let cfg: ReductionArgs = load_config(&args.config)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let shuffles = args.shuffles.or(cfg.shuffles).unwrap_or(100);
    let values_file = args.values.or(cfg.values);
    let preset_name = args.preset.or(cfg.preset);
    let (source, values) = match (values_file, preset_name) {
        (Some(p), None) => (json!({"values_file": p.display().to_string()}), read_json::<Vec<f64>>(&p)?),
        (None, name) => {
            let name = name.unwrap_or_else(|| "magnitude-spread".into());
            let values = preset(&name, seed).map_err(|e| fail(EXIT_VALIDATION, e))?;
            (json!({"preset": name}), values)
        }
        (Some(_), Some(_)) => {
            return Err(fail(
                EXIT_VALIDATION,
                anyhow::anyhow!("--values and --preset are mutually exclusive"),
            ))
        }
    };
    let spread = sim::reduction_order_spread(&values, shuffles, seed)
        .map_err(|e| fail(EXIT_VALIDATION, e))?;
    let summary = json!({
        "simulator": "reduction",
        "tool_version": TOOL_VERSION,
        "flags": {"shuffles": shuffles, "seed": seed, "input": source},
        "spread": spread,
    });
    emit(args.out.as_deref(), canonical_string(&summary)?.as_bytes())?;
    if args.out.is_none() {
        println!();
    }
    Ok(())
}

fn sim_embedding(args: EmbeddingArgs) -> Result<(), Exit> {
    let cfg: EmbeddingArgs = load_config(&args.config)?;
    let instances = args.instances.or(cfg.instances).unwrap_or(100);
    let dim = args.dim.or(cfg.dim).unwrap_or(16);
    let noise = args.noise.or(cfg.noise).unwrap_or(0.05);
    let runs = args.runs.or(cfg.runs).unwrap_or(10);
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let out = args
        .out
        .ok_or_else(|| fail(EXIT_VALIDATION, anyhow::anyhow!("--out is required")))?;
    let records = simulate_embedding_runs(instances, dim, noise, runs, seed)
        .map_err(|e| fail(EXIT_VALIDATION, e))?;
    emit(Some(&out), to_canonical_jsonl(&records)?.as_bytes())?;
    let meta = json!({
        "simulator": "embedding",
        "tool_version": TOOL_VERSION,
        "flags": {"instances": instances, "dim": dim, "noise": noise, "runs": runs, "seed": seed},
        "records": records.len(),
    });
    emit(Some(&meta_path(&out)), canonical_string(&meta)?.as_bytes())?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn now_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

fn cmd_ledger(cmd: LedgerCommand) -> Result<(), Exit> {
    match cmd {
        LedgerCommand::Append {
            payload,
            ledger: path,
            timestamp_ms,
            meta,
        } => {
            let doc: Value = read_json(&payload)?;
            let payload = if meta.is_empty() {
                doc
            } else {
                let mut map = serde_json::Map::new();
                for kv in &meta {
                    let (k, v) = kv.split_once('=').ok_or_else(|| {
                        fail(EXIT_VALIDATION, anyhow::anyhow!("--meta expects key=value, got {kv:?}"))
                    })?;
                    map.insert(k.to_string(), Value::String(v.to_string()));
                }
                json!({"document": doc, "metadata": map})
            };
            let entry = ledger::append(&path, &payload, timestamp_ms.unwrap_or_else(now_ms))
                .map_err(|e| match e {
                    LedgerError::LockConflict(_) => fail(EXIT_LOCK, e),
                    LedgerError::Broken { .. } | LedgerError::Canonical(_) => fail(EXIT_VALIDATION, e),
                    other => fail(EXIT_FAILURE, other),
                })?;
            println!("{}", canonical_string(&entry)?);
            Ok(())
        }
        LedgerCommand::Verify { ledger: path } => match ledger::verify(&path)? {
            VerifyOutcome::Ok { entries } => {
                println!("ok ({entries} entries)");
                Ok(())
            }
            VerifyOutcome::Broken { index, reason } => {
                println!("broken at index {index}: {reason}");
                Err(fail(EXIT_FAILURE, anyhow::anyhow!("first broken index {index}")))
            }
        },
    }
}

fn run(cli: Cli) -> Result<(), Exit> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Simulate(SimCommand::Shapley(a)) => sim_shapley(a),
        Command::Simulate(SimCommand::Reduction(a)) => sim_reduction(a),
        Command::Simulate(SimCommand::Embedding(a)) => sim_embedding(a),
        Command::Ledger(c) => cmd_ledger(c),
        Command::Version => {
            println!("detaudit {TOOL_VERSION} (report schema {SCHEMA_VERSION})");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
