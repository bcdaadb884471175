//! Audit parameters, their provenance (flag > config file > default) and
//! gate rules.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::logit::{DEFAULT_QUANTILE, DEFAULT_SHIFT_EPSILON, DEFAULT_TOP_K};
use crate::rank::{DEFAULT_KS, DEFAULT_P};
use crate::run_model::SchemaMode;
use crate::sequence::DEFAULT_TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Rank,
    Embedding,
    Sequence,
    Logit,
    Prediction,
}

impl Layer {
    pub const ALL: [Layer; 5] = [
        Layer::Rank,
        Layer::Embedding,
        Layer::Sequence,
        Layer::Logit,
        Layer::Prediction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Rank => "rank",
            Layer::Embedding => "embedding",
            Layer::Sequence => "sequence",
            Layer::Logit => "logit",
            Layer::Prediction => "prediction",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = ParamError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Layer::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ParamError::UnknownLayer(s.to_string()))
    }
}

/// Parse a comma-separated layer list; `all` selects every layer.
pub fn parse_layers(s: &str) -> Result<Vec<Layer>, ParamError> {
    if s.trim() == "all" {
        return Ok(Layer::ALL.to_vec());
    }
    let mut layers: Vec<Layer> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()?;
    layers.sort();
    layers.dedup();
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("unknown layer {0:?} (expected rank, embedding, sequence, logit, prediction or all)")]
    UnknownLayer(String),
    #[error("invalid parameter {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
    #[error("invalid gate rule {0:?} (expected e.g. rank.j@3>=1 or embedding.d_cos<=0.01)")]
    Gate(String),
    #[error("invalid selector {0:?} (expected key=value)")]
    Selector(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub key: String,
    pub value: String,
}

impl FromStr for Selector {
    type Err = ParamError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((k, v)) if !k.is_empty() => Ok(Selector {
                key: k.to_string(),
                value: v.to_string(),
            }),
            _ => Err(ParamError::Selector(s.to_string())),
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.key, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateOp {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "==")]
    Eq,
}

impl GateOp {
    fn symbol(self) -> &'static str {
        match self {
            GateOp::Ge => ">=",
            GateOp::Le => "<=",
            GateOp::Gt => ">",
            GateOp::Lt => "<",
            GateOp::Eq => "==",
        }
    }

    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            GateOp::Ge => value >= bound,
            GateOp::Le => value <= bound,
            GateOp::Gt => value > bound,
            GateOp::Lt => value < bound,
            GateOp::Eq => value == bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRule {
    pub metric: String,
    pub op: GateOp,
    pub bound: f64,
}

impl fmt::Display for GateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.metric, self.op.symbol(), self.bound)
    }
}

impl FromStr for GateRule {
    type Err = ParamError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParamError::Gate(s.to_string());
        // two-character operators first so ">=" is not read as ">"
        for op in [GateOp::Ge, GateOp::Le, GateOp::Eq, GateOp::Gt, GateOp::Lt] {
            if let Some((metric, bound)) = s.split_once(op.symbol()) {
                let metric = metric.trim();
                let bound: f64 = bound.trim().parse().map_err(|_| bad())?;
                if metric.is_empty() || !bound.is_finite() {
                    return Err(bad());
                }
                return Ok(GateRule {
                    metric: metric.to_string(),
                    op,
                    bound,
                });
            }
        }
        Err(bad())
    }
}

/// Every parameter optional; used both for command-line flags and for the
/// JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub layers: Option<Vec<Layer>>,
    pub fixed_keys: Option<Vec<String>>,
    pub ks: Option<Vec<usize>>,
    pub p: Option<f64>,
    pub tau: Option<f64>,
    pub theta_eu: Option<f64>,
    pub theta_quantile: Option<f64>,
    pub theta_reference: Option<String>,
    pub logit_top_k: Option<usize>,
    pub logit_epsilon: Option<f64>,
    pub lenient: Option<bool>,
    pub gate: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSource {
    Flag,
    Config,
    Default,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditParams {
    pub layers: Vec<Layer>,
    pub fixed_keys: Vec<String>,
    pub ks: Vec<usize>,
    pub p: f64,
    pub tau: f64,
    /// Fixed threshold; calibrated from reference traces when `None`.
    pub theta_eu: Option<f64>,
    pub theta_quantile: f64,
    /// Traces matching this selector calibrate θ and the rest are evaluated.
    /// Without one, every trace does both.
    pub theta_reference: Option<Selector>,
    pub logit_top_k: usize,
    pub logit_epsilon: f64,
    pub schema_mode: SchemaMode,
    pub gate: Vec<GateRule>,
}

impl Default for AuditParams {
    fn default() -> Self {
        resolve(&ParamOverrides::default(), &ParamOverrides::default())
            .expect("defaults are valid")
            .0
    }
}

fn pick<T: Clone>(
    name: &str,
    flag: &Option<T>,
    config: &Option<T>,
    default: T,
    sources: &mut BTreeMap<String, ParamSource>,
) -> T {
    let (value, source) = match (flag, config) {
        (Some(v), _) => (v.clone(), ParamSource::Flag),
        (None, Some(v)) => (v.clone(), ParamSource::Config),
        (None, None) => (default, ParamSource::Default),
    };
    sources.insert(name.to_string(), source);
    value
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ParamError {
    ParamError::Invalid {
        name,
        reason: reason.into(),
    }
}

/// Merge flags over config over defaults and validate the result.
pub fn resolve(
    flags: &ParamOverrides,
    config: &ParamOverrides,
) -> Result<(AuditParams, BTreeMap<String, ParamSource>), ParamError> {
    let mut src = BTreeMap::new();
    let mut layers = pick("layers", &flags.layers, &config.layers, Layer::ALL.to_vec(), &mut src);
    layers.sort();
    layers.dedup();
    let fixed_keys = pick("fixed_keys", &flags.fixed_keys, &config.fixed_keys, vec![], &mut src);
    let ks = pick("ks", &flags.ks, &config.ks, DEFAULT_KS.to_vec(), &mut src);
    let p = pick("p", &flags.p, &config.p, DEFAULT_P, &mut src);
    let tau = pick("tau", &flags.tau, &config.tau, DEFAULT_TAU, &mut src);
    let theta_eu = pick("theta_eu", &flags.theta_eu.map(Some), &config.theta_eu.map(Some), None, &mut src);
    let theta_quantile = pick(
        "theta_quantile",
        &flags.theta_quantile,
        &config.theta_quantile,
        DEFAULT_QUANTILE,
        &mut src,
    );
    let theta_reference = pick(
        "theta_reference",
        &flags.theta_reference.clone().map(Some),
        &config.theta_reference.clone().map(Some),
        None,
        &mut src,
    );
    let logit_top_k = pick("logit_top_k", &flags.logit_top_k, &config.logit_top_k, DEFAULT_TOP_K, &mut src);
    let logit_epsilon = pick(
        "logit_epsilon",
        &flags.logit_epsilon,
        &config.logit_epsilon,
        DEFAULT_SHIFT_EPSILON,
        &mut src,
    );
    let lenient = pick("lenient", &flags.lenient, &config.lenient, false, &mut src);
    let gate = pick("gate", &flags.gate, &config.gate, vec![], &mut src);

    if layers.is_empty() {
        return Err(invalid("layers", "at least one layer is required"));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(invalid("ks", "need one or more k >= 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", format!("{p} is not in (0, 1)")));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid("tau", format!("{tau} is not in [0, 1]")));
    }
    if let Some(t) = theta_eu {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid("theta_eu", format!("{t} must be > 0")));
        }
    }
    if !(theta_quantile > 0.0 && theta_quantile < 1.0) {
        return Err(invalid("theta_quantile", format!("{theta_quantile} is not in (0, 1)")));
    }
    if logit_top_k < 2 {
        return Err(invalid("logit_top_k", "must be >= 2"));
    }
    if !(logit_epsilon > 0.0 && logit_epsilon.is_finite()) {
        return Err(invalid("logit_epsilon", "must be > 0"));
    }
    let theta_reference = theta_reference.map(|s| s.parse()).transpose()?;
    let gate = gate.iter().map(|g| g.parse()).collect::<Result<_, _>>()?;

    Ok((
        AuditParams {
            layers,
            fixed_keys,
            ks,
            p,
            tau,
            theta_eu,
            theta_quantile,
            theta_reference,
            logit_top_k,
            logit_epsilon,
            schema_mode: if lenient {
                SchemaMode::Lenient
            } else {
                SchemaMode::Strict
            },
            gate,
        },
        src,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let flags = ParamOverrides {
            tau: Some(0.5),
            ..Default::default()
        };
        let config: ParamOverrides =
            serde_json::from_str(r#"{"tau": 0.7, "p": 0.8, "layers": ["rank"]}"#).unwrap();
        let (params, src) = resolve(&flags, &config).unwrap();
        assert_eq!(params.tau, 0.5);
        assert_eq!(params.p, 0.8);
        assert_eq!(params.layers, vec![Layer::Rank]);
        assert_eq!(params.ks, vec![3, 5]);
        assert_eq!(src["tau"], ParamSource::Flag);
        assert_eq!(src["p"], ParamSource::Config);
        assert_eq!(src["ks"], ParamSource::Default);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<ParamOverrides>(r#"{"tua": 0.7}"#).is_err());
    }

    #[test]
    fn validation() {
        let bad = ParamOverrides {
            p: Some(1.0),
            ..Default::default()
        };
        assert!(resolve(&bad, &ParamOverrides::default()).is_err());
        let bad = ParamOverrides {
            theta_reference: Some("novalue".into()),
            ..Default::default()
        };
        assert!(matches!(
            resolve(&bad, &ParamOverrides::default()),
            Err(ParamError::Selector(_))
        ));
    }

    #[test]
    fn layer_lists() {
        assert_eq!(parse_layers("all").unwrap().len(), 5);
        assert_eq!(
            parse_layers("logit, rank,rank").unwrap(),
            vec![Layer::Rank, Layer::Logit]
        );
        assert!(matches!(parse_layers("rank,foo"), Err(ParamError::UnknownLayer(_))));
    }

    #[test]
    fn gate_rules() {
        let g: GateRule = "rank.j@3>=1".parse().unwrap();
        assert_eq!((g.metric.as_str(), g.op, g.bound), ("rank.j@3", GateOp::Ge, 1.0));
        let g: GateRule = "embedding.d_cos < 0.01".parse().unwrap();
        assert_eq!(g.op, GateOp::Lt);
        assert!(g.op.holds(0.0, 0.01));
        assert!("rank.rbo".parse::<GateRule>().is_err());
        assert!(">=1".parse::<GateRule>().is_err());
        assert_eq!(g.to_string(), "embedding.d_cos<0.01");
    }
}
