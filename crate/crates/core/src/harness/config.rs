//! Scenario configuration: strict JSON with `--set key=value` overrides.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::models::{self, AccParams, Benchmark, PlanarParams, ScalarParams, UnicycleParams};
use crate::certificates::{CertificateError, CertificateSpec, ClassKFunction, Family};
use crate::generator::GeneratorError;
use crate::qp::ControlBox;
use crate::region::Region;
use crate::sde::{SdeError, Vector};

pub const DEFAULT_DT: f64 = 0.0005;
pub const DEFAULT_SIGMA_LIST: [f64; 5] = [0.0, 0.05, 0.1, 0.15, 0.2];

/// Top-level keys of a scenario file, in schema order.
pub const TOP_LEVEL_KEYS: [&str; 13] = [
    "model",
    "model_params",
    "certificate",
    "T",
    "dt",
    "trajectories",
    "seed",
    "control_box",
    "saturate_after",
    "operating_region",
    "init_sampling",
    "sigma_list",
    "sup_resolution",
];
pub const CERTIFICATE_KEYS: [&str; 5] = ["family", "alphas", "gamma", "ho_szcbf_uses_h1", "weights"];
const WEIGHT_KEYS: [&str; 2] = ["u", "slack"];
const BOX_KEYS: [&str; 2] = ["lo", "hi"];
const CLASS_K_KEYS: [&str; 3] = ["kind", "k", "exponent"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("bad override '{0}': expected key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] SdeError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Acc,
    Unicycle,
    Planar,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSampling {
    #[default]
    Fixed,
    UniformInDisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub u: Vec<f64>,
    #[serde(default = "one")]
    pub slack: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<ClassKFunction>>,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub ho_szcbf_uses_h1: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
}

/// Per-control box in which `null` stands for an infinite bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<Option<f64>>,
    pub hi: Vec<Option<f64>>,
}

impl BoxConfig {
    pub fn to_box(&self) -> Result<ControlBox, ConfigError> {
        let lo = self.lo.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect();
        let hi = self.hi.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
        ControlBox::new(lo, hi).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn from_box(b: &ControlBox) -> Self {
        let opt = |v: &f64| v.is_finite().then_some(*v);
        BoxConfig {
            lo: b.lo.iter().map(opt).collect(),
            hi: b.hi.iter().map(opt).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    #[serde(default = "empty_object")]
    pub model_params: Value,
    pub certificate: CertificateConfig,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_box: Option<BoxConfig>,
    #[serde(default)]
    pub saturate_after: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_region: Option<Region>,
    #[serde(default)]
    pub init_sampling: InitSampling,
    #[serde(default = "default_sigma_list")]
    pub sigma_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_resolution: Option<Vec<usize>>,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_trajectories() -> usize {
    200
}
fn one_u64() -> u64 {
    1
}
fn default_sigma_list() -> Vec<f64> {
    DEFAULT_SIGMA_LIST.to_vec()
}

/// Typed model parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Acc(AccParams),
    Unicycle(UnicycleParams),
    Planar(PlanarParams),
    Scalar(ScalarParams),
}

impl ModelParams {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Acc => ModelParams::Acc(AccParams::default()),
            ModelKind::Unicycle => ModelParams::Unicycle(UnicycleParams::default()),
            ModelKind::Planar => ModelParams::Planar(PlanarParams::default()),
            ModelKind::Scalar => ModelParams::Scalar(ScalarParams::default()),
        }
    }

    fn parse(kind: ModelKind, value: &Value) -> Result<Self, ConfigError> {
        let v = value.clone();
        Ok(match kind {
            ModelKind::Acc => ModelParams::Acc(serde_json::from_value(v)?),
            ModelKind::Unicycle => ModelParams::Unicycle(serde_json::from_value(v)?),
            ModelKind::Planar => ModelParams::Planar(serde_json::from_value(v)?),
            ModelKind::Scalar => ModelParams::Scalar(serde_json::from_value(v)?),
        })
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            ModelParams::Acc(p) => serde_json::to_value(p),
            ModelParams::Unicycle(p) => serde_json::to_value(p),
            ModelParams::Planar(p) => serde_json::to_value(p),
            ModelParams::Scalar(p) => serde_json::to_value(p),
        };
        v.expect("parameter structs serialize")
    }

    fn sigmas(&self) -> Vec<f64> {
        match self {
            ModelParams::Acc(p) => vec![p.sigma1, p.sigma2],
            ModelParams::Unicycle(p) => vec![p.sigma1, p.sigma2],
            ModelParams::Planar(p) => vec![p.sigma],
            ModelParams::Scalar(p) => vec![p.sigma],
        }
    }

    /// Sets every noise intensity of the model to `sigma`.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ModelParams::Acc(p) => (p.sigma1, p.sigma2) = (sigma, sigma),
            ModelParams::Unicycle(p) => (p.sigma1, p.sigma2) = (sigma, sigma),
            ModelParams::Planar(p) => p.sigma = sigma,
            ModelParams::Scalar(p) => p.sigma = sigma,
        }
        out
    }

    pub fn build(&self) -> Result<Benchmark, SdeError> {
        match self {
            ModelParams::Acc(p) => models::acc(p),
            ModelParams::Unicycle(p) => models::unicycle(p),
            ModelParams::Planar(p) => models::planar(p),
            ModelParams::Scalar(p) => models::scalar(p),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let v = self.to_value();
        let mut bad = Vec::new();
        collect_non_finite("model_params", &v, &mut bad);
        if !bad.is_empty() {
            return Err(ConfigError::Invalid(format!("non-finite model parameters: {}", bad.join(", "))));
        }
        if self.sigmas().iter().any(|s| *s < 0.0) {
            return Err(ConfigError::Invalid("noise intensities must be nonnegative".into()));
        }
        match self {
            ModelParams::Acc(p) if !(p.mass > 0.0) || !(p.tau > 0.0) => {
                Err(ConfigError::Invalid("ACC needs M > 0 and tau > 0".into()))
            }
            ModelParams::Unicycle(p) if !(p.r > 0.0) => Err(ConfigError::Invalid("radius must be positive".into())),
            ModelParams::Planar(p) if !(p.r > 0.0) => Err(ConfigError::Invalid("radius must be positive".into())),
            _ => Ok(()),
        }
    }
}

fn collect_non_finite(path: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Number(n) if !n.as_f64().is_some_and(f64::is_finite) => out.push(path.to_string()),
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                collect_non_finite(&format!("{path}[{i}]"), item, out);
            }
        }
        Value::Object(map) => {
            for (k, item) in map {
                collect_non_finite(&format!("{path}.{k}"), item, out);
            }
        }
        _ => {}
    }
}

fn unknown_in(path: &str, value: Option<&Value>, known: &[&str], out: &mut Vec<String>) {
    if let Some(Value::Object(map)) = value {
        for k in map.keys() {
            if !known.contains(&k.as_str()) {
                out.push(if path.is_empty() { k.clone() } else { format!("{path}.{k}") });
            }
        }
    }
}

/// Every key of `raw` not known to the schema, as dotted paths.
pub fn unknown_keys(raw: &Value) -> Vec<String> {
    let mut out = Vec::new();
    unknown_in("", Some(raw), &TOP_LEVEL_KEYS, &mut out);
    let cert = raw.get("certificate");
    unknown_in("certificate", cert, &CERTIFICATE_KEYS, &mut out);
    unknown_in("certificate.weights", cert.and_then(|c| c.get("weights")), &WEIGHT_KEYS, &mut out);
    if let Some(Value::Array(alphas)) = cert.and_then(|c| c.get("alphas")) {
        for (i, a) in alphas.iter().enumerate() {
            unknown_in(&format!("certificate.alphas[{i}]"), Some(a), &CLASS_K_KEYS, &mut out);
        }
    }
    unknown_in("control_box", raw.get("control_box"), &BOX_KEYS, &mut out);
    unknown_in("operating_region", raw.get("operating_region"), &BOX_KEYS, &mut out);
    let kind = raw
        .get("model")
        .cloned()
        .and_then(|m| serde_json::from_value::<ModelKind>(m).ok());
    if let Some(kind) = kind {
        let defaults = ModelParams::default_for(kind).to_value();
        let known: Vec<&str> = defaults
            .as_object()
            .map(|m| m.keys().map(String::as_str).collect())
            .unwrap_or_default();
        unknown_in("model_params", raw.get("model_params"), &known, &mut out);
    }
    out
}

/// Applies `key.path=value`; the value is parsed as JSON when possible and
/// taken as a string otherwise.
pub fn apply_override(raw: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let parsed = serde_json::from_str(value.trim()).unwrap_or_else(|_| Value::String(value.trim().to_string()));
    let mut cursor = raw;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = match cursor {
            Value::Object(m) => m,
            _ => return Err(ConfigError::Override(format!("{assignment} (not an object at '{part}')"))),
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = map.entry(part.to_string()).or_insert_with(empty_object);
    }
    unreachable!("split always yields at least one part")
}

/// A validated scenario with its typed model parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub params: ModelParams,
}

impl ScenarioConfig {
    /// Parses a raw JSON value after applying overrides, listing every
    /// unknown key at once.
    pub fn from_value(mut raw: Value, overrides: &[String]) -> Result<Scenario, ConfigError> {
        for o in overrides {
            apply_override(&mut raw, o)?;
        }
        if !raw.is_object() {
            return Err(ConfigError::Invalid("configuration must be a JSON object".into()));
        }
        let unknown = unknown_keys(&raw);
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        let config: ScenarioConfig = serde_json::from_value(raw)?;
        config.into_scenario()
    }

    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Scenario, ConfigError> {
        Self::from_value(serde_json::from_str(text)?, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text, overrides)
    }

    fn into_scenario(self) -> Result<Scenario, ConfigError> {
        let params = ModelParams::parse(self.model, &self.model_params)?;
        params.validate()?;
        let mut config = self;
        config.model_params = params.to_value();
        let horizon = config.horizon.unwrap_or(match config.model {
            ModelKind::Acc => 20.0,
            _ => 5.0,
        });
        config.horizon = Some(horizon);
        if !(config.dt > 0.0) || !config.dt.is_finite() {
            return Err(ConfigError::Invalid(format!("dt must be positive, got {}", config.dt)));
        }
        if !(horizon >= config.dt) || !horizon.is_finite() {
            return Err(ConfigError::Invalid(format!("T = {horizon} must be finite and at least dt = {}", config.dt)));
        }
        if config.trajectories == 0 {
            return Err(ConfigError::Invalid("trajectories must be positive".into()));
        }
        if config.sigma_list.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(ConfigError::Invalid("sigma_list entries must be finite and nonnegative".into()));
        }
        let bench = params.build()?;
        if let Some(r) = &config.operating_region {
            r.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if r.dim() != bench.model.state_dim() {
                return Err(ConfigError::Invalid("operating_region dimension differs from the model".into()));
            }
        } else {
            config.operating_region = Some(bench.region.clone());
        }
        if let Some(b) = &config.control_box {
            let b = b.to_box()?;
            if b.lo.len() != bench.model.control_dim() {
                return Err(ConfigError::Invalid("control_box dimension differs from the model".into()));
            }
        }
        if let Some(res) = &config.sup_resolution {
            if res.len() != bench.model.state_dim() || res.iter().any(|r| *r < 2) {
                return Err(ConfigError::Invalid("sup_resolution needs one entry ≥ 2 per state".into()));
            }
        }
        if let Some(w) = &config.certificate.weights {
            if w.u.len() != bench.model.control_dim() {
                return Err(ConfigError::Invalid("weights.u needs one entry per control".into()));
            }
        }
        if config.init_sampling == InitSampling::UniformInDisk && bench.disk_radius.is_none() {
            return Err(ConfigError::Invalid(format!(
                "uniform_in_disk sampling is not defined for model {:?}",
                config.model
            )));
        }
        let scenario = Scenario { config, params };
        scenario.certificate(&bench)?;
        Ok(scenario)
    }
}

impl Scenario {
    pub fn horizon(&self) -> f64 {
        self.config.horizon.expect("resolved on load")
    }

    pub fn region(&self) -> &Region {
        self.config.operating_region.as_ref().expect("resolved on load")
    }

    pub fn family(&self) -> Family {
        self.config.certificate.family
    }

    pub fn benchmark(&self) -> Result<Benchmark, ConfigError> {
        let mut b = self.params.build()?;
        b.region = self.region().clone();
        Ok(b)
    }

    pub fn control_box(&self) -> Result<Option<ControlBox>, ConfigError> {
        self.config.control_box.as_ref().map(BoxConfig::to_box).transpose()
    }

    /// Copy with a different family (and its default gains).
    pub fn with_family(&self, family: Family) -> Scenario {
        let mut s = self.clone();
        if s.config.certificate.family != family {
            s.config.certificate.family = family;
            s.config.certificate.alphas = None;
        }
        s
    }

    pub fn with_sigma(&self, sigma: f64) -> Scenario {
        let mut s = self.clone();
        s.params = s.params.with_sigma(sigma);
        s.config.model_params = s.params.to_value();
        s
    }

    pub fn with_box(&self, control_box: Option<&ControlBox>) -> Scenario {
        let mut s = self.clone();
        s.config.control_box = control_box.map(BoxConfig::from_box);
        s
    }

    pub fn with_x0(&self, x0: &Vector) -> Scenario {
        let mut s = self.clone();
        match &mut s.params {
            ModelParams::Acc(p) => p.x0.copy_from_slice(x0.as_slice()),
            ModelParams::Unicycle(p) => p.x0.copy_from_slice(x0.as_slice()),
            ModelParams::Planar(p) => p.x0.copy_from_slice(x0.as_slice()),
            ModelParams::Scalar(p) => p.x0 = x0[0],
        }
        s.config.model_params = s.params.to_value();
        s
    }

    fn default_alphas(&self, r: usize) -> Vec<ClassKFunction> {
        let c = &self.config.certificate;
        match c.family {
            Family::Srcbf => vec![ClassKFunction::linear(c.gamma)],
            Family::Szcbf => vec![ClassKFunction::linear(1.0)],
            Family::Scbf | Family::HoScbf => vec![],
            Family::HoSzcbf => vec![ClassKFunction::linear(1.0); r],
        }
    }

    /// Certificate for `bench`, checking the family against the relative
    /// degree of its barrier.
    pub fn certificate(&self, bench: &Benchmark) -> Result<CertificateSpec, ConfigError> {
        let c = &self.config.certificate;
        let r = bench.relative_degree();
        let alphas = c.alphas.clone().unwrap_or_else(|| self.default_alphas(r));
        match c.family {
            Family::Srcbf | Family::Szcbf | Family::Scbf if r != 1 => {
                return Err(ConfigError::Invalid(format!(
                    "{} needs a relative-degree-1 barrier; this model has relative degree {r}",
                    c.family
                )))
            }
            Family::HoSzcbf if r != 2 => {
                return Err(ConfigError::Invalid(format!(
                    "ho_szcbf is built for relative degree 2; this model has relative degree {r}"
                )))
            }
            _ => {}
        }
        let chain = if c.family.is_high_order() {
            Some(bench.chain()?)
        } else {
            None
        };
        let gamma = match c.family {
            Family::Srcbf => alphas
                .first()
                .and_then(ClassKFunction::linear_gain)
                .unwrap_or(c.gamma),
            _ => c.gamma,
        };
        Ok(CertificateSpec::new(
            c.family,
            bench.h.clone(),
            chain,
            alphas,
            gamma,
            c.ho_szcbf_uses_h1,
        )?)
    }

    pub fn weights(&self, bench: &Benchmark) -> (Vec<f64>, f64) {
        match &self.config.certificate.weights {
            Some(w) => (w.u.clone(), w.slack),
            None => (vec![1.0; bench.model.control_dim()], 1.0),
        }
    }

    /// Grid resolution for supremum estimates.
    pub fn sup_resolution(&self) -> Vec<usize> {
        self.config.sup_resolution.clone().unwrap_or_else(|| {
            let n = self.region().dim();
            let per = match n {
                1 => 2001,
                2 => 201,
                _ => 41,
            };
            vec![per; n]
        })
    }

    /// Keys present in the resolved configuration.
    pub fn resolved_keys(&self) -> BTreeSet<String> {
        match serde_json::to_value(&self.config) {
            Ok(Value::Object(m)) => m.keys().cloned().collect(),
            _ => BTreeSet::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_acc_config_fills_defaults() {
        let s = ScenarioConfig::from_json_str(r#"{"model":"acc","certificate":{"family":"scbf"}}"#, &[]).unwrap();
        assert_eq!(s.horizon(), 20.0);
        assert_eq!(s.config.dt, 0.0005);
        assert_eq!(s.params, ModelParams::Acc(AccParams::default()));
        assert_eq!(s.region().hi, vec![40.0, 40.0, 300.0]);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = ScenarioConfig::from_json_str(
            r#"{"model":"acc","certificate":{"family":"scbf","colour":1},"model_params":{"mass":3},"extra":0}"#,
            &[],
        )
        .unwrap_err();
        match err {
            ConfigError::UnknownKeys(keys) => {
                assert_eq!(keys, vec!["extra", "certificate.colour", "model_params.mass"]);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let s = ScenarioConfig::from_json_str(
            r#"{"model":"unicycle","certificate":{"family":"ho_scbf"}}"#,
            &["model_params.sigma1=0.3".into(), "T=2".into(), "certificate.family=ho_szcbf".into()],
        )
        .unwrap();
        assert_eq!(s.horizon(), 2.0);
        assert_eq!(s.family(), Family::HoSzcbf);
        match &s.params {
            ModelParams::Unicycle(p) => assert_eq!(p.sigma1, 0.3),
            _ => unreachable!(),
        }
        assert!(apply_override(&mut Value::Null, "novalue").is_err());
    }

    #[test]
    fn family_must_match_relative_degree() {
        assert!(ScenarioConfig::from_json_str(r#"{"model":"unicycle","certificate":{"family":"scbf"}}"#, &[]).is_err());
        assert!(ScenarioConfig::from_json_str(r#"{"model":"acc","certificate":{"family":"ho_szcbf"}}"#, &[]).is_err());
        assert!(ScenarioConfig::from_json_str(r#"{"model":"acc","certificate":{"family":"ho_scbf"}}"#, &[]).is_ok());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = [
            r#"{"model":"acc","certificate":{"family":"scbf"},"dt":0}"#,
            r#"{"model":"acc","certificate":{"family":"scbf"},"T":0.0001}"#,
            r#"{"model":"acc","certificate":{"family":"scbf"},"trajectories":0}"#,
            r#"{"model":"acc","certificate":{"family":"scbf"},"model_params":{"sigma1":-1}}"#,
            r#"{"model":"acc","certificate":{"family":"scbf"},"init_sampling":"uniform_in_disk"}"#,
            r#"{"model":"acc","certificate":{"family":"scbf"},"control_box":{"lo":[1],"hi":[0]}}"#,
        ];
        for text in bad {
            assert!(ScenarioConfig::from_json_str(text, &[]).is_err(), "{text}");
        }
    }

    #[test]
    fn box_round_trips_through_nulls() {
        let b = BoxConfig { lo: vec![Some(-2.0)], hi: vec![None] };
        let cb = b.to_box().unwrap();
        assert!(cb.hi[0].is_infinite());
        assert_eq!(BoxConfig::from_box(&cb), b);
    }
}
