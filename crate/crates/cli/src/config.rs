//! Scenario configuration files.
//!
//! Configs are TOML documents with a fixed set of keys; see
//! `tests/fixtures/config.grammar` for the exact grammar. Field components
//! are expression strings (see [`crate::expr`]). Inside experiment tables any
//! string starting with `=` is evaluated as a constant expression.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use toml::Spanned;
use torlink_core::field::{
    DeclaredCol, FieldPair, FieldSpec, SolidTorusDomain, Thresholds, TiltedFibration,
};
use torlink_core::section::FlowSetup;

use crate::experiments::Experiment;
use crate::expr::{self, Expr};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative and absolute tolerance of the flow integrator.
    pub integrator: f64,
    pub collinearity: f64,
    pub frame_det: f64,
    pub denominator: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            integrator: 1e-11,
            collinearity: t.collinearity,
            frame_det: t.frame_det,
            denominator: t.denominator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub radius: f64,
    /// Fibration `Σ = θ − tilt·x`.
    pub tilt: f64,
    /// `"y=0"` or `"none"`.
    pub declared_col: String,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            tilt: 0.0,
            declared_col: "none".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Default output directory for `torlink run`.
    pub dir: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFields {
    #[serde(rename = "X")]
    x: Spanned<Vec<Spanned<String>>>,
    #[serde(rename = "Y")]
    y: Spanned<Vec<Spanned<String>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    domain: DomainConfig,
    fields: Option<RawFields>,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default)]
    output: OutputConfig,
    #[serde(default)]
    experiment: Vec<Spanned<toml::Table>>,
}

/// Compiled components of a field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldExpr {
    pub source: [String; 3],
    #[serde(skip)]
    pub compiled: Arc<[Expr; 3]>,
}

impl FieldExpr {
    pub fn compile(source: [String; 3], params: &BTreeMap<String, f64>) -> Result<Self, Vec<String>> {
        let mut errors = Vec::new();
        let mut out = Vec::with_capacity(3);
        for (k, s) in source.iter().enumerate() {
            match expr::parse(s, params) {
                Ok(e) => out.push(e),
                Err(e) => errors.push(format!("component {k}: {e}")),
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        let compiled: [Expr; 3] = out.try_into().expect("three components");
        Ok(Self {
            source,
            compiled: Arc::new(compiled),
        })
    }

    pub fn eval(&self, x: f64, y: f64, theta: f64) -> Vector3<f64> {
        let c = &self.compiled;
        Vector3::new(c[0].eval(x, y, theta), c[1].eval(x, y, theta), c[2].eval(x, y, theta))
    }

    pub fn field(&self) -> FieldSpec {
        let c = self.clone();
        FieldSpec::new(move |p| c.eval(p.x, p.y, p.theta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fields {
    #[serde(rename = "X")]
    pub x: FieldExpr,
    #[serde(rename = "Y")]
    pub y: FieldExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub label: String,
    pub assert: bool,
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(skip)]
    pub line: usize,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    pub domain: DomainConfig,
    pub fields: Option<Fields>,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
    pub experiments: Vec<ExperimentSpec>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Replace strings of the form `"=expr"` by their constant value.
fn resolve_constants(
    v: &mut toml::Value,
    params: &BTreeMap<String, f64>,
    path: &str,
    errors: &mut Vec<String>,
) {
    match v {
        toml::Value::String(s) if s.starts_with('=') => match expr::parse_constant(&s[1..], params) {
            Ok(c) => *v = toml::Value::Float(c),
            Err(e) => errors.push(format!("{path}: {e}")),
        },
        toml::Value::Array(a) => {
            for (k, item) in a.iter_mut().enumerate() {
                resolve_constants(item, params, &format!("{path}[{k}]"), errors);
            }
        }
        toml::Value::Table(t) => {
            for (k, item) in t.iter_mut() {
                resolve_constants(item, params, &format!("{path}.{k}"), errors);
            }
        }
        _ => {}
    }
}

fn probe_field(name: &str, f: &FieldExpr, radius: f64, errors: &mut Vec<String>) {
    let n = 7;
    for i in 0..n {
        for j in 0..n {
            let x = -radius + 2.0 * radius * i as f64 / (n - 1) as f64;
            let y = -radius + 2.0 * radius * j as f64 / (n - 1) as f64;
            if x * x + y * y > radius * radius {
                continue;
            }
            for k in 0..n {
                let th = k as f64 / n as f64;
                let v = f.eval(x, y, th);
                if !v.iter().all(|c| c.is_finite()) {
                    errors.push(format!(
                        "field {name} is not finite at (x, y, theta) = ({x}, {y}, {th})"
                    ));
                    return;
                }
            }
            let (a, b) = (f.eval(x, y, 0.0), f.eval(x, y, 1.0));
            if (a - b).norm() > 1e-9 * (1.0 + a.norm()) {
                errors.push(format!(
                    "field {name} is not periodic in theta at (x, y) = ({x}, {y})"
                ));
                return;
            }
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| ConfigError::Parse {
            line: e.span().map_or(1, |s| line_of(src, s.start)),
            message: e.message().to_string(),
        })?;
        let mut errors = Vec::new();
        let mut syntax: Vec<(usize, String)> = Vec::new();

        if raw.name.trim().is_empty() {
            errors.push("name must not be empty".into());
        }
        for (k, v) in &raw.params {
            if matches!(k.as_str(), "x" | "y" | "theta" | "pi" | "e") || expr::FUNCTIONS.contains(&k.as_str()) {
                errors.push(format!("parameter '{k}' shadows a reserved name"));
            }
            if !v.is_finite() {
                errors.push(format!("parameter '{k}' is not finite"));
            }
        }
        let d = &raw.domain;
        if !(d.radius.is_finite() && d.radius > 0.0) {
            errors.push(format!("domain.radius must be positive, got {}", d.radius));
        }
        if !d.tilt.is_finite() {
            errors.push("domain.tilt must be finite".into());
        }
        if !matches!(d.declared_col.as_str(), "y=0" | "none") {
            errors.push(format!(
                "domain.declared_col must be \"y=0\" or \"none\", got \"{}\"",
                d.declared_col
            ));
        }
        let t = &raw.tolerances;
        for (name, v) in [
            ("integrator", t.integrator),
            ("collinearity", t.collinearity),
            ("frame_det", t.frame_det),
            ("denominator", t.denominator),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("tolerances.{name} must be positive, got {v}"));
            }
        }

        let fields = raw.fields.as_ref().and_then(|f| {
            let mut compile = |name: &str, comps: &Spanned<Vec<Spanned<String>>>| {
                let line = line_of(src, comps.span().start);
                if comps.get_ref().len() != 3 {
                    errors.push(format!(
                        "line {line}: field {name} needs 3 components, got {}",
                        comps.get_ref().len()
                    ));
                    return None;
                }
                let mut ok = true;
                for (k, c) in comps.get_ref().iter().enumerate() {
                    if let Err(e) = expr::parse(c.get_ref(), &raw.params) {
                        syntax.push((line_of(src, c.span().start), format!("field {name}[{k}]: {e}")));
                        ok = false;
                    }
                }
                if !ok {
                    return None;
                }
                let source: [String; 3] = std::array::from_fn(|k| comps.get_ref()[k].get_ref().clone());
                let fe = FieldExpr::compile(source, &raw.params).ok()?;
                probe_field(name, &fe, raw.domain.radius.max(1e-9), &mut errors);
                Some(fe)
            };
            let x = compile("X", &f.x);
            let y = compile("Y", &f.y);
            Some(Fields { x: x?, y: y? })
        });

        let mut experiments = Vec::new();
        for (idx, table) in raw.experiment.iter().enumerate() {
            let line = line_of(src, table.span().start);
            let mut value = toml::Value::Table(table.get_ref().clone());
            let before = errors.len();
            resolve_constants(&mut value, &raw.params, &format!("line {line}: experiment {idx}"), &mut errors);
            if errors.len() > before {
                continue;
            }
            let toml::Value::Table(mut table) = value else {
                unreachable!()
            };
            let kind = match table.remove("kind") {
                Some(toml::Value::String(k)) => k,
                Some(_) => {
                    errors.push(format!("line {line}: experiment kind must be a string"));
                    continue;
                }
                None => {
                    errors.push(format!("line {line}: experiment {idx} has no kind"));
                    continue;
                }
            };
            let label = match table.remove("label") {
                Some(toml::Value::String(l)) => l,
                None => kind.clone(),
                Some(_) => {
                    errors.push(format!("line {line}: label must be a string"));
                    continue;
                }
            };
            let assert = match table.remove("assert") {
                Some(toml::Value::Boolean(b)) => b,
                None => true,
                Some(_) => {
                    errors.push(format!("line {line}: assert must be a boolean"));
                    continue;
                }
            };
            let params = match table.remove("params") {
                Some(toml::Value::Table(p)) => p,
                None => toml::Table::new(),
                Some(_) => {
                    errors.push(format!("line {line}: params must be a table"));
                    continue;
                }
            };
            if let Some(extra) = table.keys().next() {
                errors.push(format!("line {line}: unknown experiment key '{extra}'"));
                continue;
            }
            match Experiment::from_table(&kind, params, &raw.params) {
                Ok(experiment) => {
                    if experiment.needs_fields() && raw.fields.is_none() {
                        errors.push(format!("line {line}: experiment '{kind}' needs [fields]"));
                    }
                    if experiment.needs_declared_col() && raw.domain.declared_col != "y=0" {
                        errors.push(format!(
                            "line {line}: experiment '{kind}' needs domain.declared_col = \"y=0\""
                        ));
                    }
                    experiments.push(ExperimentSpec {
                        label,
                        assert,
                        experiment,
                        line,
                    });
                }
                Err(e) => errors.push(format!("line {line}: experiment '{kind}': {e}")),
            }
        }
        let mut labels = std::collections::BTreeSet::new();
        for e in &experiments {
            if !labels.insert(e.label.as_str()) {
                errors.push(format!("line {}: duplicate experiment label '{}'", e.line, e.label));
            }
        }

        if let Some((line, _)) = syntax.first() {
            let message = syntax.iter().map(|(_, m)| m.as_str()).collect::<Vec<_>>().join("; ");
            return Err(ConfigError::Parse { line: *line, message });
        }
        if !errors.is_empty() {
            return Err(ConfigError::Validation(errors));
        }
        Ok(Self {
            name: raw.name,
            description: raw.description,
            seed: raw.seed,
            params: raw.params,
            domain: raw.domain,
            fields,
            tolerances: raw.tolerances,
            output: raw.output,
            experiments,
        })
    }

    pub fn declared_col(&self) -> Option<DeclaredCol> {
        (self.domain.declared_col == "y=0").then_some(DeclaredCol::YZero)
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            collinearity: self.tolerances.collinearity,
            frame_det: self.tolerances.frame_det,
            denominator: self.tolerances.denominator,
            ..Thresholds::default()
        }
    }

    pub fn domain(&self) -> SolidTorusDomain {
        SolidTorusDomain::new(self.domain.radius)
            .with_fibration(Arc::new(TiltedFibration::tilted(self.domain.tilt)))
    }

    /// Field pair of the scenario, if it declares fields.
    pub fn field_pair(&self) -> Option<torlink_core::Result<FieldPair>> {
        let f = self.fields.as_ref()?;
        Some(
            FieldPair::with_thresholds(f.x.field(), f.y.field(), self.domain(), self.thresholds()).map(
                |p| match self.declared_col() {
                    Some(c) => p.with_declared_col(c),
                    None => p,
                },
            ),
        )
    }

    pub fn flow_setup(&self, tol: f64) -> Option<torlink_core::Result<FlowSetup>> {
        self.field_pair().map(|p| p.and_then(|p| FlowSetup::new(p, tol)))
    }
}
