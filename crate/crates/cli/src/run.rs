//! Executes a scenario's experiment list and writes its report.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context as _, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::ScenarioConfig;
use crate::experiments::{Check, Context, Table};

pub const SEED_ENV: &str = "TORLINK_SEED";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    /// Overrides `tolerances.integrator`.
    pub tol: Option<f64>,
    /// Overrides the recorded seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub index: usize,
    pub label: String,
    pub kind: &'static str,
    pub asserted: bool,
    pub seed: u64,
    pub status: Status,
    pub error: Option<String>,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub data: Value,
    pub files: Vec<String>,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub toolkit_version: &'static str,
    pub scenario: String,
    pub seed: u64,
    pub seed_source: &'static str,
    pub integrator_tol: f64,
    pub config: ScenarioConfig,
    pub experiments: Vec<ExperimentResult>,
    /// True iff every asserted experiment ran and all its checks passed.
    pub passed: bool,
    pub wall_time_s: f64,
}

/// Seed from [`SEED_ENV`], if set and valid.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(
            v.trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer"))?,
        )),
        Err(_) => Ok(None),
    }
}

pub fn run(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let tol = opts.tol.unwrap_or(config.tolerances.integrator);
    let (seed, seed_source) = match opts.seed {
        Some(s) => (s, "override"),
        None => (config.seed, "config"),
    };
    let setup = config.flow_setup(tol);
    let setup_ref = setup.as_ref().map(|r| r.as_ref().map_err(|e| e.to_string()));
    let ctx = Context {
        setup: setup_ref,
        params: &config.params,
        tol,
    };

    let body = || {
        config
            .experiments
            .par_iter()
            .enumerate()
            .map(|(index, spec)| {
                let t0 = Instant::now();
                let exp_seed = seed.wrapping_add(index as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(exp_seed);
                let outcome = spec.experiment.run(&ctx, &mut rng);
                let wall_time_s = t0.elapsed().as_secs_f64();
                let (status, error, checks, data, tables) = match outcome {
                    Ok(o) => (Status::Ok, None, o.checks, o.data, o.tables),
                    Err(e) => (Status::Error, Some(format!("{e:#}")), vec![], Value::Null, vec![]),
                };
                let passed = status == Status::Ok && checks.iter().all(|c| c.passed);
                ExperimentResult {
                    index,
                    label: spec.label.clone(),
                    kind: spec.experiment.kind(),
                    asserted: spec.assert,
                    seed: exp_seed,
                    status,
                    error,
                    passed,
                    checks,
                    data,
                    files: tables.iter().map(|t| table_file(&spec.label, t)).collect(),
                    wall_time_s,
                    tables,
                }
            })
            .collect::<Vec<_>>()
    };
    let experiments = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .context("building the worker pool")?
            .install(body),
        None => body(),
    };
    let passed = experiments.iter().all(|e| !e.asserted || e.passed);
    Ok(RunReport {
        toolkit_version: env!("CARGO_PKG_VERSION"),
        scenario: config.name.clone(),
        seed,
        seed_source,
        integrator_tol: tol,
        config: config.clone(),
        experiments,
        passed,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn table_file(label: &str, table: &Table) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if clean == table.name {
        format!("{clean}.csv")
    } else {
        format!("{clean}.{}.csv", table.name)
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(&target)
        .with_context(|| format!("writing {}", target.display()))?;
    Ok(target)
}

fn csv_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

fn csv_bytes(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|&v| csv_number(v)))?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Write `report.json` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        for e in &self.experiments {
            for (table, file) in e.tables.iter().zip(&e.files) {
                written.push(write_atomic(dir, file, &csv_bytes(table)?)?);
            }
        }
        written.push(write_atomic(dir, "report.json", self.to_json()?.as_bytes())?);
        Ok(written)
    }

    /// One line per experiment.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for e in &self.experiments {
            let verdict = match (e.status, e.passed, e.asserted) {
                (Status::Error, _, _) => "ERROR",
                (_, true, _) => "pass",
                (_, false, true) => "FAIL",
                (_, false, false) => "fail (not asserted)",
            };
            out.push_str(&format!("{:<28} {:<22} {verdict}", e.label, e.kind));
            if let Some(err) = &e.error {
                out.push_str(&format!(": {err}"));
            }
            out.push('\n');
            for c in e.checks.iter().filter(|c| !c.passed) {
                out.push_str(&format!(
                    "    {}: lhs = {}, rhs = {}, residual = {:e}, tolerance = {:e}\n",
                    c.name, c.lhs, c.rhs, c.residual, c.tolerance
                ));
            }
        }
        out.push_str(if self.passed { "all asserted checks passed\n" } else { "asserted checks FAILED\n" });
        out
    }
}

/// Remove every `wall_time_s` key from a report value.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("wall_time_s");
            for item in m.values_mut() {
                strip_timing(item);
            }
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
