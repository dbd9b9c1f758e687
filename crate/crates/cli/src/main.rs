use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use torlink::{run, scenarios, ConfigError, RunOptions, ScenarioConfig};
use torlink_core::degree::{sphere_degree, MeshMap};

#[derive(Parser)]
#[command(name = "torlink", version, about = "Index, holonomy and linking experiments on the solid torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in scenario by name.
    Run {
        config: String,
        /// Output directory for report.json and CSV tables.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Integrator tolerance override.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// List the built-in scenarios.
    ListScenarios,
    /// Degree of a sphere map given as a mesh file.
    Degree {
        #[arg(long)]
        mesh: PathBuf,
    },
}

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn load(config: &str) -> Result<ScenarioConfig, ConfigError> {
    let path = Path::new(config);
    if path.exists() {
        return ScenarioConfig::from_file(path);
    }
    match scenarios::load(config) {
        Some(r) => r,
        None => ScenarioConfig::from_file(path),
    }
}

fn run_cmd(config: &str, out: Option<PathBuf>, jobs: Option<usize>, tol: Option<f64>) -> ExitCode {
    let cfg = match load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let seed = match torlink::run::seed_from_env() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(t) = tol {
        if !(t.is_finite() && t > 0.0) {
            eprintln!("error: --tol must be a positive number");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let dir = out
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("torlink-out").join(&cfg.name));
    let report = match run(&cfg, &RunOptions { jobs, tol, seed }) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_FAILED);
        }
    };
    if let Err(e) = report.write(&dir) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_FAILED);
    }
    print!("{}", report.summary());
    println!("report written to {}", dir.join("report.json").display());
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn degree_cmd(mesh: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(mesh).with_context(|| format!("reading {}", mesh.display()))?;
    let map = MeshMap::from_text(&text)?;
    let stats = map.stats();
    let d = sphere_degree(&map)?;
    let out = serde_json::json!({
        "degree": d,
        "triangles": stats.triangles,
        "max_image_edge": stats.max_image_edge,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run { config, out, jobs, tol } => run_cmd(&config, out, jobs, tol),
        Command::ListScenarios => {
            for (name, src) in scenarios::BUILTIN {
                let desc = ScenarioConfig::parse(src).map(|c| c.description).unwrap_or_default();
                println!("{name:<22} {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Degree { mesh } => match degree_cmd(&mesh) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_USAGE)
            }
        },
    }
}
