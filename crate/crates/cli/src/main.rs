//! `wifield` command-line front end.

mod commands;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use commands::*;

#[derive(Debug, Parser)]
#[command(name = "wifield", version, about = "2D EM inverse scattering for WiFi-band material sensing")]
struct Cli {
    /// Base random seed (overrides WIFIELD_SEED).
    #[arg(long, global = true, env = "WIFIELD_SEED")]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the run report (defaults next to the main output).
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Solve the forward problem for a scene and write the fields as JSON.
    Forward(ForwardArgs),
    /// Compare the MoM solver with the dielectric-cylinder series solution.
    OracleCylinder(CylinderArgs),
    /// Ray model versus full-wave field behind a dielectric slab (CSV).
    CompareRay(RayArgs),
    /// Simulate CSI packets for a scene.
    Simulate(SimulateArgs),
    /// Estimate link gains from empty-scene measurements.
    Calibrate(CalibrateArgs),
    /// Regularized Born inversion of complex scattered fields.
    InvertBorn(BornArgs),
    /// Phaseless pre-identification from measured amplitudes.
    InvertPhaseless(PhaselessArgs),
    /// Generate a labelled pre-image dataset.
    GenDataset(DatasetArgs),
    /// Render |chi| of one tone (or a label grid) as a PGM image.
    Render(RenderArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Forward(_) => "forward",
            Command::OracleCylinder(_) => "oracle-cylinder",
            Command::CompareRay(_) => "compare-ray",
            Command::Simulate(_) => "simulate",
            Command::Calibrate(_) => "calibrate",
            Command::InvertBorn(_) => "invert-born",
            Command::InvertPhaseless(_) => "invert-phaseless",
            Command::GenDataset(_) => "gen-dataset",
            Command::Render(_) => "render",
        }
    }

    fn primary_output(&self) -> &Path {
        match self {
            Command::Forward(a) => &a.out,
            Command::OracleCylinder(a) => &a.out,
            Command::CompareRay(a) => &a.out,
            Command::Simulate(a) => &a.out,
            Command::Calibrate(a) => &a.out,
            Command::InvertBorn(a) => &a.out,
            Command::InvertPhaseless(a) => &a.out,
            Command::GenDataset(a) => &a.out,
            Command::Render(a) => &a.out,
        }
    }

    fn run(&self, seed: u64) -> wifield::Result<Outcome> {
        match self {
            Command::Forward(a) => forward(a),
            Command::OracleCylinder(a) => oracle_cylinder(a),
            Command::CompareRay(a) => compare_ray(a),
            Command::Simulate(a) => simulate(a, seed),
            Command::Calibrate(a) => calibrate(a),
            Command::InvertBorn(a) => invert_born(a),
            Command::InvertPhaseless(a) => invert_phaseless(a, seed),
            Command::GenDataset(a) => gen_dataset(a, seed),
            Command::Render(a) => render(a),
        }
    }
}

#[derive(Debug, Serialize)]
struct RunReport {
    command: String,
    config_hash: String,
    seed: u64,
    wall_time: f64,
    outputs: Vec<PathBuf>,
    metrics: BTreeMap<String, f64>,
    error: Option<String>,
}

fn report_path(cli: &Cli) -> PathBuf {
    if let Some(p) = &cli.report {
        return p.clone();
    }
    let out = cli.command.primary_output();
    match &cli.command {
        Command::GenDataset(_) => out.join("run_report.json"),
        _ => out.with_extension("report.json"),
    }
}

fn config_hash(cli: &Cli, seed: u64) -> String {
    let json = serde_json::to_vec(&(&cli.command, seed)).expect("arguments serialize");
    hex::encode(&Sha256::digest(json)[..8])
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }

    let seed = cli.seed.unwrap_or(0);
    let start = Instant::now();
    let result = cli.command.run(seed);
    let (outcome, error, code) = match result {
        Ok(o) => (o, None, 0),
        Err(e) => {
            eprintln!("error: {e}");
            let code = if e.is_numeric() { 3 } else { 2 };
            (Outcome::default(), Some(e.to_string()), code)
        }
    };
    let report = RunReport {
        command: cli.command.name().to_string(),
        config_hash: config_hash(&cli, seed),
        seed,
        wall_time: start.elapsed().as_secs_f64(),
        outputs: outcome.outputs,
        metrics: outcome.metrics,
        error,
    };
    let path = report_path(&cli);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        let _ = std::fs::create_dir_all(dir);
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Err(e) = std::fs::write(&path, json) {
        eprintln!("error: cannot write run report {}: {e}", path.display());
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
