//! `mpm-adapt`: scene generation, pretraining, adapter fitting, simulation,
//! rendering and evaluation from the command line.
//!
//! Exit codes: 0 success, 2 bad input, 3 numerical failure.

mod commands;
mod config;
mod scene_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::*;
use config::{overlay, read_config_file, write_snapshot, GlobalArgs, Precision};

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numerical(String),
}

impl From<mpm_adapt::Error> for Failure {
    fn from(e: mpm_adapt::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

#[derive(Parser)]
#[command(name = "mpm-adapt", version, about = "Differentiable MPM with adaptable neural materials")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    /// JSON file of option values; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth scene, trajectory and frames.
    Gen(GenArgs),
    /// Pretrain a neural base material on an analytic target.
    Pretrain(PretrainArgs),
    /// Fit an adapter to a ground-truth trajectory or frames.
    Fit(FitArgs),
    /// Roll out a scene under a material.
    Sim(SimArgs),
    /// Render a trajectory to PPM frames.
    Render(RenderArgs),
    /// Compare trajectories by Chamfer distance (and frames by PSNR).
    Eval(EvalArgs),
    /// Roll out a sweep of adapter composition weights.
    Interp(InterpArgs),
}

fn resolve<A: Serialize + DeserializeOwned>(flags: &A, file: &serde_json::Map<String, serde_json::Value>) -> Result<A, Failure> {
    overlay(flags, file)
}

macro_rules! dispatch {
    ($f:ident, $g:expr, $a:expr) => {
        match $g.precision {
            Some(Precision::F32) => $f::<f32>($g, $a),
            _ => $f::<f64>($g, $a),
        }
    };
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => read_config_file(p)?,
        None => Default::default(),
    };
    let mut g: GlobalArgs = resolve(&cli.global, &file)?;
    g.resolve_defaults();
    g.install_threads()?;
    match cli.command {
        Command::Gen(a) => {
            let mut a = resolve(&a, &file)?;
            a.resolve_defaults();
            write_snapshot(&a.output_dir()?, "gen", &g, &a)?;
            dispatch!(gen, &g, &a)
        }
        Command::Pretrain(a) => {
            let mut a = resolve(&a, &file)?;
            a.resolve_defaults();
            write_snapshot(&dir_of(&a.out, true)?, "pretrain", &g, &a)?;
            dispatch!(pretrain, &g, &a)
        }
        Command::Fit(a) => {
            let mut a = resolve(&a, &file)?;
            a.resolve_defaults();
            write_snapshot(&dir_of(&a.out, true)?, "fit", &g, &a)?;
            dispatch!(fit, &g, &a)
        }
        Command::Sim(a) => {
            let a: SimArgs = resolve(&a, &file)?;
            write_snapshot(&dir_of(&a.out, false)?, "sim", &g, &a)?;
            dispatch!(sim, &g, &a)
        }
        Command::Render(a) => {
            let mut a = resolve(&a, &file)?;
            a.resolve_defaults();
            write_snapshot(&dir_of(&a.out, true)?, "render", &g, &a)?;
            dispatch!(render, &g, &a)
        }
        Command::Eval(a) => {
            let a: EvalArgs = resolve(&a, &file)?;
            write_snapshot(&a.snapshot_dir()?, "eval", &g, &a)?;
            eval(&g, &a)
        }
        Command::Interp(a) => {
            let a: InterpArgs = resolve(&a, &file)?;
            write_snapshot(&dir_of(&a.out, true)?, "interp", &g, &a)?;
            dispatch!(interp, &g, &a)
        }
    }
}

/// Output directory of `--out`, itself or its parent when it names a file.
fn dir_of(out: &Option<PathBuf>, is_dir: bool) -> Result<PathBuf, Failure> {
    let out = out.clone().ok_or_else(|| Failure::Input("missing required option --out".into()))?;
    if is_dir {
        return Ok(out);
    }
    Ok(match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
