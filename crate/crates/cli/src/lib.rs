//! `spacemean` command-line runner.
//!
//! Exit codes: 0 success, 1 malformed configuration or invocation,
//! 2 numerical failure (with `diagnostic.json`), 3 invariant failures.

pub mod commands;
pub mod config;
pub mod output;
pub mod setup;
pub mod validate;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::commands::{Failure, Outcome};
use crate::config::RunConfig;
use crate::output::Artifacts;
use crate::setup::Setup;

/// Environment override for the output directory.
pub const OUT_ENV: &str = "SPACEMEAN_OUT";

#[derive(Parser, Debug)]
#[command(name = "spacemean", version, about = "Space-mean SPDE simulation, adjoint solves and harvesting control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the environment and the configuration.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the invariant suite.
    Validate(RunArgs),
    /// Forward ensemble at the initial control.
    Simulate(RunArgs),
    /// Adjoint triple at the initial control.
    Adjoint(RunArgs),
    /// Picard iteration trace.
    Picard(RunArgs),
    /// Maximum-principle control iteration.
    Optimize(RunArgs),
    /// Directional-derivative report.
    Gradcheck(RunArgs),
    /// Brute-force search over constant controls.
    Oracle(RunArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Validate(a) => ("validate", a),
            Command::Simulate(a) => ("simulate", a),
            Command::Adjoint(a) => ("adjoint", a),
            Command::Picard(a) => ("picard", a),
            Command::Optimize(a) => ("optimize", a),
            Command::Gradcheck(a) => ("gradcheck", a),
            Command::Oracle(a) => ("oracle", a),
        }
    }
}

fn load(path: Option<&Path>) -> Result<RunConfig, String> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            RunConfig::parse(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

fn out_dir(args: &RunArgs, config: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&config.output.dir))
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    command: &'a str,
    error: String,
}

fn dispatch(name: &str, setup: &Setup, art: &mut Artifacts) -> std::result::Result<Option<Vec<&'static str>>, Failure> {
    let run: fn(&Setup, &mut Artifacts) -> Outcome = match name {
        "simulate" => commands::simulate,
        "adjoint" => commands::adjoint,
        "picard" => commands::picard,
        "optimize" => commands::optimize,
        "gradcheck" => commands::gradcheck,
        "oracle" => commands::oracle,
        _ => {
            let report = validate::run(setup)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            art.write_json("validation.json", &report)?;
            return Ok(Some(report.failures()));
        }
    };
    run(setup, art)?;
    Ok(None)
}

fn execute(name: &str, config: RunConfig, dir: &Path) -> i32 {
    let setup = match setup::build(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: invalid configuration: {e}");
            return 1;
        }
    };
    let mut art = match Artifacts::create(dir) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", dir.display());
            return 2;
        }
    };
    match dispatch(name, &setup, &mut art) {
        Ok(failures) => {
            if let Err(e) = art.finish(name, &config) {
                eprintln!("error: cannot write manifest: {e}");
                return 2;
            }
            match failures {
                Some(f) if !f.is_empty() => {
                    eprintln!("validation failed: {}", f.join(", "));
                    3
                }
                _ => 0,
            }
        }
        Err(e) => {
            eprintln!("error: {name} failed: {e}");
            let diag = Diagnostic { command: name, error: e.to_string() };
            if let Ok(text) = serde_json::to_string_pretty(&diag) {
                let _ = std::fs::write(dir.join("diagnostic.json"), text + "\n");
            }
            2
        }
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = cli.command.parts();
    let config = match load(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let dir = out_dir(args, &config);
    let threads = config.solver.threads;
    if threads == 0 {
        return execute(name, config, &dir);
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| execute(name, config, &dir)),
        Err(e) => {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            2
        }
    }
}
