use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};

use assim_cli::presets::{find, PRESETS};
use assim_cli::runner::record_error;
use assim_cli::{parse_config, run_experiment, CliError, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "assim", version, about = "Data assimilation experiments from config files or named presets")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one or more config files.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Run configs as parallel child processes, at most this many at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory, replacing experiment.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 4 if an embedded check fails.
        #[arg(long)]
        check: bool,
    },
    /// Run a named preset.
    Preset {
        name: String,
        /// Replace a value, as section.key=value (repeatable).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        check: bool,
        /// Print the preset's config instead of running it.
        #[arg(long)]
        print: bool,
    },
    /// List the presets.
    List,
    /// Parse and validate a config file, printing the resolved config.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

fn run_one(cfg: ExperimentConfig, check: bool) -> Result<(), CliError> {
    let report = run_experiment(&cfg)?;
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    for c in &report.checks {
        println!("check {} {}: {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
    }
    let failed = report.failed_checks();
    if check && !failed.is_empty() {
        let e = CliError::CheckFailed(failed);
        record_error(&cfg.output_dir, &cfg.name, &e);
        return Err(e);
    }
    Ok(())
}

fn run_batch(configs: &[PathBuf], jobs: usize, out: Option<&Path>, check: bool) -> Result<i32, CliError> {
    let mut seen = BTreeSet::new();
    for path in configs {
        let cfg = load(path)?;
        let dir = out.map(Path::to_path_buf).unwrap_or(cfg.output_dir.clone());
        if !seen.insert((dir.clone(), cfg.name.clone())) {
            return Err(CliError::Usage(format!("{}: experiment `{}` would overwrite another run in {}", path.display(), cfg.name, dir.display())));
        }
    }
    let exe = std::env::current_exe().map_err(|e| CliError::io(Path::new("assim"), e))?;
    let mut pending: Vec<&PathBuf> = configs.iter().rev().collect();
    let mut running: Vec<Child> = Vec::new();
    let mut worst = 0;
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < jobs.max(1) {
            let Some(path) = pending.pop() else { break };
            let mut cmd = Command::new(&exe);
            cmd.arg("run").arg(path);
            if let Some(o) = out {
                cmd.arg("--out").arg(o);
            }
            if check {
                cmd.arg("--check");
            }
            running.push(cmd.spawn().map_err(|e| CliError::io(path, e))?);
        }
        let mut child = running.remove(0);
        let status = child.wait().map_err(|e| CliError::io(Path::new("child"), e))?;
        worst = worst.max(status.code().unwrap_or(1));
    }
    Ok(worst)
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Cmd::Run { configs, jobs, out, check } => {
            if configs.len() > 1 || jobs > 1 {
                return run_batch(&configs, jobs, out.as_deref(), check);
            }
            let mut cfg = load(&configs[0])?;
            if let Some(o) = out {
                cfg = cfg.with_output_dir(o);
            }
            run_one(cfg, check).map(|_| 0)
        }
        Cmd::Preset { name, overrides, out, check, print } => {
            let preset = find(&name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`; see `assim list`")))?;
            let mut cfg = preset.config(&overrides)?;
            if print {
                print!("{}", cfg.serialize());
                return Ok(0);
            }
            if let Some(o) = out {
                cfg = cfg.with_output_dir(o);
            }
            run_one(cfg, check).map(|_| 0)
        }
        Cmd::List => {
            for p in PRESETS {
                println!("{:<22} {:<6} {}", p.name, p.program, p.description);
            }
            Ok(0)
        }
        Cmd::Validate { config } => {
            let cfg = load(&config)?;
            print!("{}", cfg.echo());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
