//! `lshfed run | correlation | sweep`.
//!
//! Exit codes: 0 on success, 2 for invalid configuration or arguments, 1 for
//! failures while running.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use lshfed::learner::AttackKind;
use lshfed::lshgm::{correlation_study, CorrelationConfig};
use lshfed::protocol::{report, run_experiment, write_outputs, ExperimentConfig};
use lshfed::{Error, Exec, ShapeRegistry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CORRELATION_FILE: &str = "correlation.csv";
pub const CORRELATION_HEADER: &str = "perturbation,euclidean,hamming";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "defense,fraction,targeted,untargeted";

#[derive(Debug, Parser)]
#[command(name = "lshfed", version, about = "LSH-verified federated learning simulator")]
pub struct Cli {
    /// Run on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write metrics.csv, transcript.csv, elections.csv and summary.txt.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        defense: Option<String>,
    },
    /// Hamming vs Euclidean distance over perturbed gradient pairs.
    Correlation {
        #[arg(long, default_value_t = 8)]
        r: usize,
        #[arg(long, default_value_t = 250)]
        pairs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Registered model shape.
        #[arg(long, default_value = "mlp-128-64-10")]
        shape: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Final accuracy per attacker fraction, for both attack types.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "0,0.1,0.3,0.4,0.5")]
        fractions: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        defense: Option<String>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let result = match cli.command {
        Command::Run { config, seed, out: dir, defense } => {
            cmd_run(config.as_deref(), seed, defense.as_deref(), &dir, exec, out)
        }
        Command::Correlation { r, pairs, seed, shape, out: dir } => {
            cmd_correlation(r, pairs, seed, &shape, &dir, exec, out)
        }
        Command::Sweep { config, fractions, seed, out: dir, defense } => {
            cmd_sweep(config.as_deref(), &fractions, seed, defense.as_deref(), &dir, exec, out)
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Reads the config (defaults when `path` is `None`) and applies overrides.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, defense: Option<&str>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = defense {
        cfg.defense = d.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn echo_config(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), Error> {
    writeln!(out, "# effective config")?;
    write!(out, "{}", cfg.to_kv())?;
    writeln!(out)?;
    Ok(())
}

pub fn cmd_run(
    config: Option<&Path>,
    seed: Option<u64>,
    defense: Option<&str>,
    dir: &Path,
    exec: Exec,
    out: &mut dyn Write,
) -> Result<(), Error> {
    let cfg = load_config(config, seed, defense)?;
    echo_config(&cfg, out)?;
    let report = run_experiment(&cfg, exec)?;
    write_outputs(&report, dir)?;
    write!(out, "{}", report::summary_text(&report.summary))?;
    writeln!(out, "outputs written to {}", dir.display())?;
    Ok(())
}

pub fn cmd_correlation(
    r: usize,
    pairs: usize,
    seed: u64,
    shape: &str,
    dir: &Path,
    exec: Exec,
    out: &mut dyn Write,
) -> Result<(), Error> {
    if pairs < 30 {
        return Err(Error::InvalidArgument(format!("--pairs must be at least 30 (got {pairs})")));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("--r must be at least 1".into()));
    }
    let registry = ShapeRegistry::with_builtins();
    let shape = registry
        .by_name(shape)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown shape '{shape}'")))?
        .clone();
    let cfg = CorrelationConfig {
        shape,
        r,
        pairs,
        seed,
        ..CorrelationConfig::default()
    };
    let report = correlation_study(&cfg, exec)?;
    let mut csv = String::from(CORRELATION_HEADER);
    csv.push('\n');
    for p in &report.points {
        let _ = writeln!(csv, "{:.9},{:.9},{}", p.perturbation, p.euclidean, p.hamming);
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CORRELATION_FILE), csv)?;
    writeln!(out, "shape = {}", cfg.shape.name)?;
    writeln!(out, "r = {r}")?;
    writeln!(out, "pairs = {pairs}")?;
    writeln!(out, "seed = {seed}")?;
    writeln!(out, "pearson = {:.6}", report.pearson)?;
    Ok(())
}

pub fn parse_fractions(s: &str) -> Result<Vec<f64>, Error> {
    let fractions = s
        .split(',')
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .map(|f| {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("fraction '{f}' is not a number")))?;
            if !(0.0..=0.5).contains(&v) {
                return Err(Error::InvalidArgument(format!("fraction {v} outside [0, 0.5]")));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("--fractions is empty".into()));
    }
    Ok(fractions)
}

/// One row per fraction; every cell runs on the same seed so rows are paired.
pub fn cmd_sweep(
    config: Option<&Path>,
    fractions: &str,
    seed: Option<u64>,
    defense: Option<&str>,
    dir: &Path,
    exec: Exec,
    out: &mut dyn Write,
) -> Result<(), Error> {
    let fractions = parse_fractions(fractions)?;
    let base = load_config(config, seed, defense)?;
    echo_config(&base, out)?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    writeln!(out, "{SWEEP_HEADER}")?;
    for &f in &fractions {
        let mut row = vec![base.defense.to_string(), format!("{f}")];
        for kind in [AttackKind::LabelFlip, AttackKind::GaussianNoise] {
            let cfg = ExperimentConfig {
                attack: kind,
                malicious_fraction: f,
                collusion: kind == AttackKind::LabelFlip,
                ..base.clone()
            };
            let report = run_experiment(&cfg, exec)?;
            row.push(format!("{:.6}", report.summary.final_accuracy));
        }
        let line = row.join(",");
        writeln!(out, "{line}")?;
        csv.push_str(&line);
        csv.push('\n');
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(SWEEP_FILE), csv)?;
    Ok(())
}
