//! The `vidon` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::dataset::{Problem, Split};
use crate::error::{Error, Result};
use crate::pipeline;
use crate::sensors::SensorKind;
use crate::train::Checkpoint;
use crate::verify::{run_suite, Suite};

#[derive(Debug, Parser)]
#[command(name = "vidon", version, about = "Operator learning from variable sensor sets")]
pub struct Cli {
    /// Worker threads (default: VIDON_THREADS, then all logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an experiment config template.
    Config {
        #[arg(long, value_parser = parse_problem)]
        problem: Problem,
        #[arg(long, default_value = "regular", value_parser = parse_kind)]
        sensors: SensorKind,
        /// Small Allen-Cahn setting instead of full-size defaults.
        #[arg(long)]
        desk: bool,
        /// Output directory recorded in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate train, validation and test splits.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint with optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Progress line interval in epochs (0 = quiet).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Relative L2 error of a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Re-observe the stored functions through another sensor layout.
        #[arg(long, value_parser = parse_kind)]
        sensors: Option<SensorKind>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Directory for the metrics JSON (default: the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle checks.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SuiteArg {
    Autodiff,
    Spectral,
    Pde,
    Invariance,
    All,
}

fn parse_kind(s: &str) -> std::result::Result<SensorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_problem(s: &str) -> std::result::Result<Problem, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown problem '{s}' (darcy, allen-cahn, navier-stokes)"))
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Dimension { .. } => 2,
        Error::Io { .. } | Error::Format(_) | Error::Corruption { .. } | Error::Sample { .. } => 3,
        Error::NonFinite { .. }
        | Error::Solver { .. }
        | Error::Stability { .. }
        | Error::Domain(_)
        | Error::Tape(_)
        | Error::Aliasing { .. } => 4,
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("VIDON_THREADS") {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("VIDON_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Error::Config(format!("cannot read config: {e}")),
        other => other,
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    eprintln!("resolved config:\n{}", cfg.to_json()?);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = threads(cli.threads)? {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Config {
            problem,
            sensors,
            desk,
            out,
        } => {
            let mut cfg = if desk {
                if problem != Problem::AllenCahn {
                    return Err(Error::Config("--desk is only available for allen-cahn".into()));
                }
                ExperimentConfig::desk_allen_cahn(sensors)
            } else {
                ExperimentConfig::full_size(problem, sensors)
            };
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            if let Some(o) = out {
                cfg.out = o;
            }
            println!("{}", cfg.to_json()?);
        }
        Command::GenData { config, out } => {
            let cfg = load_config(&config, cli.seed, out)?;
            let s = pipeline::generate(&cfg)?;
            println!(
                "wrote {} (train {}, val {}, test {}); sensors per sample {}..={} (allowed {}..={}); {:.1}s",
                cfg.data_dir().display(),
                s.counts[0],
                s.counts[1],
                s.counts[2],
                s.sensor_counts.0,
                s.sensor_counts.1,
                s.allowed_counts.0,
                s.allowed_counts.1,
                s.seconds
            );
        }
        Command::Train {
            config,
            out,
            resume,
            log_every,
        } => {
            let cfg = load_config(&config, cli.seed, out)?;
            let res = pipeline::train(&cfg, resume.as_deref(), log_every)?;
            println!(
                "best epoch {} with validation relative L2 {:.6e}; checkpoints in {}",
                res.best.epoch,
                res.best.val_rel_l2,
                cfg.run_dir().display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            sensors,
            split,
            out,
        } => {
            let split = Split::from(split);
            eprintln!(
                "checkpoint {}  data {}  split {}  sensors {}",
                checkpoint.display(),
                data.display(),
                split.name(),
                sensors.map_or("as stored", SensorKind::name)
            );
            let ck = Checkpoint::load(&checkpoint)?;
            let (summary, _) = pipeline::evaluate_checkpoint(&ck, &data, split, sensors, cli.seed)?;
            let json = serde_json::to_string_pretty(&summary)?;
            let dir = out.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let name = match sensors {
                Some(k) => format!("eval_{}_{}.json", split.name(), k.name()),
                None => format!("eval_{}.json", split.name()),
            };
            let path = dir.join(name);
            fs::write(&path, &json).map_err(|e| Error::io(&path, e))?;
            eprintln!(
                "{:<6} {:>5}  mean {:.4e}  std {:.4e}",
                split.name(),
                summary.n,
                summary.mean_rel_l2,
                summary.std_rel_l2
            );
            println!("{json}");
        }
        Command::Verify { suite } => {
            let suites: Vec<Suite> = match suite {
                SuiteArg::Autodiff => vec![Suite::Autodiff],
                SuiteArg::Spectral => vec![Suite::Spectral],
                SuiteArg::Pde => vec![Suite::Pde],
                SuiteArg::Invariance => vec![Suite::Invariance],
                SuiteArg::All => Suite::ALL.to_vec(),
            };
            let mut ok = true;
            for s in suites {
                for c in run_suite(s, cli.seed.unwrap_or(0))? {
                    ok &= c.pass;
                    println!(
                        "[{}] {}: {} = {:.6e} ({})",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.suite,
                        c.name,
                        c.measured,
                        c.rule
                    );
                }
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
