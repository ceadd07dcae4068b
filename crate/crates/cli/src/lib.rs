//! `stein-bridge` command line: `data`, `train`, `convlab` and `eval`.

pub mod config;
pub mod data;
pub mod eval;
pub mod lab;
pub mod output;
pub mod train;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    CheckFailed(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
            CliError::Io(_) => EXIT_IO,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn csv(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical abort: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<stein_bridge::Error> for CliError {
    fn from(e: stein_bridge::Error) -> Self {
        use stein_bridge::Error as E;
        match e {
            E::NonFinite(_) | E::Diverged(_) => CliError::Numerical(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stein-bridge", version, about = "Stein-bridged generator/estimator training and its convergence lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lambda1=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (or file, for `eval`) override.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a benchmark dataset to CSV.
    Data(Common),
    /// Train a model on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a train state written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the optimization-dynamics checks.
    Convlab(Common),
    /// Score a checkpoint (or the true mixture) on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Score the true mixture instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
    },
}

fn path_value(p: &Path) -> toml::Value {
    toml::Value::String(p.to_string_lossy().into_owned())
}

/// Config table with the dedicated flags folded in.
fn table_for(common: &Common, seed_key: &[&str], out_key: &str) -> Result<toml::Table, CliError> {
    let mut t = config::load_table(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::Config("seed too large".into()))?;
        config::set_path(&mut t, seed_key, toml::Value::Integer(seed))?;
    }
    if let Some(out) = &common.out {
        config::set_path(&mut t, &[out_key], path_value(out))?;
    }
    Ok(t)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Data(common) => {
            let t = table_for(&common, &["seed"], "out_dir")?;
            data::cmd_data(&config::parse(t)?)
        }
        Command::Train { common, resume } => {
            let t = table_for(&common, &["train", "seed"], "out_dir")?;
            train::cmd_train(&config::parse(t)?, resume.as_deref())
        }
        Command::Convlab(common) => {
            let t = table_for(&common, &["seed"], "out_dir")?;
            lab::cmd_convlab(&config::parse(t)?)
        }
        Command::Eval {
            common,
            checkpoint,
            dataset,
            oracle,
        } => {
            let mut t = table_for(&common, &["seed"], "out")?;
            if let Some(c) = checkpoint {
                config::set_path(&mut t, &["checkpoint"], path_value(&c))?;
            }
            if let Some(d) = dataset {
                config::set_path(&mut t, &["dataset"], path_value(&d))?;
            }
            if oracle {
                config::set_path(&mut t, &["oracle"], toml::Value::Boolean(true))?;
            }
            eval::cmd_eval(&config::parse(t)?)
        }
    }
}

/// Parses arguments, runs, reports errors on stderr and maps them to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("stein-bridge: {e}");
            ExitCode::from(e.code())
        }
    }
}
