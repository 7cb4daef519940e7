//! `deepcontrast`: audit, preprocess, train, fine-tune, predict, evaluate,
//! explain and synthesize CT contrast data.

mod commands;
mod provenance;
mod scan;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use deepcontrast_core::RunConfig;

/// Exit status for malformed invocations.
pub const EXIT_USAGE: u8 = 1;
/// Exit status for unreadable or inconsistent data.
pub const EXIT_DATA: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// A data error naming the offending file or scan.
    pub fn data(what: impl DisplayPath, err: impl Display) -> Self {
        let (what, err) = (what.show(), err.to_string());
        if err.starts_with(&what) {
            CliError::Data(err)
        } else {
            CliError::Data(format!("{what}: {err}"))
        }
    }
}

pub trait DisplayPath {
    fn show(&self) -> String;
}

impl DisplayPath for &Path {
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl DisplayPath for &PathBuf {
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl DisplayPath for String {
    fn show(&self) -> String {
        self.clone()
    }
}

impl DisplayPath for &str {
    fn show(&self) -> String {
        self.to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "deepcontrast", version, about = "IV contrast detection for CT scans")]
struct Cli {
    /// Worker threads (falls back to DEEPCONTRAST_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` config file with dotted keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.lr=0.0001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SiteArg {
    Hn,
    Chest,
}

impl From<SiteArg> for deepcontrast_core::Site {
    fn from(s: SiteArg) -> Self {
        match s {
            SiteArg::Hn => deepcontrast_core::Site::Hn,
            SiteArg::Chest => deepcontrast_core::Site::Chest,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Image,
    Patient,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare bolus-tag labels with expert labels.
    Audit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample, crop and window raw scans into slice stacks.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        site: SiteArg,
    },
    /// Train the CNN on a preprocessed data directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain a model on a new data directory with a low learning rate.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Slice-level probabilities for one scan or a preprocessed directory.
    #[command(group(ArgGroup::new("source").required(true).args(["scan", "data"])))]
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scan: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC/PR metrics with bootstrap confidence intervals.
    Evaluate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        level: LevelArg,
        /// Bootstrap iterations (defaults to eval.bootstrap).
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grad-CAM overlay for one slice.
    Gradcam {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        slice: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the raw last-conv map as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Synthetic CT phantoms with a manifest.
    Phantom {
        #[arg(long)]
        n: usize,
        #[arg(long = "contrast-frac")]
        contrast_frac: f64,
        #[arg(long, value_enum, default_value = "hn")]
        site: SiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(path, e))?;
        cfg.apply_text(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    cfg.apply_overrides(&cli.overrides).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DEEPCONTRAST_THREADS") {
            Ok(v) => Some(
                v.trim().parse().map_err(|_| CliError::Usage(format!("DEEPCONTRAST_THREADS=`{v}` is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    let cfg = load_config(&cli)?;
    use commands as c;
    match cli.command {
        Command::Audit { manifest, out } => c::audit(&cfg, &manifest, &out),
        Command::Preprocess { input, manifest, out, site } => c::preprocess(&cfg, &input, &manifest, &out, site.into()),
        Command::Train { data, out } => c::train(&cfg, cli.config.as_deref(), &data, &out),
        Command::Finetune { model, data, out } => c::finetune(&cfg, &model, &data, &out),
        Command::Predict { model, scan, data, out } => c::predict(&cfg, &model, scan.as_deref(), data.as_deref(), &out),
        Command::Evaluate { preds, manifest, level, bootstrap, out } => {
            c::evaluate(&cfg, &preds, &manifest, level, bootstrap, &out)
        }
        Command::Gradcam { model, scan, slice, out, csv } => {
            c::gradcam(&cfg, &model, &scan, slice, &out, csv.as_deref())
        }
        Command::Phantom { n, contrast_frac, site, seed, out } => {
            c::phantom(&cfg, n, contrast_frac, site.into(), seed, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
