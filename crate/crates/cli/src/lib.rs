//! `prevmix`: optimal mixes of prevalent and incident subjects from the
//! command line.
//!
//! Every command assembles a [`Report`]: a text summary printed to stdout
//! and a set of named files written under `--out` when one is given.

mod commands;
mod presets;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use prevmix_core::{ConfigDocument, Error};

pub use commands::{optimize_estimation, optimize_inference, validate_config};
pub use presets::reproduce;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "prevmix",
    version,
    about = "Optimal prevalent/incident cohort mixes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the weighted variance of the survival estimate over the mix.
    OptimizeEstimation(RunArgs),
    /// Choose all-incident or all-prevalent for the Cox score test.
    OptimizeInference(RunArgs),
    /// Monte Carlo checks against theory, from a config or a built-in preset.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the config. Defaults to 42.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Replications; overrides the config.
    #[arg(long, value_name = "N")]
    pub reps: Option<u64>,
    /// Worker threads for the simulator (default: all cores).
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Directory for summary.txt and the CSV outputs.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_name = "NAME")]
    pub reproduce: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    #[value(name = "table1")]
    Table1,
    #[value(name = "fig2")]
    Fig2,
    #[value(name = "fig3")]
    Fig3,
    #[value(name = "figS1")]
    FigS1,
    #[value(name = "figS2")]
    FigS2,
    #[value(name = "waitlist")]
    Waitlist,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::FigS1 => "figS1",
            Preset::FigS2 => "figS2",
            Preset::Waitlist => "waitlist",
        }
    }
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
    Io(String),
}

impl Failure {
    /// 1 usage or parse, 2 infeasible design, 3 internal numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::Config(_) | Error::Data(_)) => 1,
            Failure::Core(Error::Infeasible(_) | Error::DegenerateDesign(_)) => 2,
            Failure::Core(_) | Failure::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Text summary plus named output files.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Report {
    pub summary: String,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Report {
    pub fn new(header: String) -> Self {
        Report {
            summary: header,
            files: Vec::new(),
        }
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        self.summary.push_str(s.as_ref());
        self.summary.push('\n');
    }

    pub fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn file_bytes(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    /// Writes `summary.txt` and every file under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), Failure> {
        let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("summary.txt"), &self.summary).map_err(io)?;
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes).map_err(io)?;
        }
        Ok(())
    }
}

/// Header line shared by every report.
pub(crate) fn header(command: &str, detail: &str, seed: u64) -> String {
    if detail.is_empty() {
        format!("# prevmix {command} seed={seed}\n")
    } else {
        format!("# prevmix {command} {detail} seed={seed}\n")
    }
}

fn load_config(args: &RunArgs) -> Result<ConfigDocument, Failure> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config PATH is required".into()))?;
    Ok(ConfigDocument::load(path)?)
}

fn output_dir(args: &RunArgs, doc: Option<&ConfigDocument>) -> Option<PathBuf> {
    args.out.clone().or_else(|| {
        doc.and_then(|d| d.output.as_ref())
            .and_then(|o| o.dir.as_ref())
            .map(PathBuf::from)
    })
}

fn configure_threads(threads: Option<usize>) -> Result<(), Failure> {
    match threads {
        None => Ok(()),
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure {n} threads: {e}"))),
    }
}

/// Runs one command: builds the report, prints the summary, writes files.
pub fn execute(cli: Cli) -> Result<Report, Failure> {
    let run = match &cli.command {
        Command::OptimizeEstimation(a) | Command::OptimizeInference(a) => a,
        Command::Validate(v) => &v.run,
    };
    configure_threads(run.threads)?;
    let (report, out) = match &cli.command {
        Command::OptimizeEstimation(args) => {
            let doc = load_config(args)?;
            let seed = args.seed.unwrap_or(DEFAULT_SEED);
            (
                optimize_estimation(&doc, seed)?,
                output_dir(args, Some(&doc)),
            )
        }
        Command::OptimizeInference(args) => {
            let doc = load_config(args)?;
            let seed = args.seed.unwrap_or(DEFAULT_SEED);
            (
                optimize_inference(&doc, seed)?,
                output_dir(args, Some(&doc)),
            )
        }
        Command::Validate(v) => match (v.reproduce, &v.run.config) {
            (Some(_), Some(_)) => {
                return Err(Failure::Usage(
                    "use either --reproduce or --config, not both".into(),
                ))
            }
            (Some(preset), None) => {
                let seed = v.run.seed.unwrap_or(DEFAULT_SEED);
                (
                    reproduce(preset, v.run.reps, seed)?,
                    output_dir(&v.run, None),
                )
            }
            (None, _) => {
                let doc = load_config(&v.run)?;
                (
                    validate_config(&doc, v.run.seed, v.run.reps)?,
                    output_dir(&v.run, Some(&doc)),
                )
            }
        },
    };
    print!("{}", report.summary);
    if let Some(dir) = out {
        report.write_to(&dir)?;
    }
    Ok(report)
}
