//! Command-line front end. [`run`] executes one invocation in-process and
//! returns its exit code and output, so tests can drive the CLI without
//! spawning a process.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error.

use std::ffi::OsString;

use clap::Parser;

mod args;
mod bench;
mod config;
mod cost;
mod output;
mod single;
mod train;
mod verify;

pub use args::{Algorithm, Format};
pub use config::Settings;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file, grid string or incompatible dimensions.
    Config(String),
    /// A run that could not complete.
    Failure(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<tesseract_core::Error> for CliError {
    fn from(e: tesseract_core::Error) -> Self {
        use tesseract_core::Error as E;
        match e.root_cause() {
            E::InvalidGrid(_)
            | E::GridParse { .. }
            | E::Divisibility { .. }
            | E::ShapeMismatch { .. }
            | E::Format(_)
            | E::Io(_)
            | E::InvalidArgument(_)
            | E::NonFinite { .. } => CliError::Config(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

/// A finished command: the formatted report and whether it passed.
#[derive(Debug)]
pub struct Report {
    pub body: String,
    pub passed: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => Outcome {
                    code: EXIT_OK,
                    stdout: text,
                    stderr: String::new(),
                },
                _ => Outcome {
                    code: EXIT_CONFIG,
                    stdout: String::new(),
                    stderr: text,
                },
            };
        }
    };
    match execute(cli) {
        Ok((report, out)) => {
            let mut stderr = report.notes.join("\n");
            if !stderr.is_empty() {
                stderr.push('\n');
            }
            let stdout = match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, &report.body) {
                        return Outcome {
                            code: EXIT_CONFIG,
                            stdout: String::new(),
                            stderr: format!("configuration error: cannot write {}: {e}\n", path.display()),
                        };
                    }
                    String::new()
                }
                None => report.body,
            };
            Outcome {
                code: if report.passed { EXIT_OK } else { EXIT_FAILURE },
                stdout,
                stderr,
            }
        }
        Err(e) => Outcome {
            code: match e {
                CliError::Config(_) => EXIT_CONFIG,
                CliError::Failure(_) => EXIT_FAILURE,
            },
            stdout: String::new(),
            stderr: format!("{e}\n"),
        },
    }
}

fn execute(cli: args::Cli) -> Result<(Report, Option<std::path::PathBuf>), CliError> {
    let settings = config::resolve(&cli.common)?;
    let out = settings.out.clone();
    let report = match cli.command {
        args::Command::Verify {
            layer_trials,
            inject_fault,
        } => verify::run(&settings, layer_trials, inject_fault)?,
        args::Command::Bench => bench::run(&settings)?,
        args::Command::Cost { procs, n } => cost::run(&settings, procs, n)?,
        args::Command::TrainToy { steps, lr, layers } => train::run(&settings, steps, lr, layers)?,
        args::Command::Run {
            algo,
            variant,
            a_file,
            b_file,
            save,
        } => single::run(&settings, algo, &variant, a_file, b_file, save)?,
    };
    Ok((report, out))
}
