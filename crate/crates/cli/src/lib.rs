//! Batch front end: `qavar <mode> --config <path> [--out <path>] [--seed <u64>] [--threads <n>]`.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 invalid configuration,
//! 3 every tau skipped by the dimension cap, 4 numerical failure.

pub mod config;
pub mod run;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::Parser;

pub use config::{validate, FieldError, Mode, RunConfig};
pub use run::{execute, Output};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_ALL_SKIPPED: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "qavar",
    version,
    about = "Quantum Allan variance bounds and clock simulations"
)]
pub struct Args {
    /// lo-avar, bound, optimize, simulate or bound-check; must match the config.
    pub mode: String,
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// CSV destination; overrides the config's `output`. Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Loads, validates and applies command-line overrides.
pub fn load(args: &Args) -> Result<RunConfig, Vec<FieldError>> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        vec![FieldError {
            path: "$".into(),
            message: format!("cannot read {}: {e}", args.config.display()),
        }]
    })?;
    let mut cfg = validate(&text)?;
    match args.mode.parse::<Mode>() {
        Ok(m) if m == cfg.mode => {}
        Ok(m) => {
            return Err(vec![FieldError {
                path: "mode".into(),
                message: format!("command line asks for {m} but the config says {}", cfg.mode),
            }])
        }
        Err(e) => {
            return Err(vec![FieldError {
                path: "mode".into(),
                message: e,
            }])
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.display().to_string());
    }
    Ok(cfg)
}

/// Runs the tool; CSV goes to the configured output or `stdout`, summaries to `stderr`.
pub fn main_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_INVALID;
            }
            // --help and --version
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    if let Some(n) = args.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let cfg = match load(&args) {
        Ok(c) => c,
        Err(errs) => {
            for e in errs {
                let _ = writeln!(stderr, "config error: {e}");
            }
            return EXIT_INVALID;
        }
    };
    let out = match execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "numerical failure: {e}");
            return EXIT_NUMERICAL;
        }
    };
    for line in &out.summary {
        let _ = writeln!(stderr, "{line}");
    }
    let written = match &cfg.output {
        Some(path) => std::fs::write(path, &out.csv),
        None => stdout.write_all(out.csv.as_bytes()),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "cannot write output: {e}");
        return EXIT_IO;
    }
    if out.all_skipped {
        let _ = writeln!(stderr, "every tau was skipped by the dimension cap");
        return EXIT_ALL_SKIPPED;
    }
    EXIT_OK
}
