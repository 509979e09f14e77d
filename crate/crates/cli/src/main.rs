//! `studentsim`: run simulated novice programmers and analyze their traces.
//!
//! Exit status is 0 on success, 2 on a configuration or input error and 3
//! when a chat backend failed (including sessions cut short by one).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use studentsim_core::agent::TutorKind;
use studentsim_core::config::{BackendKind, Overrides};
use studentsim_core::trace::BlankLineStyle;

#[derive(Parser, Debug)]
#[command(
    name = "studentsim",
    version,
    about = "Simulate novice programmers and measure how human-like the traces are",
    after_help = "Environment:\n  STUDENTSIM_API_KEY  bearer token for the http backend (the variable name can be changed in the session's [http] table)\n  RUST_LOG            log filter, e.g. RUST_LOG=studentsim_core=debug"
)]
struct Cli {
    /// Print progress logs to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct SimFlags {
    /// Seed; for batches this replaces the manifest's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Chat backend.
    #[arg(long, value_name = "mock|http")]
    backend: Option<BackendKind>,
    /// Tutor used on assistance requests.
    #[arg(long, value_name = "none|simple|zpd")]
    tutor: Option<TutorKind>,
    /// Step cap per session.
    #[arg(long)]
    max_steps: Option<u32>,
}

impl SimFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            backend: self.backend,
            tutor: self.tutor,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one session and write its trace.
    Run {
        /// Session file.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        /// Output directory; the trace is written as <name>.jsonl.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every session of a manifest.
    Batch {
        /// Manifest file.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        /// Output directory; defaults to the manifest's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Maximum sessions run at once.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Compute fidelity metrics over a directory of traces.
    Eval {
        /// Directory of .jsonl traces, or a single trace.
        #[arg(long)]
        traces: PathBuf,
        /// Reference distribution file.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Keyword lists replacing the built-in ones.
        #[arg(long)]
        keywords: Option<PathBuf>,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit durations and transitions from a CSV event log.
    Fit {
        /// CSV with columns session,t,action,metacog.
        #[arg(long)]
        events: PathBuf,
        /// Merge threshold in seconds.
        #[arg(long, default_value_t = studentsim_core::metrics::DEFAULT_LAMBDA_SECS)]
        lambda: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Densify a trace's code history into typing-like snapshots.
    Breakdown {
        #[arg(long)]
        trace: PathBuf,
        /// Probability of keeping each intermediate snapshot.
        #[arg(long, default_value_t = 0.3)]
        level: f64,
        /// Replay edited lines word by word.
        #[arg(long)]
        words: bool,
        #[arg(long, default_value = "always", value_name = "always|never|probabilistic")]
        blank_lines: BlankLineStyle,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON array of snapshots; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Signal-detection analysis and equivalence test from response counts.
    Sdt {
        #[arg(long)]
        hits: u64,
        #[arg(long)]
        misses: u64,
        /// False alarms.
        #[arg(long)]
        fa: u64,
        /// Correct rejections.
        #[arg(long)]
        cr: u64,
        /// Equivalence margin on d'.
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
        /// Standard error of d'; estimated from the counts when absent.
        #[arg(long)]
        se: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assemble the judge prompt for a trace, or parse a judge reply.
    JudgePrompt {
        #[arg(long, required_unless_present = "reply")]
        trace: Option<PathBuf>,
        #[arg(long)]
        keywords: Option<PathBuf>,
        /// Directory of prompt blocks replacing the built-in ones.
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Parse this judge reply and print the verdict instead.
        #[arg(long)]
        reply: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the built-in behavior specs as editable files.
    #[command(hide = true)]
    Defaults {
        #[arg(long, default_value = "configs/behavior")]
        out: PathBuf,
    },
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }

    pub fn backend(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_BACKEND, error: error.into() }
    }

    pub fn io(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: error.into() }
    }
}

/// The error and its causes joined by `: `, skipping causes whose text the
/// previous message already includes.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn init_logging(verbose: bool) {
    use tracing_subscriber::EnvFilter;
    let default = if verbose { "info" } else { "warn" };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .without_time()
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Run { config, sim, out } => commands::run(&config, &sim.overrides(), &out),
        Command::Batch { config, sim, out, parallel } => {
            commands::batch(&config, &sim.overrides(), out.as_deref(), parallel)
        }
        Command::Eval { traces, reference, keywords, out } => {
            commands::eval(&traces, reference.as_deref(), keywords.as_deref(), out.as_deref())
        }
        Command::Fit { events, lambda, out } => commands::fit(&events, lambda, out.as_deref()),
        Command::Breakdown { trace, level, words, blank_lines, seed, out } => {
            commands::breakdown(&trace, level, words, blank_lines, seed, out.as_deref())
        }
        Command::Sdt { hits, misses, fa, cr, margin, se, out } => {
            commands::sdt(hits, misses, fa, cr, margin, se, out.as_deref())
        }
        Command::JudgePrompt { trace, keywords, prompts, reply, out } => commands::judge_prompt(
            trace.as_deref(),
            keywords.as_deref(),
            prompts.as_deref(),
            reply.as_deref(),
            out.as_deref(),
        ),
        Command::Defaults { out } => commands::defaults(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", render_chain(&f.error));
            ExitCode::from(f.code)
        }
    }
}
