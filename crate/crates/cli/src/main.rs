use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use graphflow::linalg::RANK_THRESHOLD;
use graphflow::structural::DEFAULT_TRIALS;
use graphflow_cli::run::{run, Command, Exit, RunConfig, OUT_ENV};
use num_complex::Complex64;

#[derive(Parser)]
#[command(name = "graphflow", version, about = "Transport flows on directed metric graphs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the solver and write boundary traces and norms.
    Simulate {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Approximate controllability from frequency samples.
    Analyze {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Structural rank, form (t) and structural controllability.
    Structural {
        /// A graph spec or a pattern file.
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Air-traffic flow model: abscissa, Kalman ranks and structural check.
    Atfm {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the bundled acceptance suite.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    /// Simulation horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Comma-separated sample points such as `1.5,2+1i`.
    #[arg(long, value_delimiter = ',', value_parser = parse_complex)]
    lambda: Vec<Complex64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, default_value_t = RANK_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// Order `t` for the form test.
    #[arg(long)]
    t: Option<usize>,
    /// Input pattern `K` when the input is a pattern file.
    #[arg(long = "input")]
    input_pattern: Option<PathBuf>,
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Criterion id, name or keyword.
    #[arg(long)]
    filter: Option<String>,
    /// Fixture directory used instead of the bundled fixtures.
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    Complex64::from_str(s.trim()).map_err(|e| format!("`{s}`: {e}"))
}

fn config(command: Command, input: Option<PathBuf>, c: Common) -> RunConfig {
    let mut cfg = RunConfig::new(command);
    cfg.input = input;
    cfg.input_pattern = c.input_pattern;
    cfg.out = c.out;
    cfg.dt = c.dt;
    cfg.nx = c.nx;
    cfg.horizon = c.horizon;
    cfg.lambda = c.lambda;
    cfg.depth = c.depth;
    cfg.threshold = c.threshold;
    cfg.seed = c.seed;
    cfg.trials = c.trials;
    cfg.t = c.t;
    cfg.filter = c.filter;
    cfg.fixtures = c.fixtures;
    cfg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { Exit::InputError.code() } else { 0 };
            return ExitCode::from(code as u8);
        }
    };
    let cfg = match cli.command {
        Cmd::Simulate { input, common } => config(Command::Simulate, Some(input), common),
        Cmd::Analyze { input, common } => config(Command::Analyze, Some(input), common),
        Cmd::Structural { input, common } => config(Command::Structural, Some(input), common),
        Cmd::Atfm { input, common } => config(Command::Atfm, Some(input), common),
        Cmd::Selftest { common } => config(Command::Selftest, None, common),
    };
    match run(&cfg) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            ExitCode::from(outcome.exit.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit().code() as u8)
        }
    }
}
