use clap::{Args, Parser, Subcommand};
use hardylab::cli::{load_config, print_line, rebuild_report, run_suite, Mode, RunOptions, EXIT_CONFIG};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hardylab", version, about = "Numerical checks of weighted Hardy-type inequalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one inequality over a test-function suite.
    Verify(RunArgs),
    /// Verify over a grid of one parameter.
    Sweep(RunArgs),
    /// Search for the best constant or the A-B frontier.
    Optimize(RunArgs),
    /// Scan the truncated singular integral as ε → 0.
    Counterexample(RunArgs),
    /// Rebuild summary.csv from instance reports.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relative quadrature tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { code(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let (mode, args) = match cli.command {
        Command::Verify(a) => (Mode::Verify, a),
        Command::Sweep(a) => (Mode::Sweep, a),
        Command::Optimize(a) => (Mode::Optimize, a),
        Command::Counterexample(a) => (Mode::Counterexample, a),
        Command::Report { out } => {
            return match rebuild_report(&out) {
                Ok(s) => {
                    print_line(&s.line());
                    code(s.exit_code)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(e.exit_code())
                }
            }
        }
    };
    let opts = RunOptions { out: args.out, workers: args.workers, seed: args.seed, tol: args.tol };
    let result = load_config(&args.config).and_then(|c| run_suite(&c, Some(mode), &opts));
    match result {
        Ok(s) => {
            print_line(&s.line());
            code(s.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            code(e.exit_code())
        }
    }
}
