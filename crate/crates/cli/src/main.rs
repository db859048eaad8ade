use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use titan_core::experiment::{render_table, run_all, worker_count, write_outputs, App, ExperimentConfig};
use titan_core::verify::run_checks;
use titan_core::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Inertial block majorization-minimization for sparse NMF and matrix completion.
#[derive(Parser, Debug)]
#[command(name = "titan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sparse NMF runs for every variant and seed of the config.
    RunNmf(RunArgs),
    /// Matrix completion runs for every variant and seed of the config.
    RunMcp(RunArgs),
    /// Multi-seed benchmark with a mean ± std summary.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Run seeds 0..N instead of the config's seed list.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Invariant and oracle self-checks.
    Check,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(if err.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG })
}

fn load(args: &RunArgs, app: Option<App>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(want) = app {
        if cfg.app != want {
            return Err(Error::Config(format!(
                "{} is a {:?} config",
                args.config.display(),
                cfg.app
            )));
        }
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig) -> Result<(), Error> {
    let outcomes = run_all(cfg, worker_count()?)?;
    let rows = write_outputs(cfg, &outcomes)?;
    print!("{}", render_table(cfg, &rows));
    println!("wrote {}", cfg.output_dir.join("summary.csv").display());
    Ok(())
}

fn check() -> ExitCode {
    let results = match run_checks() {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let mut failed = 0;
    for r in &results {
        println!("{} {:<18} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        println!("{failed} of {} checks failed", results.len());
        ExitCode::from(EXIT_CHECK)
    } else {
        println!("all {} checks passed", results.len());
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::RunNmf(args) => load(&args, Some(App::Nmf)).and_then(|c| run(&c)),
        Command::RunMcp(args) => load(&args, Some(App::Mcp)).and_then(|c| run(&c)),
        Command::Bench { run: args, seeds } => load(&args, None).and_then(|mut c| {
            if let Some(n) = seeds {
                if n == 0 {
                    return Err(Error::Config("--seeds must be positive".into()));
                }
                c.seeds = (0..n).collect();
            }
            run(&c)
        }),
        Command::Check => return check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
