use std::path::PathBuf;
use std::process::ExitCode;

use autowu_cli::{cmd_detect_eval, cmd_plot, cmd_run, cmd_sweep, commands, CliError, FileConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "autowu", version, about = "AutoWU learning-rate warmup experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one config, once per seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds; overrides the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Baseline grid over peak LR and warmup epochs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Detector rates on synthetic loss curves.
    DetectEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SVG figures for a run or sweep directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seeds } => {
            let cfg = FileConfig::load(&config)?;
            let outcomes = cmd_run(&cfg, &out, seeds.as_deref())?;
            print!("{}", commands::describe_runs(&outcomes));
        }
        Command::Sweep { config, out, workers } => {
            let cfg = FileConfig::load(&config)?;
            let res = cmd_sweep(&cfg, &out, workers)?;
            let diverged = res.rows.iter().filter(|r| r.status != "completed").count();
            println!(
                "{} cells ({} not completed), summary in {}",
                res.rows.len(),
                diverged,
                res.dir.join("summary.csv").display()
            );
        }
        Command::DetectEval { config, out } => {
            let cfg = FileConfig::load(&config)?;
            let dir = cmd_detect_eval(&cfg, &out)?;
            println!("wrote {}", dir.display());
        }
        Command::Plot { input, out } => {
            for p in cmd_plot(&input, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
