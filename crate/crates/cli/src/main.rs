use std::path::PathBuf;
use std::process::ExitCode;

use aewin_cli::commands::{self, render_rows, TrainArgs};
use clap::{Parser, Subcommand};

/// AEWin attention reference: verification, cost reports, toy training,
/// and inference.
#[derive(Parser)]
#[command(name = "aewin", version, about)]
struct Cli {
    /// Seed for every stochastic choice (init, data, batch order).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Model spec: preset name (aewin-t, aewin-b, aewin-toy) or TOML file.
    #[arg(long, global = true)]
    spec: Option<String>,

    /// Output path (weight container for train-toy).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Emit comma-separated values instead of aligned text.
    #[arg(long, global = true)]
    csv: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the oracle-equivalence, round-trip, and reachability suites.
    Verify {
        /// Restrict the size grid, e.g. "4x4,8x8".
        #[arg(long)]
        sizes: Option<String>,
        /// Random trials per configuration.
        #[arg(long, default_value_t = 10)]
        trials: u64,
    },
    /// Central-difference gradient verification, per op and whole block.
    Gradcheck,
    /// Itemized FLOPs report for a spec at a square input size.
    Flops {
        spec: String,
        size: usize,
        /// Also print the global-attention cost at the final stage.
        #[arg(long)]
        compare_global: bool,
    },
    /// Itemized parameter-count report for a spec.
    Params { spec: String },
    /// Train the toy model on the synthetic three-class task.
    TrainToy {
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0.03)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
    },
    /// Classify an image container with trained weights.
    Infer { weights: PathBuf, image: PathBuf },
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn run(cli: Cli) -> Result<u8, anyhow::Error> {
    match cli.command {
        Command::Verify { sizes, trials } => {
            let grid = match sizes {
                Some(s) => commands::parse_sizes(&s)?,
                None => vec![(4, 4), (4, 8), (8, 8)],
            };
            let rows = commands::cmd_verify(cli.seed, &grid, trials)?;
            print!("{}", render_rows(&rows, cli.csv));
            let failed: Vec<_> = rows.iter().filter(|r| !r.pass()).collect();
            if let Some(first) = failed.first() {
                eprintln!("verification failed: {}", first.name);
                return Ok(EXIT_CHECK_FAILED);
            }
            println!("all {} checks passed", rows.len());
            Ok(0)
        }
        Command::Gradcheck => {
            let rows = commands::cmd_gradcheck(cli.seed)?;
            print!("{}", render_rows(&rows, cli.csv));
            let failed: Vec<_> = rows.iter().filter(|r| !r.pass()).collect();
            if let Some(first) = failed.first() {
                eprintln!("gradient check failed: {}", first.name);
                return Ok(EXIT_CHECK_FAILED);
            }
            println!("all {} checks passed", rows.len());
            Ok(0)
        }
        Command::Flops {
            spec,
            size,
            compare_global,
        } => {
            print!(
                "{}",
                commands::cmd_flops(&spec, size, cli.csv, compare_global)?
            );
            Ok(0)
        }
        Command::Params { spec } => {
            print!("{}", commands::cmd_params(&spec, cli.csv)?);
            Ok(0)
        }
        Command::TrainToy { steps, lr, batch } => {
            let args = TrainArgs {
                spec: cli.spec,
                seed: cli.seed,
                steps,
                lr,
                batch,
                out: cli.out,
                csv: cli.csv,
            };
            match commands::cmd_train_toy(&args) {
                Ok(text) => {
                    print!("{text}");
                    Ok(0)
                }
                Err(e) if e.to_string().contains("diverged") => {
                    eprintln!("{e}");
                    Ok(EXIT_CHECK_FAILED)
                }
                Err(e) => Err(e),
            }
        }
        Command::Infer { weights, image } => {
            print!(
                "{}",
                commands::cmd_infer(&weights, &image, cli.spec.as_deref())?
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
