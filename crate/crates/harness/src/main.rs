use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oar_harness::plot::{plot_schedule, PlotOptions};
use oar_harness::run::RunReport;
use oar_harness::{run, summarize, HarnessError, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "oar", version, about = "Dynamic original-to-augmented ratio scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run agent episodes or a fixed-OAR sweep.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a schedule CSV as an SVG step chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trainer iterations per decision (x axis = step · K).
        #[arg(long, default_value_t = 50)]
        iterations_per_step: usize,
        #[arg(long, default_value_t = 4.0)]
        beta_max: f64,
    },
    /// Compare the last agent episode with the fixed-OAR baselines.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            mode,
            episodes,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(m) = mode {
                cfg.run.mode = m;
            }
            if let Some(e) = episodes {
                cfg.run.episodes = e;
            }
            if let Some(o) = out {
                cfg.run.out = o;
            }
            match run(&cfg)? {
                RunReport::Roar(r) => {
                    for e in &r.episodes {
                        println!("episode {}: final_wer {:.4} total_reward {:.4}", e.episode, e.final_wer, e.total_reward);
                    }
                }
                RunReport::Sweep(s) => {
                    for b in &s.baselines {
                        println!("beta {:.1}: final_wer {:.4}", b.beta, b.final_wer);
                    }
                }
            }
            Ok(())
        }
        Command::Plot {
            input,
            out,
            iterations_per_step,
            beta_max,
        } => {
            let opts = PlotOptions {
                iterations_per_step,
                beta_max,
                ..Default::default()
            };
            plot_schedule(&input, &out, &opts)
        }
        Command::Summarize { dir, json } => {
            let summary = summarize(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            } else {
                print!("{}", summary.to_text());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
