use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coldstream_core::error::Result;
use coldstream_core::net::save_checkpoint;
use coldstream_core::ntrf::{run_probe_grid, summarize, NtrfProbe};
use coldstream_core::replay::ReplayBuffer;
use coldstream_cli::{
    config, eval_predictions, execute_run, exit_code, inspect_buffer, sweep_csv,
    sweep_summary_json,
};

#[derive(Parser)]
#[command(name = "coldstream", version, about = "Single-pass streaming learner with replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a streaming run from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics log destination (JSON lines); stdout if omitted.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Save the final model (first task's head) as a checkpoint.
        #[arg(long)]
        save_checkpoint: Option<PathBuf>,
        /// Save the first task's replay buffer snapshot.
        #[arg(long)]
        save_buffer: Option<PathBuf>,
    },
    /// Recompute metrics from a predictions CSV (pred,conf,label).
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = 15)]
        bins: usize,
    },
    /// Run the linearization probe grid and write CSV + summary JSON.
    NtrfSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_summary: PathBuf,
    },
    /// Summarize a saved replay buffer snapshot.
    InspectBuffer {
        #[arg(long)]
        snapshot: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, log, save_checkpoint: ckpt, save_buffer } => {
            let mut run = config::parse_config_file(&config)?;
            if let Some(seed) = seed {
                run.stream.seed = seed;
            }
            let state = match log {
                Some(path) => {
                    let mut f = fs::File::create(path)?;
                    let (_, state) = execute_run(&run, &mut f)?;
                    f.flush()?;
                    state
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    let (_, state) = execute_run(&run, &mut lock)?;
                    state
                }
            };
            if let Some(path) = ckpt {
                let first_task = run.dataset[0].task_id;
                save_checkpoint(&state.model.to_params(first_task)?, &path)?;
            }
            if let Some(path) = save_buffer {
                let first_task = run.dataset[0].task_id;
                if let Some(buffer) = state.buffers.get(&first_task) {
                    buffer.save_snapshot(&path)?;
                }
            }
            Ok(())
        }
        Command::Eval { predictions, bins } => {
            let text = fs::read_to_string(predictions)?;
            println!("{}", eval_predictions(&text, bins)?);
            Ok(())
        }
        Command::NtrfSweep { config, out_csv, out_summary } => {
            let text = fs::read_to_string(config)?;
            let probe: NtrfProbe = toml::from_str(&text)
                .map_err(|e| coldstream_core::error::Error::Config(e.to_string()))?;
            let rows = run_probe_grid(&probe)?;
            let summary = summarize(&rows)?;
            fs::write(out_csv, sweep_csv(&probe, &rows)?)?;
            fs::write(out_summary, sweep_summary_json(&probe, &summary)?)?;
            Ok(())
        }
        Command::InspectBuffer { snapshot } => {
            let buffer = ReplayBuffer::load_snapshot(&snapshot)?;
            println!("{}", serde_json::to_string_pretty(&inspect_buffer(&buffer))?);
            Ok(())
        }
    }
}
