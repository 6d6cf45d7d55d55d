use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use talklora::cli::{
    cmd_analyze, cmd_ckpt_inspect, cmd_ckpt_roundtrip, cmd_gradcheck, cmd_params, cmd_train,
    gradcheck_outcome, AnalyzeOptions, CliError, GradcheckConfig, RunConfig, Subreport,
};
use talklora::Error;

#[derive(Parser)]
#[command(name = "talklora", version, about = "LoRA / MoELoRA / TalkLoRA numerical lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trainable-parameter budget of a config on its geometry.
    Params {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the synthetic cluster task.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one analysis on a checkpoint.
    Analyze {
        checkpoint: PathBuf,
        /// stability | nonexpansive | routing | heatmap | degeneracy
        subreport: String,
        /// Report directory (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0.1)]
        delta_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analytic vs finite-difference gradients on small random stacks.
    Gradcheck {
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Checkpoint utilities.
    Ckpt {
        #[command(subcommand)]
        action: CkptAction,
    },
}

#[derive(Subcommand)]
enum CkptAction {
    /// Decode, re-encode and compare bit for bit.
    Roundtrip {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate every payload and print the header.
    Inspect { file: PathBuf },
}

fn print_json<T: Serialize>(v: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v).map_err(Error::from)?);
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<(RunConfig, PathBuf), CliError> {
    let (mut cfg, dir) = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, dir))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Params { config, seed } => {
            let (cfg, dir) = load_config(&config, seed)?;
            print_json(&cmd_params(&cfg, Some(&dir))?)
        }
        Command::Train { config, seed } => {
            let (cfg, _) = load_config(&config, seed)?;
            print_json(&cmd_train(&cfg)?)
        }
        Command::Analyze {
            checkpoint,
            subreport,
            out,
            trials,
            delta_scale,
            seed,
        } => {
            let sub: Subreport = subreport.parse()?;
            let out = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_default()
            });
            let opts = AnalyzeOptions {
                trials,
                delta_scale,
                seed,
            };
            print_json(&cmd_analyze(&checkpoint, sub, &out, &opts)?.report)
        }
        Command::Gradcheck { config, seed } => {
            let mut gc = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    serde_json::from_str::<GradcheckConfig>(&text).map_err(Error::from)?
                }
                None => GradcheckConfig::default(),
            };
            if let Some(s) = seed {
                gc.seed = s;
            }
            let summary = cmd_gradcheck(&gc)?;
            for c in &summary.cases {
                println!(
                    "{:<9} share_b={:<5} talking={:<5} max_rel_err={:.3e} {}",
                    c.method.to_string(),
                    c.share_b,
                    c.talking,
                    c.report.max_relative_error,
                    if c.report.passed { "ok" } else { "FAIL" }
                );
            }
            println!("max relative error {:.3e} (tolerance {:e})", summary.max_relative_error, summary.tolerance);
            gradcheck_outcome(&summary)
        }
        Command::Ckpt { action } => match action {
            CkptAction::Roundtrip { file, out } => {
                let report = cmd_ckpt_roundtrip(&file, out.as_deref())?;
                print_json(&report)?;
                if report.bit_identical {
                    Ok(())
                } else {
                    Err(CliError::RoundtripMismatch)
                }
            }
            CkptAction::Inspect { file } => print_json(&cmd_ckpt_inspect(&file)?),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
