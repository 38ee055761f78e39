use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use xlingual::pipeline::{Outcome, Overrides, RunConfig, Runner, Stage};
use xlingual::reward::{ReferencePolicy, RewardVariant};
use xlingual::train::LossKind;

/// Implicit cross-lingual rewarding on a synthetic multilingual world.
///
/// Settings come from built-in defaults, then the --config file, then flags.
#[derive(Parser)]
#[command(name = "xlingual", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding every stage's artifacts.
    #[arg(long, global = true, env = "XLINGUAL_RUN_DIR", default_value = "run")]
    run_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// rc, rm or rt.
    #[arg(long, global = true, value_parser = parse_lower::<RewardVariant>)]
    reward: Option<RewardVariant>,
    /// dpo, dpo_nll or kto.
    #[arg(long, global = true, value_parser = parse_lower::<LossKind>)]
    loss: Option<LossKind>,
    /// initial or previous.
    #[arg(long, global = true, value_parser = parse_lower::<ReferencePolicy>)]
    reference: Option<ReferencePolicy>,
    /// Re-run a stage even if it already completed.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the vocabulary, prompts and SFT corpus.
    GenWorld,
    /// Supervised fine-tuning of the initial model.
    TrainSft,
    /// Align the SFT model on oracle-labelled English pairs.
    AlignEn,
    /// Iterative self-rewarding rounds from the English-aligned model.
    Iterate,
    /// Win rates of the SFT model and every iterate against the aligned model.
    Eval,
    /// Reward accuracy of each reward variant on the aligned model's samples.
    RewardAcc,
    /// Finite-difference check of every loss on both architectures.
    Gradcheck,
    /// gen-world through eval.
    All,
    /// Print the resolved configuration.
    ShowConfig,
}

fn parse_lower<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn report(stage: Stage, outcome: &Outcome, secs: f64) {
    let m = outcome.manifest();
    match outcome {
        Outcome::Ran(_) => println!(
            "{stage}: done in {secs:.1}s, {} artifacts, config hash {}",
            m.artifacts.len(),
            &m.config_hash[..12]
        ),
        Outcome::UpToDate(_) => println!(
            "{stage}: already complete with config hash {}; nothing to do (use --force to re-run)",
            &m.config_hash[..12]
        ),
    }
}

fn print_file(runner: &Runner, stage: Stage, name: &str) {
    let p = runner.stage_dir(stage).join(name);
    if let Ok(text) = std::fs::read_to_string(&p) {
        println!("{}:\n{}", p.display(), text.trim_end());
    }
}

fn run(cli: Cli) -> xlingual::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        iterations: cli.iterations,
        reward: cli.reward,
        loss: cli.loss,
        reference: cli.reference,
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    let stages: Vec<Stage> = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Command::GenWorld => vec![Stage::World],
        Command::TrainSft => vec![Stage::Sft],
        Command::AlignEn => vec![Stage::Align],
        Command::Iterate => vec![Stage::Iterate],
        Command::Eval => vec![Stage::Eval],
        Command::RewardAcc => vec![Stage::RewardAcc],
        Command::Gradcheck => vec![Stage::GradCheck],
        Command::All => vec![Stage::World, Stage::Sft, Stage::Align, Stage::Iterate, Stage::Eval],
    };
    let runner = Runner::new(cli.run_dir, cfg, cli.force)?;
    for stage in stages {
        let start = Instant::now();
        let outcome = runner.run(stage)?;
        report(stage, &outcome, start.elapsed().as_secs_f64());
        match stage {
            Stage::Eval => {
                for entry in std::fs::read_dir(runner.stage_dir(stage)).into_iter().flatten().flatten() {
                    let name = entry.file_name().to_string_lossy().into_owned();
                    if name.starts_with("winrate_") {
                        print_file(&runner, stage, &name);
                    }
                }
            }
            Stage::RewardAcc => print_file(&runner, stage, "reward_acc.csv"),
            Stage::GradCheck => print_file(&runner, stage, "report.csv"),
            _ => {}
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.code() as u8)
        }
    }
}
