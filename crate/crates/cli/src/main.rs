use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aligan_core::geodata::csvio::save_survey;
use aligan_core::geodata::synthesize;
use aligan_core::harness::{
    compute_mse, emit_report, read_metrics, run_al_igan_with, train_baseline, DataSource, ExperimentConfig, RunOptions,
};
use aligan_core::model::Checkpoint;
use aligan_core::par::Execution;
use aligan_core::training::write_trace;
use aligan_core::{Error, ErrorKind, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Active learning with an incremental GAN regressor for tunnel geology.
#[derive(Parser)]
#[command(name = "aligan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic survey (records, labels, locations, profile).
    Synth(Common),
    /// Pre-train and train on the initial data only; write a checkpoint.
    Train(Common),
    /// Run the full query loop and emit the report tables.
    Run(Common),
    /// Re-emit the report tables from a metrics.json.
    Report {
        /// metrics.json written by `run`.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed; replaces any seed list in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    repeats: Option<usize>,
    /// RS, EUS or QBC; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    /// Drop the freshness head and the incremental regularizers.
    #[arg(long)]
    gan_gp: bool,
    #[arg(long, value_enum)]
    execution: Option<ExecArg>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.seeds = None;
        }
        if let Some(r) = self.rounds {
            cfg.rounds = r;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if !self.strategy.is_empty() {
            cfg.strategies = self.strategy.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if self.gan_gp {
            cfg.gan_gp = true;
        }
        if let Some(e) = self.execution {
            cfg.execution = match e {
                ExecArg::Sequential => Execution::Sequential,
                ExecArg::Parallel => Execution::Parallel,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn synth(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    if cfg.data.source != DataSource::Synthetic {
        return Err(Error::Config("synth needs data.source = \"synthetic\"".into()));
    }
    let survey = synthesize(&cfg.data.synthetic)?;
    let files = save_survey(&args.out, &survey)?;
    std::fs::write(args.out.join("config.toml"), cfg.to_toml()?)?;
    log::info!(
        "wrote {} records and {} locations to {}",
        survey.records.len(),
        survey.locations.len(),
        files.records.parent().unwrap_or(&args.out).display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct TrainSummary {
    seed: u64,
    train_samples: usize,
    validation_samples: usize,
    test_samples: usize,
    validation_mse: Option<f64>,
    test_mse: f64,
}

fn train(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let (survey, test_fraction, validation_fraction) = cfg.data.load()?;
    let d_y = survey.initial_samples()?.first().map_or(0, |s| s.label.len());
    cfg.validate_against(&survey, d_y)?;
    let seed = cfg.seed_list()[0];
    let base = train_baseline(
        &survey,
        &cfg.model,
        &cfg.effective_train(),
        test_fraction,
        validation_fraction,
        seed,
    )?;
    std::fs::create_dir_all(&args.out)?;
    Checkpoint::new(&base.gen, &base.disc).save(&args.out.join("checkpoint.json"))?;
    write_json(&args.out.join("normalizer.json"), &base.normalizer)?;
    write_trace(&args.out.join("traces/pretrain.csv"), &base.pretrain_trace)?;
    write_trace(&args.out.join("traces/initial.csv"), &base.initial_trace)?;
    std::fs::write(args.out.join("config.toml"), cfg.to_toml()?)?;
    let validation_mse = if base.split.validation.is_empty() {
        None
    } else {
        Some(compute_mse(&base.gen, &base.split.validation)?)
    };
    write_json(
        &args.out.join("train_summary.json"),
        &TrainSummary {
            seed,
            train_samples: base.split.train.len(),
            validation_samples: base.split.validation.len(),
            test_samples: base.split.test.len(),
            validation_mse,
            test_mse: base.mse0,
        },
    )?;
    println!("test MSE {}", base.mse0);
    Ok(())
}

fn run(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let opts = RunOptions {
        traces: Some(args.out.join("traces")),
        checkpoints: Some(args.out.join("checkpoints")),
    };
    let metrics = run_al_igan_with(&cfg, &opts)?;
    emit_report(&metrics, &args.out)?;
    for s in metrics.strategies() {
        let curve = metrics.mean_mse(s);
        println!(
            "{s}: MSE_0 {} MSE_{} {}",
            curve[0],
            curve.len() - 1,
            curve[curve.len() - 1]
        );
    }
    Ok(())
}

fn report(metrics: &Path, out: &Path) -> Result<()> {
    let m = read_metrics(metrics)?;
    emit_report(&m, out)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Run(a) => run(a),
        Command::Report { metrics, out } => report(metrics, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Divergence => 3,
                ErrorKind::Data => 4,
                ErrorKind::Internal => 1,
            })
        }
    }
}
