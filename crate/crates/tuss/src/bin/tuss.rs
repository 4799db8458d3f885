use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tuss::checkpoint::{load_model, Checkpoint, Checkpointable, ModelKind};
use tuss::config::RunConfig;
use tuss::corpus::{load_manifest, FileProvider};
use tuss::eval::{evaluate, load_eval_manifest, separate_file, separate_file_baseline, EvalOptions};
use tuss::presets::{parse_prompt_list, TaskPreset};
use tuss::trainer::{self, DataSource, RunOptions, StageOutcome};
use tuss::{Error, Result};
use tuss_core::metrics::MetricConvention;
use tuss_core::{Baseline, PromptSet, Tuss};

/// Prompt-driven audio source separation.
#[derive(Debug, Parser)]
#[command(name = "tuss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a TOML run config, fine-tune, or resume a run.
    Train(TrainArgs),
    /// Separate a WAV file into one output per prompt.
    Separate(SeparateArgs),
    /// Score a model (or the references themselves) on an evaluation manifest.
    Evaluate(EvaluateArgs),
    /// List the task presets.
    Presets,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// `section.key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs of the stage.
    #[arg(long)]
    stop_after_epoch: Option<usize>,
    /// Print log records as they are written.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct PromptArgs {
    /// Comma-separated categories, e.g. `speech,sfx-mix`.
    #[arg(long, conflicts_with = "preset")]
    prompts: Option<String>,
    /// One of se, ss, noisy-ss, uss, mss, cass.
    #[arg(long)]
    preset: Option<String>,
    /// Count for ss, noisy-ss and uss.
    #[arg(long)]
    n: Option<usize>,
    /// Adds the sfx-mix prompt of noisy-ss.
    #[arg(long)]
    with_noise: bool,
}

impl PromptArgs {
    fn resolve(&self) -> Result<Option<PromptSet>> {
        match (&self.prompts, &self.preset) {
            (Some(p), _) => parse_prompt_list(p).map(Some),
            (None, Some(name)) => name.parse::<TaskPreset>()?.expand(self.n, self.with_noise).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Debug, Args)]
struct SeparateArgs {
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    prompts: PromptArgs,
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// JSONL evaluation manifest.
    manifest: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "prompts")]
    preset: Option<String>,
    /// Rejected: evaluation prompts come from the references or a preset.
    #[arg(long, hide = true)]
    prompts: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    with_noise: bool,
    /// `si-snr` (default) or `snr`.
    #[arg(long, default_value = "si-snr")]
    metric: String,
    /// One pass per category, prompting only that category.
    #[arg(long)]
    single_category: bool,
    /// Score the references against themselves.
    #[arg(long)]
    oracle: bool,
    /// Write the JSONL report here as well.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

fn print_outcome<M>(what: &str, out: &StageOutcome<M>) {
    println!(
        "{what}: {} epochs done, global step {}, lr {:.3e}, decays {}",
        out.schedule.epoch, out.schedule.global_step, out.schedule.current_lr, out.schedule.decay_applied_count
    );
    if let Some(v) = out.validation_history.last() {
        println!("last validation loss {v:.4}");
    }
    if let Some(b) = &out.best {
        println!("best checkpoint {}", b.display());
    }
}

fn train_kind<M: Checkpointable>(args: &TrainArgs, cfg: &RunConfig, data: &DataSource<'_, FileProvider>, opts: &RunOptions) -> Result<()> {
    let plans = trainer::prepare_validation(data, &cfg.train, cfg.data.validation_recipes.as_deref(), &opts.out_dir)?;
    if let Some(ck) = &args.resume {
        let out = trainer::resume::<M, _>(ck, data, &plans, opts)?;
        print_outcome("resumed", &out);
        return Ok(());
    }
    let model_cfg = cfg.model.resolve()?;
    if let Some(ft) = &cfg.fine_tune {
        let stage = ft.stage_config(&cfg.train);
        let out = trainer::fine_tune::<M, _>(&ft.base_checkpoint, &model_cfg, data, &stage, &plans, opts)?;
        print_outcome("fine-tuned", &out);
        return Ok(());
    }
    let model = M::build(model_cfg, cfg.model.init_seed)?;
    println!("training {} parameters", model.num_parameters());
    let out = trainer::fit(model, data, &cfg.train, &plans, opts)?;
    print_outcome("trained", &out);
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("train.seed={s}"));
    }
    let mut cfg = RunConfig::load(&args.config, &overrides)?;
    if let Some(d) = &args.output_dir {
        cfg.output.dir = d.clone();
    }
    let manifest = load_manifest(&cfg.data.manifest)?;
    for w in manifest.warnings() {
        eprintln!("warning: {w}");
    }
    let provider = FileProvider::for_manifest(&cfg.data.manifest);
    let data = DataSource { manifest: &manifest, provider: &provider, sampler: &cfg.data.sampler };
    let opts = RunOptions {
        out_dir: cfg.output.dir.clone(),
        log_every: cfg.output.log_every,
        stop_after_epoch: args.stop_after_epoch,
        echo: args.verbose,
    };
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    match cfg.model.kind {
        ModelKind::Tuss => train_kind::<Tuss<f32>>(&args, &cfg, &data, &opts),
        ModelKind::Baseline => train_kind::<Baseline<f32>>(&args, &cfg, &data, &opts),
    }
}

fn separate(args: SeparateArgs) -> Result<()> {
    // Prompts are checked before the checkpoint is read.
    let prompts = args.prompts.resolve()?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let written = match ck.header.kind {
        ModelKind::Tuss => {
            let prompts = prompts.ok_or_else(|| Error::Usage("give --prompts or --preset".into()))?;
            let model: Tuss<f32> = ck.model(&args.checkpoint)?;
            separate_file(&model, &args.input, &prompts, &args.output_dir)?
        }
        ModelKind::Baseline => {
            if prompts.is_some() {
                return Err(Error::Usage("the baseline model takes no prompts".into()));
            }
            let model: Baseline<f32> = ck.model(&args.checkpoint)?;
            separate_file_baseline(&model, &args.input, &args.output_dir)?
        }
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    if args.prompts.is_some() {
        return Err(Error::Usage("evaluate takes prompts from the references or --preset, not --prompts".into()));
    }
    let preset = args.preset.as_deref().map(str::parse::<TaskPreset>).transpose()?;
    let convention: MetricConvention = args.metric.parse().map_err(|e: tuss_core::Error| Error::Usage(e.to_string()))?;
    let items = load_eval_manifest(&args.manifest)?;
    let model: Option<Tuss<f32>> = match (&args.checkpoint, args.oracle) {
        (Some(ck), false) => Some(load_model(ck)?),
        _ => None,
    };
    let opts = EvalOptions {
        preset,
        n: args.n,
        with_noise: args.with_noise,
        convention,
        oracle: args.oracle,
        single_category: args.single_category,
    };
    let report = evaluate(model.as_ref(), &items, &opts);
    print!("{}", report.table());
    if let Some(p) = &args.metrics_out {
        fs::write(p, report.to_jsonl()).map_err(|e| Error::io(p, e))?;
    }
    if report.per_item.is_empty() && !items.is_empty() {
        return Err(Error::Input { path: args.manifest, message: "no item could be scored".into() });
    }
    Ok(())
}

fn presets() {
    for p in TaskPreset::ALL {
        let n = if p.needs_count() { "  (needs --n)" } else { "" };
        println!("{:<10} {:<36} {}{n}", p.name(), p.description(), p.template());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Separate(a) => separate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Presets => {
            presets();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_invalid_input() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
