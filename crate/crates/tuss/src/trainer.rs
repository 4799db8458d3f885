//! Training driver: streams mixture batches, validates on fixed recipes,
//! checkpoints every epoch and resumes exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use tuss_core::mixture::{CorpusManifest, MixtureEngine, MixturePlan, PromptSamplerConfig, SourceProvider, Split};
use tuss_core::train::{
    apply_prompt_dropout, apply_update, example_rng, AdamW, ExampleLoss, ScheduleState, StepReport, StreamKind,
    TrainConfig, TrainExample, Trainable,
};

use crate::checkpoint::{Checkpoint, Checkpointable, OptimizerState, TrainingState};
use crate::corpus::{load_recipes, write_recipes};
use crate::error::{Error, Result};

pub const FIT: &str = "fit";
pub const FINE_TUNE: &str = "fine-tune";

/// Corpus, audio access and sampling rules.
pub struct DataSource<'a, P: ?Sized> {
    pub manifest: &'a CorpusManifest,
    pub provider: &'a P,
    pub sampler: &'a PromptSamplerConfig,
}

impl<'a, P: SourceProvider + Sync + ?Sized> DataSource<'a, P> {
    fn engine(&self, split: Split) -> Result<MixtureEngine<'a, P>> {
        Ok(MixtureEngine::new(self.manifest, self.provider, self.sampler, split)?)
    }

    /// `count` fixed validation mixtures drawn from the `valid` split, or
    /// from `train` (on a separate stream) when that split is empty.
    pub fn validation_plans(&self, count: usize, seed: u64, segment_seconds: f64) -> Result<Vec<MixturePlan>> {
        let engine = self.engine(Split::Valid).or_else(|_| self.engine(Split::Train))?;
        (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = example_rng(seed, StreamKind::Validation, 0, i);
                Ok(engine.next_example(segment_seconds, &mut rng)?.plan)
            })
            .collect()
    }
}

/// Where and how often to write.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub log_every: usize,
    /// Stop after this many epochs of the stage (for staged or test runs).
    pub stop_after_epoch: Option<usize>,
    /// Also print log records to stdout.
    pub echo: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into(), log_every: 50, stop_after_epoch: None, echo: false }
    }
}

#[derive(Debug)]
pub struct StageOutcome<M> {
    pub model: M,
    pub schedule: ScheduleState,
    pub validation_history: Vec<f64>,
    /// Per-epoch checkpoints written by this call, in order.
    pub checkpoints: Vec<PathBuf>,
    pub best: Option<PathBuf>,
    /// Learning rate used by every step of this call.
    pub lr_trace: Vec<f64>,
}

pub fn epoch_checkpoint(out_dir: &Path, stage: &str, epoch: usize) -> PathBuf {
    out_dir.join(format!("{stage}-epoch{epoch:03}.ckpt"))
}

struct Logger {
    file: fs::File,
    path: PathBuf,
    echo: bool,
}

impl Logger {
    fn open(out_dir: &Path, echo: bool) -> Result<Self> {
        let path = out_dir.join("train_log.jsonl");
        let file = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path, echo })
    }

    fn write(&mut self, record: serde_json::Value) -> Result<()> {
        let line = record.to_string();
        if self.echo {
            println!("{line}");
        }
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Builds one training batch. Every example comes from its own stream, so
/// the batch depends only on `(seed, step)`.
pub fn make_batch<P: SourceProvider + Sync + ?Sized>(
    engine: &MixtureEngine<'_, P>,
    config: &TrainConfig,
    step: u64,
    dropout_prob: f64,
) -> Result<Vec<TrainExample<f32>>> {
    (0..config.batch_size as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = example_rng(config.seed, StreamKind::Data, step, i);
            let ex = TrainExample::from_mixture(&engine.next_example(config.segment_seconds, &mut rng)?);
            let mut drop_rng = example_rng(config.seed, StreamKind::Dropout, step, i);
            Ok(apply_prompt_dropout(ex, dropout_prob, &mut drop_rng).0)
        })
        .collect()
}

/// Per-example gradients in parallel, summed in batch order. The result
/// does not depend on the number of threads.
pub fn parallel_gradients<M: Trainable<f32> + Send + Sync>(
    model: &M,
    batch: &[TrainExample<f32>],
    config: &TrainConfig,
) -> Result<(Vec<ExampleLoss>, M)> {
    let per: Vec<(ExampleLoss, M)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = model.zeros_like();
            let l = model.accumulate_gradient(ex, config.category_weighting, &mut g)?;
            Ok((l, g))
        })
        .collect::<tuss_core::Result<_>>()?;
    let mut losses = Vec::with_capacity(per.len());
    let mut sum: Option<M> = None;
    for (l, g) in per {
        losses.push(l);
        match sum.as_mut() {
            Some(s) => s.add_assign_from(&g),
            None => sum = Some(g),
        }
    }
    Ok((losses, sum.expect("batch is non-empty")))
}

/// One optimizer step on a streamed batch.
pub fn step<M: Trainable<f32> + Send + Sync>(
    model: &mut M,
    batch: &[TrainExample<f32>],
    opt: &mut AdamW<f32>,
    state: &mut ScheduleState,
    config: &TrainConfig,
) -> Result<StepReport> {
    let (losses, grads) = parallel_gradients(model, batch, config)?;
    Ok(apply_update(model, &grads, &losses, opt, state, config)?)
}

/// Mean validation loss over realized recipes, without prompt dropout.
pub fn validate<M: Trainable<f32> + Send + Sync, P: SourceProvider + Sync + ?Sized>(
    model: &M,
    engine: &MixtureEngine<'_, P>,
    plans: &[MixturePlan],
    config: &TrainConfig,
) -> Result<f64> {
    let losses: Vec<f64> = plans
        .par_iter()
        .map(|p| {
            let ex = TrainExample::from_mixture(&engine.realize(p)?);
            Ok(model.evaluate_loss(&ex, config.category_weighting)?.total)
        })
        .collect::<Result<_>>()?;
    if losses.is_empty() {
        return Err(Error::Usage("empty validation set".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

struct Stage<'r, M> {
    model: M,
    opt: AdamW<f32>,
    state: ScheduleState,
    config: TrainConfig,
    name: &'static str,
    history: Vec<f64>,
    opts: &'r RunOptions,
}

fn training_state<M>(s: &Stage<'_, M>) -> TrainingState {
    TrainingState {
        config: s.config.clone(),
        schedule: s.state.clone(),
        optimizer: OptimizerState {
            beta1: s.opt.beta1,
            beta2: s.opt.beta2,
            eps: s.opt.eps,
            weight_decay: s.opt.weight_decay,
            step: s.opt.step,
        },
        stage: s.name.into(),
        validation_history: s.history.clone(),
    }
}

fn run_stage<M: Checkpointable, P: SourceProvider + Sync + ?Sized>(
    mut s: Stage<'_, M>,
    data: &DataSource<'_, P>,
    plans: &[MixturePlan],
) -> Result<StageOutcome<M>> {
    fs::create_dir_all(&s.opts.out_dir).map_err(|e| Error::io(&s.opts.out_dir, e))?;
    let mut log = Logger::open(&s.opts.out_dir, s.opts.echo)?;
    let engine = data.engine(Split::Train)?;
    let dropout = if s.name == FINE_TUNE { s.config.prompt_dropout_prob } else { 0.0 };
    let start = Instant::now();
    let mut outcome_ckpts = Vec::new();
    let mut best = None;
    let mut lr_trace = Vec::new();
    let last_epoch = s.opts.stop_after_epoch.map_or(s.config.epochs, |e| e.min(s.config.epochs));
    while s.state.epoch < last_epoch {
        let epoch = s.state.epoch;
        for _ in 0..s.config.steps_per_epoch {
            let g = s.state.global_step;
            let wrap = |e: Error| Error::Training { epoch, step: g, source: Box::new(e) };
            let batch = make_batch(&engine, &s.config, g, dropout).map_err(wrap)?;
            let r = step(&mut s.model, &batch, &mut s.opt, &mut s.state, &s.config).map_err(wrap)?;
            lr_trace.push(r.lr);
            if g.is_multiple_of(s.opts.log_every as u64) {
                let per: serde_json::Map<String, serde_json::Value> =
                    r.per_category.iter().map(|(c, v)| (c.name().to_string(), json!(v))).collect();
                log.write(json!({
                    "stage": s.name, "epoch": epoch, "step": r.step, "lr": r.lr, "loss": r.loss,
                    "per_category": per, "grad_norm": r.grad_norm, "wall_time_s": start.elapsed().as_secs_f64(),
                }))?;
            }
        }
        let val = validate(&s.model, &engine, plans, &s.config)
            .map_err(|e| Error::Training { epoch, step: s.state.global_step, source: Box::new(e) })?;
        s.history.push(val);
        let improved = s.state.end_epoch(val, &s.config);
        let ckpt = Checkpoint::from_model(&s.model, Some((training_state(&s), &s.opt)));
        let path = epoch_checkpoint(&s.opts.out_dir, s.name, s.state.epoch);
        ckpt.save(&path)?;
        if improved {
            let b = s.opts.out_dir.join(format!("{}-best.ckpt", s.name));
            ckpt.save(&b)?;
            best = Some(b);
        }
        log.write(json!({
            "stage": s.name, "event": "epoch", "epoch": s.state.epoch, "step": s.state.global_step,
            "validation_loss": val, "best_validation_loss": s.state.best_validation_loss, "lr": s.state.current_lr,
            "decays": s.state.decay_applied_count, "checkpoint": path.display().to_string(),
            "wall_time_s": start.elapsed().as_secs_f64(),
        }))?;
        outcome_ckpts.push(path);
    }
    Ok(StageOutcome {
        model: s.model,
        schedule: s.state,
        validation_history: s.history,
        checkpoints: outcome_ckpts,
        best,
        lr_trace,
    })
}

/// Fixed validation recipes: loaded from `recipes` if given, otherwise
/// drawn once and saved next to the checkpoints.
pub fn prepare_validation<P: SourceProvider + Sync + ?Sized>(
    data: &DataSource<'_, P>,
    config: &TrainConfig,
    recipes: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<MixturePlan>> {
    if let Some(path) = recipes {
        return load_recipes(path);
    }
    let path = out_dir.join("validation_recipes.jsonl");
    if path.exists() {
        return load_recipes(&path);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plans = data.validation_plans(config.validation_mixtures, config.seed, config.segment_seconds)?;
    write_recipes(&path, &plans)?;
    Ok(plans)
}

/// Trains from scratch.
pub fn fit<M: Checkpointable, P: SourceProvider + Sync + ?Sized>(
    model: M,
    data: &DataSource<'_, P>,
    config: &TrainConfig,
    plans: &[MixturePlan],
    opts: &RunOptions,
) -> Result<StageOutcome<M>> {
    config.validate()?;
    let opt = AdamW::new(model.num_parameters(), config);
    let state = ScheduleState::new(config);
    run_stage(Stage { model, opt, state, config: config.clone(), name: FIT, history: Vec::new(), opts }, data, plans)
}

/// Continues the stage stored in `checkpoint` where it stopped.
pub fn resume<M: Checkpointable, P: SourceProvider + Sync + ?Sized>(
    checkpoint: &Path,
    data: &DataSource<'_, P>,
    plans: &[MixturePlan],
    opts: &RunOptions,
) -> Result<StageOutcome<M>> {
    let ck = Checkpoint::load(checkpoint)?;
    let model: M = ck.model(checkpoint)?;
    let opt = ck.optimizer(checkpoint)?;
    let t = ck.header.training.clone().expect("optimizer() checked the training state");
    let name = match t.stage.as_str() {
        FIT => FIT,
        FINE_TUNE => FINE_TUNE,
        other => return Err(Error::Checkpoint { path: checkpoint.into(), message: format!("unknown stage `{other}`") }),
    };
    let stage = Stage { model, opt, state: t.schedule, config: t.config, name, history: t.validation_history, opts };
    run_stage(stage, data, plans)
}

/// Loads parameters (not optimizer state) from `base` and trains with
/// prompt dropout under `config`, starting a fresh schedule.
pub fn fine_tune<M: Checkpointable, P: SourceProvider + Sync + ?Sized>(
    base: &Path,
    expected: &tuss_core::ModelConfig,
    data: &DataSource<'_, P>,
    config: &TrainConfig,
    plans: &[MixturePlan],
    opts: &RunOptions,
) -> Result<StageOutcome<M>> {
    config.validate()?;
    let ck = Checkpoint::load(base)?;
    if &ck.header.model != expected {
        return Err(Error::Checkpoint {
            path: base.into(),
            message: "model config of the base checkpoint differs from the run config".into(),
        });
    }
    let model: M = ck.model(base)?;
    let opt = AdamW::new(model.num_parameters(), config);
    let state = ScheduleState::new(config);
    run_stage(Stage { model, opt, state, config: config.clone(), name: FINE_TUNE, history: Vec::new(), opts }, data, plans)
}
