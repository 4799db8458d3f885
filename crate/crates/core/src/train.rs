//! Optimization: learning-rate schedule, prompt dropout, AdamW with
//! gradient clipping, and the per-step update.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{baseline_pit_loss_grad, category_pit_loss, category_pit_loss_grad, zero_aware_snr_loss};
use crate::loss::{best_assignment, CategoryGrouping, CategoryWeighting, ZeroAwareConfig};
use crate::mixture::MixtureExample;
use crate::model::{Baseline, Tuss, BASELINE_OUTPUTS};
use crate::nn::Parameters;
use crate::prompt::{PromptCategory, PromptSet};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    /// Epochs before plateau decay may start.
    pub constant_epochs: usize,
    pub plateau_patience: usize,
    pub decay_factor: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub prompt_dropout_prob: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub category_weighting: CategoryWeighting,
    /// Size of the fixed validation set.
    pub validation_mixtures: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            steps_per_epoch: 2500,
            batch_size: 8,
            segment_seconds: 6.0,
            peak_lr: 1e-3,
            warmup_steps: 10_000,
            constant_epochs: 75,
            plateau_patience: 5,
            decay_factor: 0.5,
            weight_decay: 1e-2,
            grad_clip_norm: 5.0,
            prompt_dropout_prob: 0.25,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            category_weighting: CategoryWeighting::Equal,
            validation_mixtures: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Peak learning rate used for the large preset.
    pub const LARGE_PEAK_LR: f64 = 5e-4;
    /// Peak learning rate of the prompt-dropout fine-tune.
    pub const FINE_TUNE_PEAK_LR: f64 = 1.25e-4;

    /// Collects every problem into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("{name} must be positive (got {v})"));
            }
        };
        positive("epochs", self.epochs as f64);
        positive("steps_per_epoch", self.steps_per_epoch as f64);
        positive("batch_size", self.batch_size as f64);
        positive("segment_seconds", self.segment_seconds);
        positive("peak_lr", self.peak_lr);
        positive("plateau_patience", self.plateau_patience as f64);
        positive("grad_clip_norm", self.grad_clip_norm);
        positive("adam_eps", self.adam_eps);
        positive("validation_mixtures", self.validation_mixtures as f64);
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            problems.push(format!("decay_factor must be in (0, 1] (got {})", self.decay_factor));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay must be non-negative (got {})", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.prompt_dropout_prob) {
            problems.push(format!("prompt_dropout_prob must be in [0, 1] (got {})", self.prompt_dropout_prob));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must be in [0, 1) (got {b})"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs as u64 * self.steps_per_epoch as u64
    }
}

/// Learning rate for a given position: linear warmup from 0, then the peak
/// rate halved (by `decay_factor`) once per applied decay. Decays count only
/// from `constant_epochs` on.
pub fn lr_at(step: u64, epoch: usize, decays_applied: u32, config: &TrainConfig) -> f64 {
    if step < config.warmup_steps {
        return config.peak_lr * (step as f64 / config.warmup_steps as f64);
    }
    let decays = if epoch >= config.constant_epochs { decays_applied } else { 0 };
    config.peak_lr * libm::pow(config.decay_factor, decays as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub global_step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub current_lr: f64,
    /// `None` until the first validation.
    pub best_validation_loss: Option<f64>,
    pub epochs_since_improvement: usize,
    pub decay_applied_count: u32,
}

impl ScheduleState {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            global_step: 0,
            epoch: 0,
            current_lr: lr_at(0, 0, 0, config),
            best_validation_loss: None,
            epochs_since_improvement: 0,
            decay_applied_count: 0,
        }
    }

    pub fn lr(&self, config: &TrainConfig) -> f64 {
        lr_at(self.global_step, self.epoch, self.decay_applied_count, config)
    }

    /// Records an epoch's validation loss. Returns true when it is the new
    /// best. A decay is applied once the run is past `constant_epochs` and
    /// the loss has not improved for `plateau_patience` epochs; the counter
    /// then starts over.
    pub fn end_epoch(&mut self, validation_loss: f64, config: &TrainConfig) -> bool {
        self.epoch += 1;
        let improved = match self.best_validation_loss {
            Some(best) => validation_loss < best,
            None => validation_loss.is_finite(),
        };
        if improved {
            self.best_validation_loss = Some(validation_loss);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        if self.epoch >= config.constant_epochs && self.epochs_since_improvement >= config.plateau_patience {
            self.decay_applied_count += 1;
            self.epochs_since_improvement = 0;
        }
        self.current_lr = self.lr(config);
        improved
    }
}

/// Mixture and reference sources in the model's precision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample<T> {
    pub mixture: Vec<T>,
    pub targets: Vec<Vec<T>>,
    pub prompts: PromptSet,
}

impl<T: Real> TrainExample<T> {
    pub fn new(mixture: Vec<T>, targets: Vec<Vec<T>>, prompts: PromptSet) -> Result<Self> {
        if targets.len() != prompts.len() {
            return Err(Error::Shape(format!("{} targets for {} prompts", targets.len(), prompts.len())));
        }
        if let Some(t) = targets.iter().find(|t| t.len() != mixture.len()) {
            return Err(Error::LengthMismatch { expected: mixture.len(), actual: t.len() });
        }
        Ok(Self { mixture, targets, prompts })
    }

    pub fn from_mixture(example: &MixtureExample) -> Self {
        let cast = |x: &[f32]| x.iter().map(|v| T::lit(*v as f64)).collect::<Vec<T>>();
        Self {
            mixture: cast(&example.mixture.samples),
            targets: example.sources.iter().map(|s| cast(&s.samples)).collect(),
            prompts: example.prompts.clone(),
        }
    }
}

/// What prompt dropout did to one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutDraw {
    /// Requested number of removals, uniform in `1..N`.
    pub requested: usize,
    /// Removed positions in the original prompt list, ascending.
    pub removed: Vec<usize>,
}

/// With probability `prob`, removes `M ~ U{1, .., N-1}` prompts chosen
/// uniformly among those whose category appears exactly once; if fewer are
/// droppable, all droppable ones go. Removed sources stay in the mixture.
pub fn apply_prompt_dropout<T: Clone, R: Rng + ?Sized>(
    example: TrainExample<T>,
    prob: f64,
    rng: &mut R,
) -> (TrainExample<T>, Option<DropoutDraw>) {
    // The trigger is always drawn so the stream position does not depend on N.
    let triggered = rng.gen::<f64>() < prob;
    let n = example.prompts.len();
    if !triggered || n < 2 {
        return (example, None);
    }
    let requested = rng.gen_range(1..n);
    let mut droppable: Vec<usize> =
        (0..n).filter(|&i| example.prompts.count(example.prompts.entries()[i]) == 1).collect();
    let take = requested.min(droppable.len());
    for i in 0..take {
        let j = rng.gen_range(i..droppable.len());
        droppable.swap(i, j);
    }
    let mut removed = droppable[..take].to_vec();
    removed.sort_unstable();
    let keep: Vec<usize> = (0..n).filter(|i| removed.binary_search(i).is_err()).collect();
    let prompts = example.prompts.select(&keep).expect("a subset of a valid prompt list is valid");
    let targets = keep.iter().map(|&i| example.targets[i].clone()).collect();
    (TrainExample { mixture: example.mixture, targets, prompts }, Some(DropoutDraw { requested, removed }))
}

/// Loss of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleLoss {
    pub total: f64,
    /// Per-category PIT losses; empty for the prompt-free baseline.
    pub per_category: Vec<(PromptCategory, f64)>,
}

/// A model the training loop can optimize.
pub trait Trainable<T: Real>: Parameters<T> + Clone {
    /// Loss of one example, with its parameter gradient added to `grads`.
    /// A non-finite loss is reported before any gradient is accumulated.
    fn accumulate_gradient(&self, example: &TrainExample<T>, weighting: CategoryWeighting, grads: &mut Self) -> Result<ExampleLoss>;

    /// Loss without gradients.
    fn evaluate_loss(&self, example: &TrainExample<T>, weighting: CategoryWeighting) -> Result<ExampleLoss>;
}

fn finite_loss(total: f64) -> Result<()> {
    if total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss(format!("{total}")))
    }
}

fn category_losses(report: &crate::loss::LossReport) -> Vec<(PromptCategory, f64)> {
    report.per_category.iter().map(|c| (c.category, c.loss)).collect()
}

impl<T: Real> Trainable<T> for Tuss<T> {
    fn accumulate_gradient(&self, ex: &TrainExample<T>, weighting: CategoryWeighting, grads: &mut Self) -> Result<ExampleLoss> {
        let (outs, cache) = self.forward_train(&ex.mixture, ex.prompts.entries())?;
        let grouping = CategoryGrouping::from_categories(ex.prompts.entries());
        let (report, d) = category_pit_loss_grad(&ex.targets, &outs, &grouping, weighting)?;
        finite_loss(report.total)?;
        self.backward(&cache, &d, grads)?;
        Ok(ExampleLoss { total: report.total, per_category: category_losses(&report) })
    }

    fn evaluate_loss(&self, ex: &TrainExample<T>, weighting: CategoryWeighting) -> Result<ExampleLoss> {
        let outs = self.forward(&ex.mixture, ex.prompts.entries())?;
        let grouping = CategoryGrouping::from_categories(ex.prompts.entries());
        let report = category_pit_loss(&ex.targets, &outs, &grouping, weighting)?;
        Ok(ExampleLoss { total: report.total, per_category: category_losses(&report) })
    }
}

impl<T: Real> Trainable<T> for Baseline<T> {
    fn accumulate_gradient(&self, ex: &TrainExample<T>, _: CategoryWeighting, grads: &mut Self) -> Result<ExampleLoss> {
        let (outs, cache) = self.forward_train(&ex.mixture)?;
        let (loss, d) = baseline_pit_loss_grad(&ex.targets, &outs, &ex.mixture, ZeroAwareConfig::default())?;
        finite_loss(loss.total)?;
        self.backward(&cache, &d, grads)?;
        Ok(ExampleLoss { total: loss.total, per_category: Vec::new() })
    }

    fn evaluate_loss(&self, ex: &TrainExample<T>, _: CategoryWeighting) -> Result<ExampleLoss> {
        let outs = self.forward(&ex.mixture)?;
        if ex.targets.len() > BASELINE_OUTPUTS {
            return Err(Error::Grouping(format!("{} references for {BASELINE_OUTPUTS} outputs", ex.targets.len())));
        }
        let zeros = alloc::vec![T::zero(); ex.mixture.len()];
        let refs: Vec<&[T]> = ex
            .targets
            .iter()
            .map(|t| t.as_slice())
            .chain(core::iter::repeat(zeros.as_slice()))
            .take(BASELINE_OUTPUTS)
            .collect();
        let cost = outs
            .iter()
            .map(|o| refs.iter().map(|r| zero_aware_snr_loss(r, o, &ex.mixture, ZeroAwareConfig::default())).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(ExampleLoss { total: best_assignment(&cost).0, per_category: Vec::new() })
    }
}

/// Decoupled-weight-decay Adam. Moments are kept in the parameter
/// precision so checkpoints restore them exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(num_params: usize, config: &TrainConfig) -> Self {
        Self {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            step: 0,
            m: alloc::vec![T::zero(); num_params],
            v: alloc::vec![T::zero(); num_params],
        }
    }

    /// One update of `params` in place. With `lr == 0` the parameters are
    /// left bit-exactly unchanged (the moments still advance).
    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments but got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for i in 0..params.len() {
            let g = grads[i].as_f64();
            let m = self.beta1 * self.m[i].as_f64() + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.v[i].as_f64() + (1.0 - self.beta2) * g * g;
            self.m[i] = T::lit(m);
            self.v[i] = T::lit(v);
            if lr == 0.0 {
                continue;
            }
            let p = params[i].as_f64();
            let step = lr * ((m / c1) / (libm::sqrt(v / c2) + self.eps) + self.weight_decay * p);
            params[i] = T::lit(p - step);
        }
        Ok(())
    }
}

/// Global L2 norm of `grads`.
pub fn grad_norm<T: Real>(grads: &[T]) -> f64 {
    libm::sqrt(grads.iter().map(|g| g.as_f64() * g.as_f64()).sum())
}

/// Scales `grads` so that their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        grads.iter_mut().for_each(|g| *g *= s);
        // Rounding can leave the result a hair above the bound.
        let after = grad_norm(grads);
        if after > max_norm {
            let s = T::lit(max_norm / after * (1.0 - 1e-7));
            grads.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// One optimizer step, as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Global step the update was computed for (before the increment).
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// Mean loss per category over the examples that contain it.
    pub per_category: Vec<(PromptCategory, f64)>,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Summed gradient and per-example losses, accumulated in batch order.
pub fn batch_gradients<T: Real, M: Trainable<T>>(
    model: &M,
    batch: &[TrainExample<T>],
    weighting: CategoryWeighting,
) -> Result<(Vec<ExampleLoss>, M)> {
    let mut grads = model.zeros_like();
    let mut losses = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        let loss = model.accumulate_gradient(ex, weighting, &mut grads).map_err(|e| match e {
            Error::NonFiniteLoss(v) => Error::NonFiniteLoss(format!("example {i} of the batch ({}): {v}", ex.prompts_label())),
            other => other,
        })?;
        losses.push(loss);
    }
    Ok((losses, grads))
}

impl<T> TrainExample<T> {
    fn prompts_label(&self) -> String {
        let names: Vec<&str> = self.prompts.entries().iter().map(|c| c.name()).collect();
        names.join(",")
    }
}

/// Averages `summed` over the batch, clips, applies AdamW at the current
/// learning rate and advances the schedule by one step. Nothing is changed
/// if the gradient is not finite.
pub fn apply_update<T: Real, M: Trainable<T>>(
    model: &mut M,
    summed: &M,
    losses: &[ExampleLoss],
    opt: &mut AdamW<T>,
    state: &mut ScheduleState,
    config: &TrainConfig,
) -> Result<StepReport> {
    if losses.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let b = losses.len() as f64;
    let loss = losses.iter().map(|l| l.total).sum::<f64>() / b;
    finite_loss(loss).map_err(|e| Error::NonFiniteLoss(format!("step {}: {e}", state.global_step)))?;
    let inv = T::lit(1.0 / b);
    let mut grads: Vec<T> = summed.flatten().into_iter().map(|g| g * inv).collect();
    let norm = clip_grad_norm(&mut grads, config.grad_clip_norm);
    if !norm.is_finite() {
        return Err(Error::NonFiniteLoss(format!("step {}: gradient norm {norm}", state.global_step)));
    }
    let lr = state.lr(config);
    let mut params = model.flatten();
    opt.update(&mut params, &grads, lr)?;
    model.unflatten(&params);
    let report = StepReport { step: state.global_step, lr, loss, per_category: mean_per_category(losses), grad_norm: norm };
    state.global_step += 1;
    state.current_lr = state.lr(config);
    Ok(report)
}

/// [`batch_gradients`] followed by [`apply_update`].
pub fn train_step<T: Real, M: Trainable<T>>(
    model: &mut M,
    batch: &[TrainExample<T>],
    opt: &mut AdamW<T>,
    state: &mut ScheduleState,
    config: &TrainConfig,
) -> Result<StepReport> {
    let (losses, grads) = batch_gradients(model, batch, config.category_weighting)
        .map_err(|e| prefix_step(e, state.global_step))?;
    apply_update(model, &grads, &losses, opt, state, config)
}

fn prefix_step(e: Error, step: u64) -> Error {
    match e {
        Error::NonFiniteLoss(v) => Error::NonFiniteLoss(format!("step {step}, {v}")),
        other => other,
    }
}

pub fn mean_per_category(losses: &[ExampleLoss]) -> Vec<(PromptCategory, f64)> {
    let mut acc: BTreeMap<PromptCategory, (f64, usize)> = BTreeMap::new();
    for l in losses {
        for (c, v) in &l.per_category {
            let e = acc.entry(*c).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}

/// Mean loss over a validation set; prompt dropout is never applied here.
pub fn validation_loss<T: Real, M: Trainable<T>>(model: &M, set: &[TrainExample<T>], weighting: CategoryWeighting) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Shape("empty validation set".into()));
    }
    let mut sum = 0.0;
    for ex in set {
        sum += model.evaluate_loss(ex, weighting)?.total;
    }
    Ok(sum / set.len() as f64)
}

/// Independent random streams, keyed by purpose and position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Data = 0,
    Dropout = 1,
    Validation = 2,
    Init = 3,
}

/// RNG for example `index` of step `step`. Every example has its own stream,
/// so any step can be regenerated (and examples built in parallel) without
/// replaying earlier draws.
pub fn example_rng(seed: u64, kind: StreamKind, step: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(step);
    rng.set_word_pos((index as u128) << 40);
    rng
}
