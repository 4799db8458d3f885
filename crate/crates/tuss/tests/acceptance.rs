//! Acceptance checks, one line per criterion.
//!
//! Run all with `cargo test -p tuss --test acceptance`, or a subset with
//! `cargo test -p tuss --test acceptance -- 3 10`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tuss::checkpoint::{Checkpoint, OptimizerState, TrainingState};
use tuss::presets::TaskPreset;
use tuss::trainer;
use tuss_core::dsp::{istft, stft, AudioBuffer, BandSplitSpec, StftConfig};
use tuss_core::loss::{baseline_pit_loss_grad, category_pit_loss, neg_snr_loss, CategoryGrouping, CategoryWeighting, ZeroAwareConfig};
use tuss_core::metrics::{si_snr_db, snr_db};
use tuss_core::mixture::{
    sample_prompt_set, CorpusManifest, MemoryProvider, MixtureEngine, PromptSamplerConfig, SourceRecord, Split,
};
use tuss_core::nn::Parameters;
use tuss_core::prompt::check_prompts;
use tuss_core::train::{apply_prompt_dropout, apply_update, lr_at, AdamW, ScheduleState, TrainConfig, TrainExample, Trainable};
use tuss_core::{Baseline, ModelConfig, PromptCategory, PromptSet, StackConfig, Tuss};
use PromptCategory::*;

// Pinned tolerances.
const PARAM_TOLERANCE: f64 = 0.10;
const MEDIUM_TARGET: f64 = 11.1e6;
const LARGE_TARGET: f64 = 38.2e6;
const ROUND_TRIP_MAX: f64 = 1e-6;
const GRAD_REL_MAX: f64 = 1e-3;
const SCALE_INVARIANCE_DB: f64 = 1e-9;
const CONSTRUCTED_SNR_DB: f64 = 20.0;
const CONSTRUCTED_SNR_TOL: f64 = 0.01;
const GAIN_KS_MAX: f64 = 0.02;
const TRIGGER_RATE: (f64, f64) = (0.24, 0.26);
const PERMUTATION_TOL: f32 = 1e-5;
const DIVERGENCE_MIN: f32 = 1e-6;
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_TARGET_DB: f64 = 10.0;
const INIT_CEILING_DB: f64 = 0.0;
const INACTIVE_MARGIN_DB: f64 = 20.0;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let (u, v): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
            (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
        })
        .collect()
}

fn micro_config(positional_encoding: bool) -> ModelConfig {
    ModelConfig {
        sample_rate_hz: 8000,
        stft: StftConfig::new(16, 8),
        band_spec: BandSplitSpec::new(vec![4, 5]).unwrap(),
        embed_dim: 8,
        num_heads: 2,
        norm_groups: 2,
        conv_kernel: 3,
        conv_stride: 1,
        cross: StackConfig { blocks: 1, ffn_hidden: 6, attn_hidden: 4 },
        tse: StackConfig { blocks: 1, ffn_hidden: 5, attn_hidden: 2 },
        positional_encoding,
        rope_base: 10_000.0,
        norm_eps: 1e-5,
        prompt_init_std: 0.02,
    }
}

fn c1_parameter_counts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let medium = Tuss::<f32>::new(ModelConfig::medium(), &mut rng).map_err(|e| e.to_string())?.count_parameters();
    let large = Tuss::<f32>::new(ModelConfig::large(), &mut rng).map_err(|e| e.to_string())?.count_parameters();
    let dev = |n: usize, t: f64| (n as f64 - t).abs() / t;
    ensure(dev(medium, MEDIUM_TARGET) <= PARAM_TOLERANCE, || format!("medium {medium}"))?;
    ensure(dev(large, LARGE_TARGET) <= PARAM_TOLERANCE, || format!("large {large}"))?;
    Ok(format!(
        "medium {medium} ({:+.1}% vs 11.1M), large {large} ({:+.1}% vs 38.2M)",
        100.0 * (medium as f64 / MEDIUM_TARGET - 1.0),
        100.0 * (large as f64 / LARGE_TARGET - 1.0)
    ))
}

fn c2_stft_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = StftConfig::default();
    let rate = 48_000u32;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(rate as usize..=6 * rate as usize);
        let x: Vec<f32> = gaussian(&mut rng, len).into_iter().map(|v| (0.1 * v) as f32).collect();
        let audio = AudioBuffer::new(x, rate).map_err(|e| e.to_string())?;
        let y = istft(&stft(&audio, cfg).map_err(|e| e.to_string())?, len).map_err(|e| e.to_string())?;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (a, b) in y.samples.iter().zip(&audio.samples) {
            num += (*a as f64 - *b as f64).powi(2);
            den += (*b as f64).powi(2);
        }
        worst = worst.max((num / den).sqrt());
    }
    ensure(worst < ROUND_TRIP_MAX, || format!("worst relative error {worst:.3e}"))?;
    Ok(format!("worst relative error {worst:.2e} over 100 buffers of 1-6 s (f32)"))
}

fn c3_gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Tuss::<f64>::new(micro_config(true), &mut rng).map_err(|e| e.to_string())?;
    let len = 80;
    let targets = vec![gaussian(&mut rng, len), gaussian(&mut rng, len)];
    let mixture: Vec<f64> = targets[0].iter().zip(&targets[1]).map(|(a, b)| a + b).collect();
    let ex = TrainExample::new(mixture, targets, PromptSet::new(vec![Speech, SfxMix]).unwrap()).unwrap();
    let w = CategoryWeighting::Equal;
    let mut grads = model.zeros_like();
    model.accumulate_gradient(&ex, w, &mut grads).map_err(|e| e.to_string())?;
    let g = grads.flatten();
    let flat = model.flatten();
    let mut probe = model.clone();
    let loss = |m: &Tuss<f64>| m.evaluate_loss(&ex, w).unwrap().total;
    let h = 1e-5;
    let mut off = 0;
    let mut worst = (0.0f64, String::new());
    let groups: Vec<(String, usize)> = model.named_params().into_iter().map(|(n, p)| (n, p.len())).collect();
    for (name, n) in &groups {
        let (mut num, mut den) = (0.0, 0.0);
        for i in off..off + n {
            let mut p = flat.clone();
            p[i] += h;
            probe.unflatten(&p);
            let up = loss(&probe);
            p[i] -= 2.0 * h;
            probe.unflatten(&p);
            let fd = (up - loss(&probe)) / (2.0 * h);
            num += (fd - g[i]).powi(2);
            den += fd * fd;
        }
        let rel = num.sqrt() / den.sqrt().max(1e-10);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
        off += n;
    }
    ensure(worst.0 < GRAD_REL_MAX, || format!("{}: relative error {:.3e}", worst.1, worst.0))?;
    Ok(format!("{} parameter groups, worst relative error {:.2e} ({})", groups.len(), worst.0, worst.1))
}

fn permutations_brute(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations_brute(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

fn c4_pit_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let len = 32;
    for inst in 0..1000 {
        let groups = rng.gen_range(1..=4);
        let mut cats: Vec<PromptCategory> = PromptCategory::ALL.to_vec();
        let mut entries = Vec::new();
        for _ in 0..groups {
            let c = cats.swap_remove(rng.gen_range(0..cats.len()));
            entries.extend(std::iter::repeat_n(c, rng.gen_range(1..=3)));
        }
        // Interleave positions so groups are not contiguous.
        for i in (1..entries.len()).rev() {
            entries.swap(i, rng.gen_range(0..=i));
        }
        let targets: Vec<Vec<f64>> = entries.iter().map(|_| gaussian(&mut rng, len)).collect();
        let estimates: Vec<Vec<f64>> = targets
            .iter()
            .map(|t| t.iter().zip(gaussian(&mut rng, len)).map(|(a, b)| a + 0.8 * b).collect())
            .collect();
        let grouping = CategoryGrouping::from_categories(&entries);
        let report = category_pit_loss(&targets, &estimates, &grouping, CategoryWeighting::Equal).map_err(|e| e.to_string())?;
        let mut minima = BTreeMap::new();
        for c in &entries {
            if minima.contains_key(c) {
                continue;
            }
            let pos: Vec<usize> = (0..entries.len()).filter(|&i| entries[i] == *c).collect();
            let best = permutations_brute(pos.len())
                .into_iter()
                .map(|p| {
                    let s: f64 = (0..pos.len()).map(|j| neg_snr_loss(&targets[pos[p[j]]], &estimates[pos[j]]).unwrap()).sum();
                    s / pos.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            minima.insert(*c, best);
        }
        ensure(report.per_category.len() == minima.len(), || format!("instance {inst}: group count"))?;
        let mut sum = 0.0;
        for cl in &report.per_category {
            let b = minima[&cl.category];
            ensure(cl.loss == b, || format!("instance {inst}: {} min {} vs brute force {b}", cl.category, cl.loss))?;
            sum += cl.loss;
        }
        let mean = sum / report.per_category.len() as f64;
        ensure(report.total.to_bits() == mean.to_bits(), || format!("instance {inst}: total {} vs mean {mean}", report.total))?;
    }
    Ok("1000 grouped instances: minima equal brute force, totals bit-exact".into())
}

fn c5_metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(64..4096);
        let s = gaussian(&mut rng, n);
        let e: Vec<f64> = s.iter().zip(gaussian(&mut rng, n)).map(|(a, b)| a + rng.gen_range(0.05..3.0) * b).collect();
        let alpha = 10f64.powf(rng.gen_range(-3.0..3.0));
        let scaled: Vec<f64> = e.iter().map(|v| v * alpha).collect();
        let d = (si_snr_db(&s, &e).unwrap() - si_snr_db(&s, &scaled).unwrap()).abs();
        worst = worst.max(d);
    }
    ensure(worst <= SCALE_INVARIANCE_DB, || format!("scale invariance off by {worst:.3e} dB"))?;
    // Reference plus orthogonal noise at one hundredth of its energy.
    let n = 8000;
    let s = gaussian(&mut rng, n);
    let mut noise = gaussian(&mut rng, n);
    let proj = noise.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / s.iter().map(|v| v * v).sum::<f64>();
    noise.iter_mut().zip(&s).for_each(|(v, r)| *v -= proj * r);
    let k = (s.iter().map(|v| v * v).sum::<f64>() / noise.iter().map(|v| v * v).sum::<f64>() / 100.0).sqrt();
    let est: Vec<f64> = s.iter().zip(&noise).map(|(a, b)| a + k * b).collect();
    let (plain, si) = (snr_db(&s, &est).unwrap(), si_snr_db(&s, &est).unwrap());
    for v in [plain, si] {
        ensure((v - CONSTRUCTED_SNR_DB).abs() <= CONSTRUCTED_SNR_TOL, || format!("constructed case gave {v} dB"))?;
    }
    Ok(format!("worst scale drift {worst:.1e} dB over 1000 pairs; constructed case SNR {plain:.4} dB, SI-SNR {si:.4} dB"))
}

fn gain_corpus(rate: u32) -> (CorpusManifest, MemoryProvider) {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut provider = MemoryProvider::new();
    let mut records = Vec::new();
    for c in PromptCategory::ALL {
        for i in 0..3 {
            let path = format!("{c}/{i}.wav");
            provider.insert(&path, gaussian(&mut rng, 400).into_iter().map(|v| v as f32 * 0.1).collect());
            records.push(SourceRecord { path, category: c, sample_rate_hz: rate, num_samples: 400, split: Split::Train });
        }
    }
    (CorpusManifest::new(records).unwrap(), provider)
}

fn ks_uniform(mut x: Vec<f64>, lo: f64, hi: f64) -> f64 {
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let f = (v - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn c6_sampler() -> Check {
    let cfg = PromptSamplerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut hist = BTreeMap::new();
    for i in 0..10_000 {
        let p = sample_prompt_set(&cfg, &mut rng);
        check_prompts(p.entries()).map_err(|e| format!("draw {i}: {e}"))?;
        let repeated = p.entries().iter().find(|c| !matches!(c, Speech | Sfx) && p.count(**c) > 1);
        ensure(repeated.is_none(), || format!("draw {i} repeats {}", repeated.unwrap()))?;
        *hist.entry(p.len()).or_insert(0usize) += 1;
    }
    let support: Vec<usize> = hist.keys().copied().collect();
    ensure(support == [2, 3, 4], || format!("N support {support:?}"))?;

    let rate = 8000;
    let gcfg = PromptSamplerConfig { sample_rate_hz: rate, ..Default::default() };
    let (manifest, provider) = gain_corpus(rate);
    let engine = MixtureEngine::new(&manifest, &provider, &gcfg, Split::Train).map_err(|e| e.to_string())?;
    let mut worst = (0.0f64, Speech);
    let per_category = 20_000;
    for c in PromptCategory::ALL {
        let [lo, hi] = gcfg.gain_ranges_db.range(c);
        let reps = if matches!(c, Speech | Sfx) { 2 } else { 1 };
        let prompts = PromptSet::new(vec![c; reps]).unwrap();
        let mut gains = Vec::with_capacity(per_category);
        while gains.len() < per_category {
            gains.extend(engine.synthesize(&prompts, 0.005, &mut rng).map_err(|e| e.to_string())?.gains_db);
        }
        ensure(gains.iter().all(|g| (lo..=hi).contains(g)), || format!("{c} gain outside [{lo}, {hi}]"))?;
        let ks = ks_uniform(gains, lo, hi);
        if ks > worst.0 {
            worst = (ks, c);
        }
    }
    ensure(worst.0 < GAIN_KS_MAX, || format!("{} gains KS {:.4}", worst.1, worst.0))?;
    Ok(format!(
        "10000 draws valid, N counts {:?}; worst gain KS {:.4} ({}) over {per_category} gains per category",
        hist, worst.0, worst.1
    ))
}

fn c7_dropout() -> Check {
    let cfg = PromptSamplerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let steps = 100_000;
    let mut triggered = 0usize;
    for i in 0..steps {
        let prompts = sample_prompt_set(&cfg, &mut rng);
        let n = prompts.len();
        let ex = TrainExample::new(vec![0.0f32; 1], vec![vec![0.0f32; 1]; n], prompts.clone()).unwrap();
        let (out, draw) = apply_prompt_dropout(ex, 0.25, &mut rng);
        let Some(d) = draw else {
            ensure(out.prompts == prompts, || format!("step {i}: prompts changed without a trigger"))?;
            continue;
        };
        triggered += 1;
        ensure((1..n).contains(&d.requested), || format!("step {i}: M = {} for N = {n}", d.requested))?;
        for &r in &d.removed {
            ensure(prompts.count(prompts.entries()[r]) == 1, || format!("step {i}: removed a repeated {}", prompts.entries()[r]))?;
        }
        ensure(out.prompts.len() == n - d.removed.len(), || format!("step {i}: length"))?;
    }
    let rate = triggered as f64 / steps as f64;
    ensure((TRIGGER_RATE.0..=TRIGGER_RATE.1).contains(&rate), || format!("trigger rate {rate}"))?;
    Ok(format!("trigger rate {rate:.4} over {steps} steps; M in [1, N) and no repeated-category removals"))
}

fn c8_variable_arity() -> Check {
    let model = Tuss::<f32>::new(ModelConfig::medium(), &mut ChaCha8Rng::seed_from_u64(8)).map_err(|e| e.to_string())?;
    let len = 12_000;
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let x: Vec<f32> = gaussian(&mut rng, len).into_iter().map(|v| v as f32 * 0.1).collect();
    let mut lists: Vec<(String, PromptSet)> = vec![
        ("speech".into(), PromptSet::new(vec![Speech]).unwrap()),
        ("speech x3".into(), PromptSet::new(vec![Speech; 3]).unwrap()),
        ("speech,sfx,drums,bass,vocals".into(), PromptSet::new(vec![Speech, Sfx, Drums, Bass, Vocals]).unwrap()),
    ];
    for p in TaskPreset::ALL {
        let ns: &[usize] = if p.needs_count() { &[2, 6] } else { &[0] };
        for &n in ns {
            let set = p.expand(Some(n), p == TaskPreset::NoisySs).map_err(|e| e.to_string())?;
            lists.push((format!("{p} n={n}"), set));
        }
    }
    let mut arities = std::collections::BTreeSet::new();
    for (name, set) in &lists {
        let outs = model.forward(&x, set.entries()).map_err(|e| format!("{name}: {e}"))?;
        ensure(outs.len() == set.len(), || format!("{name}: {} outputs", outs.len()))?;
        ensure(outs.iter().all(|o| o.len() == len && o.iter().all(|v| v.is_finite())), || format!("{name}: bad output"))?;
        arities.insert(set.len());
    }
    let want: std::collections::BTreeSet<usize> = (1..=6).collect();
    ensure(arities.is_superset(&want), || format!("arities covered {arities:?}"))?;
    Ok(format!("{} prompt lists, N in {arities:?}, one medium model", lists.len()))
}

fn max_abs(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn c9_equivariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f32> = gaussian(&mut rng, 400).into_iter().map(|v| v as f32).collect();
    let plain = Tuss::<f32>::new(micro_config(false), &mut rng).map_err(|e| e.to_string())?;
    let order = [Speech, SfxMix, Drums];
    let perm = [2usize, 0, 1];
    let permuted: Vec<PromptCategory> = perm.iter().map(|&i| order[i]).collect();
    let a = plain.forward(&x, &order).map_err(|e| e.to_string())?;
    let b = plain.forward(&x, &permuted).map_err(|e| e.to_string())?;
    let dev = perm.iter().enumerate().map(|(j, &i)| max_abs(&b[j], &a[i])).fold(0.0, f32::max);
    ensure(dev <= PERMUTATION_TOL, || format!("permuted outputs differ by {dev:.3e}"))?;
    let pe = Tuss::<f32>::new(micro_config(true), &mut rng).map_err(|e| e.to_string())?;
    let s = pe.forward(&x, &[Speech, Speech]).map_err(|e| e.to_string())?;
    let div = max_abs(&s[0], &s[1]);
    ensure(div > DIVERGENCE_MIN, || format!("speech outputs differ by only {div:.3e}"))?;
    Ok(format!("without positional encoding permutation error {dev:.1e}; with it [speech, speech] differ by {div:.2e}"))
}

/// Eight fixed two-source mixtures at 8 kHz: a harmonic tone complex
/// (speech) and band-limited noise (sfx-mix), equal level.
fn overfit_set() -> Vec<TrainExample<f32>> {
    let rate = 8000.0;
    let len = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    (0..8)
        .map(|_| {
            let f0 = rng.gen_range(110.0..320.0);
            let amps: Vec<f64> = (0..6).map(|_| rng.gen_range(0.2..1.0)).collect();
            let tone: Vec<f64> = (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    amps.iter().enumerate().map(|(h, a)| a * (2.0 * PI * f0 * (h + 1) as f64 * t).sin()).sum()
                })
                .collect();
            // Band-pass white noise with a spectral mask.
            let lo = rng.gen_range(300.0..2000.0);
            let hi = lo + rng.gen_range(600.0..1500.0);
            let white = gaussian(&mut rng, len);
            let noise = band_limit(&white, lo / rate, hi / rate);
            let norm = |v: Vec<f64>| {
                let r = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
                v.into_iter().map(|x| (0.1 * x / r) as f32).collect::<Vec<f32>>()
            };
            let (s, n) = (norm(tone), norm(noise));
            let mix = s.iter().zip(&n).map(|(a, b)| a + b).collect();
            TrainExample::new(mix, vec![s, n], PromptSet::new(vec![Speech, SfxMix]).unwrap()).unwrap()
        })
        .collect()
}

/// Keeps DFT bins between the normalized frequencies `lo` and `hi`.
fn band_limit(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    let kmin = (lo * n as f64).ceil() as usize;
    let kmax = (hi * n as f64).floor() as usize;
    for k in kmin..=kmax.min(n / 2 - 1) {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * (k * i) as f64 / n as f64;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        for (i, o) in out.iter_mut().enumerate() {
            let ph = 2.0 * PI * (k * i) as f64 / n as f64;
            *o += 2.0 * (re * ph.cos() - im * ph.sin()) / n as f64;
        }
    }
    out
}

fn smoke_config() -> ModelConfig {
    let stft = StftConfig::new(256, 128);
    ModelConfig {
        sample_rate_hz: 8000,
        stft,
        band_spec: BandSplitSpec::uniform(stft.num_bins(), 8),
        embed_dim: 32,
        num_heads: 2,
        norm_groups: 4,
        conv_kernel: 4,
        conv_stride: 1,
        cross: StackConfig { blocks: 2, ffn_hidden: 96, attn_hidden: 32 },
        tse: StackConfig { blocks: 1, ffn_hidden: 96, attn_hidden: 32 },
        positional_encoding: true,
        rope_base: 10_000.0,
        norm_eps: 1e-5,
        prompt_init_std: 0.02,
    }
}

fn smoke_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        steps_per_epoch: OVERFIT_STEPS,
        batch_size: 8,
        peak_lr: 2e-3,
        warmup_steps: 100,
        constant_epochs: 1,
        ..Default::default()
    }
}

fn mean_si_snr(model: &Tuss<f32>, set: &[TrainExample<f32>]) -> f64 {
    let mut acc = Vec::new();
    for ex in set {
        let outs = model.forward(&ex.mixture, ex.prompts.entries()).unwrap();
        for (o, t) in outs.iter().zip(&ex.targets) {
            acc.push(si_snr_db(t, o).unwrap());
        }
    }
    acc.iter().sum::<f64>() / acc.len() as f64
}

/// Trains on the fixed batch; `stop` is checked every 50 steps.
fn overfit<M: Trainable<f32> + Send + Sync>(model: &mut M, set: &[TrainExample<f32>], stop: impl Fn(&M) -> bool) -> Result<usize, String> {
    let cfg = smoke_train_config();
    let mut opt = AdamW::new(model.num_parameters(), &cfg);
    let mut state = ScheduleState::new(&cfg);
    for step in 0..OVERFIT_STEPS {
        if step % 50 == 0 && step > 0 && stop(model) {
            return Ok(step);
        }
        let (losses, grads) = trainer::parallel_gradients(model, set, &cfg).map_err(|e| e.to_string())?;
        apply_update(model, &grads, &losses, &mut opt, &mut state, &cfg).map_err(|e| e.to_string())?;
    }
    Ok(OVERFIT_STEPS)
}

fn c10_overfit() -> Check {
    let set = overfit_set();
    let mut model = Tuss::<f32>::new(smoke_config(), &mut ChaCha8Rng::seed_from_u64(10)).map_err(|e| e.to_string())?;
    let init = mean_si_snr(&model, &set);
    ensure(init <= INIT_CEILING_DB, || format!("SI-SNR at initialization {init:.2} dB"))?;
    let steps = overfit(&mut model, &set, |m| mean_si_snr(m, &set) >= OVERFIT_TARGET_DB + 1.0)?;
    let fin = mean_si_snr(&model, &set);
    ensure(fin >= OVERFIT_TARGET_DB, || format!("SI-SNR {fin:.2} dB after {steps} steps (init {init:.2} dB)"))?;
    Ok(format!("mean SI-SNR {init:.2} dB at init, {fin:.2} dB after {steps} steps"))
}

fn head_powers(model: &Baseline<f32>, set: &[TrainExample<f32>]) -> (f64, f64) {
    let (mut active, mut inactive) = ((0.0, 0usize), (0.0, 0usize));
    for ex in set {
        let outs = model.forward(&ex.mixture).unwrap();
        let (loss, _) = baseline_pit_loss_grad(&ex.targets, &outs, &ex.mixture, ZeroAwareConfig::default()).unwrap();
        for (o, &r) in outs.iter().zip(&loss.permutation) {
            let p = o.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / o.len() as f64;
            let slot = if r < ex.targets.len() { &mut active } else { &mut inactive };
            slot.0 += p;
            slot.1 += 1;
        }
    }
    (active.0 / active.1 as f64, inactive.0 / inactive.1 as f64)
}

fn c11_baseline_zeros() -> Check {
    let set = overfit_set();
    let mut model = Baseline::<f32>::new(smoke_config(), &mut ChaCha8Rng::seed_from_u64(11)).map_err(|e| e.to_string())?;
    let margin = |m: &Baseline<f32>| {
        let (a, i) = head_powers(m, &set);
        10.0 * (a / i.max(1e-30)).log10()
    };
    let init = margin(&model);
    let steps = overfit(&mut model, &set, |m| margin(m) >= INACTIVE_MARGIN_DB + 3.0)?;
    let fin = margin(&model);
    ensure(fin >= INACTIVE_MARGIN_DB, || format!("inactive heads {fin:.2} dB below active after {steps} steps (init {init:.2})"))?;
    Ok(format!("inactive heads {fin:.2} dB below active after {steps} steps ({init:.2} dB at init)"))
}

/// Steps through a schedule with a real micro model and optimizer.
struct ScheduleRun {
    model: Tuss<f32>,
    grads: Tuss<f32>,
    opt: AdamW<f32>,
    state: ScheduleState,
    history: Vec<f64>,
}

impl ScheduleRun {
    fn epoch(&mut self, cfg: &TrainConfig, val: f64, trace: &mut Vec<(u64, usize, f64)>) {
        let losses = [tuss_core::train::ExampleLoss { total: 1.0, per_category: Vec::new() }];
        for _ in 0..cfg.steps_per_epoch {
            let r = apply_update(&mut self.model, &self.grads, &losses, &mut self.opt, &mut self.state, cfg).unwrap();
            trace.push((r.step, self.state.epoch, r.lr));
        }
        self.history.push(val);
        self.state.end_epoch(val, cfg);
    }
}

fn c12_schedule() -> Check {
    let cfg = TrainConfig::default();
    // Improves for 20 epochs, then flat: every plateau would decay if the
    // constant phase did not hold it back.
    let val = |e: usize| if e < 20 { 1.0 / (e + 1) as f64 } else { 1.0 / 20.0 };
    let model = Tuss::<f32>::new(micro_config(true), &mut ChaCha8Rng::seed_from_u64(12)).map_err(|e| e.to_string())?;
    let new_run = |model: Tuss<f32>| ScheduleRun {
        grads: model.zeros_like(),
        opt: AdamW::new(model.num_parameters(), &cfg),
        state: ScheduleState::new(&cfg),
        model,
        history: Vec::new(),
    };
    let mut full = new_run(model.clone());
    let mut trace = Vec::new();
    for e in 0..cfg.epochs {
        full.epoch(&cfg, val(e), &mut trace);
    }

    // Closed form with decays counted independently.
    let mut decays_before = vec![0u32; cfg.epochs + 1];
    let (mut best, mut since, mut d) = (f64::INFINITY, 0usize, 0u32);
    for e in 0..cfg.epochs {
        let v = val(e);
        if v < best {
            best = v;
            since = 0;
        } else {
            since += 1;
        }
        if e + 1 >= 75 && since >= 5 {
            d += 1;
            since = 0;
        }
        decays_before[e + 1] = d;
    }
    for &(step, epoch, lr) in &trace {
        let want = if step < 10_000 { 1e-3 * (step as f64 / 10_000.0) } else { 1e-3 * 0.5f64.powi(decays_before[epoch] as i32) };
        ensure(lr == want, || format!("step {step}: lr {lr} vs closed form {want}"))?;
        ensure(lr == lr_at(step, epoch, decays_before[epoch], &cfg), || format!("step {step}: lr_at disagrees"))?;
    }
    ensure(trace[5000].2 == 5e-4, || format!("lr at step 5000 is {}", trace[5000].2))?;
    let steps = cfg.steps_per_epoch as u64;
    let through_75 = trace.iter().filter(|t| t.0 >= 10_000 && t.0 < 75 * steps);
    ensure(through_75.clone().all(|t| t.2 == 1e-3), || "lr not constant through epoch 75".into())?;
    let third = decays_before.iter().position(|&d| d == 3).unwrap();
    let at_third = trace[third * cfg.steps_per_epoch].2;
    ensure(at_third == 1.25e-4, || format!("lr after three decays {at_third}"))?;

    // Stop after epoch 80, round-trip through a checkpoint, and finish.
    let cut = 80;
    let mut part = new_run(model);
    let mut trace2 = Vec::new();
    for e in 0..cut {
        part.epoch(&cfg, val(e), &mut trace2);
    }
    let state = TrainingState {
        config: cfg.clone(),
        schedule: part.state.clone(),
        optimizer: OptimizerState {
            beta1: part.opt.beta1,
            beta2: part.opt.beta2,
            eps: part.opt.eps,
            weight_decay: part.opt.weight_decay,
            step: part.opt.step,
        },
        stage: trainer::FIT.into(),
        validation_history: part.history.clone(),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("cut.ckpt");
    Checkpoint::from_model(&part.model, Some((state, &part.opt))).save(&path).map_err(|e| e.to_string())?;
    let ck = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let model: Tuss<f32> = ck.model(&path).map_err(|e| e.to_string())?;
    let t = ck.header.training.clone().unwrap();
    let mut resumed = ScheduleRun {
        grads: model.zeros_like(),
        opt: ck.optimizer(&path).map_err(|e| e.to_string())?,
        state: t.schedule,
        model,
        history: t.validation_history,
    };
    for e in cut..t.config.epochs {
        resumed.epoch(&t.config, val(e), &mut trace2);
    }
    let bits = |v: &[(u64, usize, f64)]| v.iter().map(|t| (t.0, t.1, t.2.to_bits())).collect::<Vec<_>>();
    ensure(bits(&trace2) == bits(&trace), || "resumed trace differs".into())?;
    ensure(resumed.state == full.state, || "resumed schedule state differs".into())?;
    let same = resumed.model.flatten().iter().zip(full.model.flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same, || "resumed parameters differ".into())?;
    Ok(format!(
        "{} steps match the closed form; {} decays, first after epoch {}; resume after epoch {cut} bit-exact",
        trace.len(),
        full.state.decay_applied_count,
        decays_before.iter().position(|&d| d == 1).unwrap()
    ))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Check); 12] = [
        (1, "parameter counts", c1_parameter_counts),
        (2, "stft round trip", c2_stft_round_trip),
        (3, "gradient check", c3_gradient_check),
        (4, "pit oracle", c4_pit_oracle),
        (5, "metric identities", c5_metric_identities),
        (6, "sampler soundness", c6_sampler),
        (7, "prompt dropout statistics", c7_dropout),
        (8, "variable arity forward", c8_variable_arity),
        (9, "equivariance and divergence", c9_equivariance),
        (10, "overfit smoke", c10_overfit),
        (11, "baseline zero outputs", c11_baseline_zeros),
        (12, "schedule trace and resume", c12_schedule),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
