#![allow(dead_code)]

use std::f32::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tuss::corpus::write_manifest;
use tuss::wav::write_wav;
use tuss_core::dsp::{AudioBuffer, BandSplitSpec, StftConfig};
use tuss_core::mixture::{SourceRecord, Split};
use tuss_core::{ModelConfig, PromptCategory, StackConfig};

pub const RATE: u32 = 8000;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        sample_rate_hz: RATE,
        stft: StftConfig::new(64, 32),
        band_spec: BandSplitSpec::new(vec![4, 8, 21]).unwrap(),
        embed_dim: 8,
        num_heads: 2,
        norm_groups: 2,
        conv_kernel: 3,
        conv_stride: 1,
        cross: StackConfig { blocks: 1, ffn_hidden: 8, attn_hidden: 4 },
        tse: StackConfig { blocks: 1, ffn_hidden: 8, attn_hidden: 4 },
        positional_encoding: true,
        rope_base: 10_000.0,
        norm_eps: 1e-5,
        prompt_init_std: 0.02,
    }
}

/// Harmonic tone with a slow pitch glide.
pub fn tone(len: usize, rate: u32, f0: f32) -> Vec<f32> {
    (0..len)
        .map(|i| {
            let t = i as f32 / rate as f32;
            let f = f0 * (1.0 + 0.05 * (2.0 * PI * 0.7 * t).sin());
            (1..=4).map(|h| (2.0 * PI * f * h as f32 * t).sin() / h as f32).sum::<f32>() * 0.3
        })
        .collect()
}

/// White noise through a one-pole low-pass.
pub fn noise(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = 0.0f32;
    (0..len)
        .map(|_| {
            y = 0.7 * y + 0.3 * rng.gen_range(-1.0f32..1.0);
            y
        })
        .collect()
}

/// Speech and sfx sources in the train and valid splits, plus the manifest.
pub fn write_corpus(dir: &Path) -> PathBuf {
    let len = RATE as usize;
    let mut records = Vec::new();
    for (split, n) in [(Split::Train, 4), (Split::Valid, 2)] {
        for i in 0..n {
            let k = records.len();
            for (cat, samples) in [
                (PromptCategory::Speech, tone(len, RATE, 140.0 + 30.0 * k as f32)),
                (PromptCategory::Sfx, noise(len, k as u64)),
            ] {
                let name = format!("{}_{}_{i}.wav", split.name(), cat.name());
                write_wav(dir.join(&name), &AudioBuffer { samples, sample_rate_hz: RATE }).unwrap();
                records.push(SourceRecord {
                    path: name,
                    category: cat,
                    sample_rate_hz: RATE,
                    num_samples: len,
                    split,
                });
            }
        }
    }
    let manifest = dir.join("corpus.jsonl");
    write_manifest(&manifest, &records).unwrap();
    manifest
}

/// A run config over the corpus in `dir`; `extra` is appended verbatim.
pub fn write_run_config(dir: &Path, extra: &str) -> PathBuf {
    let mut model = toml::Table::new();
    model.insert("config".into(), toml::Value::try_from(tiny_config()).unwrap());
    let mut root = toml::Table::new();
    root.insert("model".into(), toml::Value::Table(model));
    let model = toml::to_string(&root).unwrap();
    let text = format!(
        "[data]\nmanifest = \"corpus.jsonl\"\n\n[data.sampler]\nn_range = [2, 3]\ncategories = [\"speech\", \"sfx\", \"sfx-mix\"]\nsample_rate_hz = {RATE}\n\n\
[train]\nepochs = 2\nsteps_per_epoch = 3\nbatch_size = 2\nsegment_seconds = 0.25\nwarmup_steps = 2\nconstant_epochs = 1\n\
validation_mixtures = 3\n\n[output]\ndir = \"run\"\nlog_every = 1\n\n{extra}\n{model}"
    );
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}
