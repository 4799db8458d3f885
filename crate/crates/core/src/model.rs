//! The prompt-conditioned separator and the fixed four-output baseline.
//!
//! Data flow for [`Tuss`]: STFT, band-split encoding to a `T x K x D` grid,
//! prompt rows prepended to form `(N + T) x K x D`, cross-prompt blocks,
//! then for every prompt `n` the mixture rows are multiplied by that prompt's
//! row (broadcast over frames), passed through the shared extraction blocks
//! and decoded to a complex mask applied to the mixture spectrogram.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{resample, AudioBuffer, BandSplitSpec, Spectrogram, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::nn::bandsplit::{DecoderCache, EncoderCache};
use crate::nn::locoformer::BlockCache;
use crate::nn::param::{join, Param, Parameters};
use crate::nn::{BandDecoder, BandEncoder, LocoformerBlock, SubBlockConfig};
use crate::prompt::{PromptCategory, PromptSet};
use crate::real::Real;

/// Widths of one block stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub blocks: usize,
    /// Hidden width `C` of the gated feed-forward layers.
    pub ffn_hidden: usize,
    /// Per-head attention width `E`.
    pub attn_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub sample_rate_hz: u32,
    pub stft: StftConfig,
    pub band_spec: BandSplitSpec,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub norm_groups: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub cross: StackConfig,
    pub tse: StackConfig,
    pub positional_encoding: bool,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    #[serde(default = "default_prompt_std")]
    pub prompt_init_std: f64,
}

fn default_rope_base() -> f64 {
    10_000.0
}
fn default_eps() -> f64 {
    1e-5
}
fn default_prompt_std() -> f64 {
    0.02
}

impl ModelConfig {
    fn full_band(embed_dim: usize, num_heads: usize, cross: StackConfig, tse: StackConfig) -> Self {
        let stft = StftConfig::default();
        Self {
            sample_rate_hz: 48_000,
            stft,
            band_spec: BandSplitSpec::default_for(stft.num_bins()),
            embed_dim,
            num_heads,
            norm_groups: 8,
            conv_kernel: 4,
            conv_stride: 1,
            cross,
            tse,
            positional_encoding: true,
            rope_base: default_rope_base(),
            norm_eps: default_eps(),
            prompt_init_std: default_prompt_std(),
        }
    }

    pub fn medium() -> Self {
        Self::full_band(
            64,
            4,
            StackConfig { blocks: 4, ffn_hidden: 384, attn_hidden: 256 },
            StackConfig { blocks: 2, ffn_hidden: 384, attn_hidden: 96 },
        )
    }

    pub fn large() -> Self {
        Self::full_band(
            128,
            8,
            StackConfig { blocks: 6, ffn_hidden: 384, attn_hidden: 256 },
            StackConfig { blocks: 3, ffn_hidden: 256, attn_hidden: 192 },
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "medium" => Some(Self::medium()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn num_bands(&self) -> usize {
        self.band_spec.num_bands()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let d = self.embed_dim;
        for (name, v) in [
            ("embed_dim", d),
            ("num_heads", self.num_heads),
            ("norm_groups", self.norm_groups),
            ("conv_kernel", self.conv_kernel),
            ("cross.blocks", self.cross.blocks),
            ("cross.ffn_hidden", self.cross.ffn_hidden),
            ("cross.attn_hidden", self.cross.attn_hidden),
            ("tse.blocks", self.tse.blocks),
            ("tse.ffn_hidden", self.tse.ffn_hidden),
            ("tse.attn_hidden", self.tse.attn_hidden),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.sample_rate_hz == 0 {
            problems.push("sample_rate_hz must be positive".into());
        }
        if self.num_heads > 0 && !d.is_multiple_of(self.num_heads) {
            problems.push(format!("embed_dim {d} is not divisible by num_heads {}", self.num_heads));
        }
        if self.norm_groups > 0 && !d.is_multiple_of(self.norm_groups) {
            problems.push(format!("embed_dim {d} is not divisible by norm_groups {}", self.norm_groups));
        }
        if self.conv_stride != 1 {
            problems.push(format!("conv_stride {} is unsupported (only 1)", self.conv_stride));
        }
        if self.positional_encoding && (!self.cross.attn_hidden.is_multiple_of(2) || !self.tse.attn_hidden.is_multiple_of(2)) {
            problems.push("rotary encoding needs even attn_hidden".into());
        }
        if let Err(e) = self.stft.validate() {
            problems.push(format!("{e}"));
        }
        if self.band_spec.num_bins() != self.stft.num_bins() {
            problems.push(format!(
                "band widths sum to {} but the STFT has {} bins",
                self.band_spec.num_bins(),
                self.stft.num_bins()
            ));
        }
        if !(self.norm_eps > 0.0) {
            problems.push("norm_eps must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    fn sub_config(&self, stack: &StackConfig, kernel: usize, rope: bool) -> SubBlockConfig {
        SubBlockConfig {
            dim: self.embed_dim,
            heads: self.num_heads,
            head_dim: stack.attn_hidden,
            groups: self.norm_groups,
            ffn_hidden: stack.ffn_hidden,
            kernel,
            rope,
            rope_base: self.rope_base,
            eps: self.norm_eps,
        }
    }

    /// Cross-prompt blocks use a position-wise temporal feed-forward.
    fn cross_block<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> LocoformerBlock<T> {
        LocoformerBlock::new(
            &self.sub_config(&self.cross, self.conv_kernel, false),
            &self.sub_config(&self.cross, 1, self.positional_encoding),
            rng,
        )
    }

    fn tse_block<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> LocoformerBlock<T> {
        LocoformerBlock::new(
            &self.sub_config(&self.tse, self.conv_kernel, false),
            &self.sub_config(&self.tse, self.conv_kernel, self.positional_encoding),
            rng,
        )
    }
}

/// A `seq x bands x dim` grid with rows `s * bands + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    pub seq: usize,
    pub bands: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureGrid<T> {
    pub fn zeros(seq: usize, bands: usize, dim: usize) -> Self {
        Self { seq, bands, dim, data: vec![T::zero(); seq * bands * dim] }
    }

    pub fn at(&self, s: usize, k: usize) -> &[T] {
        let o = (s * self.bands + k) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn at_mut(&mut self, s: usize, k: usize) -> &mut [T] {
        let o = (s * self.bands + k) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    /// Rows `start..start + len` of the sequence axis.
    pub fn rows(&self, start: usize, len: usize) -> Self {
        let w = self.bands * self.dim;
        Self { seq: len, bands: self.bands, dim: self.dim, data: self.data[start * w..(start + len) * w].to_vec() }
    }
}

/// One learnable embedding per category.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTable<T> {
    pub embeddings: Vec<Param<T>>,
}

impl<T: Real> PromptTable<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, std: f64, rng: &mut R) -> Self {
        Self { embeddings: PromptCategory::ALL.iter().map(|_| Param::normal(&[dim], std, rng)).collect() }
    }

    pub fn get(&self, c: PromptCategory) -> &[T] {
        &self.embeddings[c.index()].data
    }
}

impl<T: Real> Parameters<T> for PromptTable<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        for (c, p) in PromptCategory::ALL.iter().zip(&self.embeddings) {
            f(join(prefix, c.name()), p);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (c, p) in PromptCategory::ALL.iter().zip(&mut self.embeddings) {
            f(join(prefix, c.name()), p);
        }
    }
}

fn run_blocks<T: Real>(
    blocks: &[LocoformerBlock<T>],
    mut x: Vec<T>,
    seq: usize,
    bands: usize,
    stage: &str,
    keep: bool,
) -> Result<(Vec<T>, Vec<BlockCache<T>>)> {
    let mut caches = Vec::new();
    for (i, b) in blocks.iter().enumerate() {
        let (y, c) = b.forward(&x, seq, bands, &format!("{stage}.{i}"))?;
        if keep {
            caches.push(c);
        }
        x = y;
    }
    Ok((x, caches))
}

fn backprop_blocks<T: Real>(
    blocks: &[LocoformerBlock<T>],
    caches: &[BlockCache<T>],
    mut dy: Vec<T>,
    seq: usize,
    bands: usize,
    grads: &mut [LocoformerBlock<T>],
) -> Vec<T> {
    for i in (0..blocks.len()).rev() {
        dy = blocks[i].backward(&caches[i], &dy, seq, bands, &mut grads[i]);
    }
    dy
}

/// Everything [`Tuss::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct TussCache<T> {
    len: usize,
    spec: Spectrogram<T>,
    prompts: Vec<PromptCategory>,
    enc: EncoderCache<T>,
    cross: Vec<BlockCache<T>>,
    processed: FeatureGrid<T>,
    tse: Vec<Vec<BlockCache<T>>>,
    dec: Vec<DecoderCache<T>>,
}

#[derive(Debug, Clone)]
pub struct Tuss<T> {
    config: ModelConfig,
    stft: Stft<T>,
    pub prompts: PromptTable<T>,
    pub encoder: BandEncoder<T>,
    pub cross: Vec<LocoformerBlock<T>>,
    pub tse: Vec<LocoformerBlock<T>>,
    pub decoder: BandDecoder<T>,
}

impl<T: Real> Parameters<T> for Tuss<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.prompts.visit(&join(prefix, "prompts"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.cross.visit(&join(prefix, "cross"), f);
        self.tse.visit(&join(prefix, "tse"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.prompts.visit_mut(&join(prefix, "prompts"), f);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.cross.visit_mut(&join(prefix, "cross"), f);
        self.tse.visit_mut(&join(prefix, "tse"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

impl<T: Real> Tuss<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let stft = Stft::new(config.stft)?;
        let prompts = PromptTable::new(d, config.prompt_init_std, rng);
        let encoder = BandEncoder::new(&config.band_spec, d, config.norm_eps, rng);
        let cross = (0..config.cross.blocks).map(|_| config.cross_block(rng)).collect();
        let tse = (0..config.tse.blocks).map(|_| config.tse_block(rng)).collect();
        let decoder = BandDecoder::new(&config.band_spec, d, config.norm_eps, rng);
        Ok(Self { config, stft, prompts, encoder, cross, tse, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stft(&self) -> &Stft<T> {
        &self.stft
    }

    pub fn count_parameters(&self) -> usize {
        self.num_parameters()
    }

    pub fn encode_bands(&self, spec: &Spectrogram<T>) -> Result<(FeatureGrid<T>, EncoderCache<T>)> {
        self.config.band_spec.check_bins(spec.num_bins)?;
        let (data, cache) = self.encoder.forward(spec);
        let grid = FeatureGrid { seq: spec.num_frames, bands: self.config.num_bands(), dim: self.config.embed_dim, data };
        Ok((grid, cache))
    }

    pub fn assemble_prompt_sequence(&self, prompts: &[PromptCategory], z: &FeatureGrid<T>) -> Result<FeatureGrid<T>> {
        if prompts.is_empty() {
            return Err(crate::PromptError::Empty.into());
        }
        let n = prompts.len();
        let mut out = FeatureGrid::zeros(n + z.seq, z.bands, z.dim);
        for (i, c) in prompts.iter().enumerate() {
            let e = self.prompts.get(*c);
            for k in 0..z.bands {
                out.at_mut(i, k).copy_from_slice(e);
            }
        }
        let w = z.bands * z.dim;
        out.data[n * w..].copy_from_slice(&z.data);
        Ok(out)
    }

    pub fn cross_prompt_forward(&self, assembled: &FeatureGrid<T>, keep: bool) -> Result<(FeatureGrid<T>, Vec<BlockCache<T>>)> {
        let (data, caches) = run_blocks(&self.cross, assembled.data.clone(), assembled.seq, assembled.bands, "cross", keep)?;
        Ok((FeatureGrid { seq: assembled.seq, bands: assembled.bands, dim: assembled.dim, data }, caches))
    }

    /// Conditions the mixture rows on prompt row `n` (broadcast over frames).
    pub fn condition(processed: &FeatureGrid<T>, num_prompts: usize, n: usize) -> FeatureGrid<T> {
        let t = processed.seq - num_prompts;
        let mut z = processed.rows(num_prompts, t);
        for s in 0..t {
            for k in 0..z.bands {
                let p = processed.at(n, k);
                for (v, pv) in z.at_mut(s, k).iter_mut().zip(p) {
                    *v *= *pv;
                }
            }
        }
        z
    }

    /// Splits, conditions and runs the shared extraction blocks per prompt.
    #[allow(clippy::type_complexity)]
    pub fn condition_and_extract(
        &self,
        processed: &FeatureGrid<T>,
        num_prompts: usize,
        keep: bool,
    ) -> Result<(Vec<FeatureGrid<T>>, Vec<Vec<BlockCache<T>>>)> {
        if num_prompts == 0 || num_prompts >= processed.seq {
            return Err(Error::Shape(format!(
                "{num_prompts} prompts do not fit a sequence of length {}",
                processed.seq
            )));
        }
        let mut outs = Vec::with_capacity(num_prompts);
        let mut caches = Vec::new();
        for n in 0..num_prompts {
            let z = Self::condition(processed, num_prompts, n);
            let (data, c) = run_blocks(&self.tse, z.data, z.seq, z.bands, &format!("tse[{n}]"), keep)?;
            outs.push(FeatureGrid { data, ..z });
            if keep {
                caches.push(c);
            }
        }
        Ok((outs, caches))
    }

    pub fn decode_bands(&self, extracted: &FeatureGrid<T>, mix: &Spectrogram<T>) -> Result<(Spectrogram<T>, DecoderCache<T>)> {
        self.config.band_spec.check_bins(mix.num_bins)?;
        if extracted.seq != mix.num_frames || extracted.bands != self.config.num_bands() || extracted.dim != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "feature grid {}x{}x{} does not match {} frames",
                extracted.seq, extracted.bands, extracted.dim, mix.num_frames
            )));
        }
        Ok(self.decoder.forward(&extracted.data, mix))
    }

    fn run(&self, mixture: &[T], prompts: &[PromptCategory], keep: bool) -> Result<(Vec<Vec<T>>, Option<TussCache<T>>)> {
        crate::prompt::check_prompts(prompts)?;
        let spec = self.stft.forward(mixture, self.config.sample_rate_hz)?;
        let (z, enc) = self.encode_bands(&spec)?;
        let assembled = self.assemble_prompt_sequence(prompts, &z)?;
        drop(z);
        let (processed, cross) = self.cross_prompt_forward(&assembled, keep)?;
        drop(assembled);
        let (extracted, tse) = self.condition_and_extract(&processed, prompts.len(), keep)?;
        let mut outputs = Vec::with_capacity(prompts.len());
        let mut dec = Vec::new();
        for e in &extracted {
            let (est, c) = self.decode_bands(e, &spec)?;
            outputs.push(self.stft.inverse(&est, mixture.len())?);
            if keep {
                dec.push(c);
            }
        }
        let cache = keep.then(|| TussCache {
            len: mixture.len(),
            spec,
            prompts: prompts.to_vec(),
            enc,
            cross,
            processed,
            tse,
            dec,
        });
        Ok((outputs, cache))
    }

    /// Forward pass at the model rate keeping everything needed for
    /// [`Tuss::backward`].
    pub fn forward_train(&self, mixture: &[T], prompts: &[PromptCategory]) -> Result<(Vec<Vec<T>>, TussCache<T>)> {
        let (out, cache) = self.run(mixture, prompts, true)?;
        Ok((out, cache.expect("cache kept")))
    }

    /// Forward pass at the model rate.
    pub fn forward(&self, mixture: &[T], prompts: &[PromptCategory]) -> Result<Vec<Vec<T>>> {
        Ok(self.run(mixture, prompts, false)?.0)
    }

    /// Separates `mixture` into one output per prompt, in prompt order, each
    /// with the input's length and sample rate.
    pub fn separate(&self, mixture: &AudioBuffer<T>, prompts: &PromptSet) -> Result<Vec<AudioBuffer<T>>> {
        if mixture.is_empty() {
            return Err(Error::EmptySignal);
        }
        let rate = self.config.sample_rate_hz;
        let input = resample(mixture, rate as i64)?;
        let outs = self.forward(&input.samples, prompts.entries())?;
        outs.into_iter()
            .map(|samples| {
                let buf = AudioBuffer { samples, sample_rate_hz: rate };
                let mut back = resample(&buf, mixture.sample_rate_hz as i64)?;
                back.samples.resize(mixture.len(), T::zero());
                Ok(back)
            })
            .collect()
    }

    /// Accumulates parameter gradients for upstream waveform gradients, one
    /// per output.
    pub fn backward(&self, cache: &TussCache<T>, grad_outputs: &[Vec<T>], grads: &mut Self) -> Result<()> {
        let n = cache.prompts.len();
        if grad_outputs.len() != n || grad_outputs.iter().any(|g| g.len() != cache.len) {
            return Err(Error::Shape("one waveform gradient per output is required".into()));
        }
        let frames = cache.spec.num_frames;
        let (k, d) = (self.config.num_bands(), self.config.embed_dim);
        let w = k * d;
        let mut dprocessed = vec![T::zero(); (n + frames) * w];
        for i in 0..n {
            let (d_re, d_im) = self.stft.inverse_adjoint(&grad_outputs[i], frames);
            let dgrid = self.decoder.backward(&cache.dec[i], &cache.spec, &d_re, &d_im, &mut grads.decoder);
            let dz = backprop_blocks(&self.tse, &cache.tse[i], dgrid, frames, k, &mut grads.tse);
            // z_n = z * p_n
            for s in 0..frames {
                for b in 0..k {
                    let p = cache.processed.at(i, b);
                    let z = cache.processed.at(n + s, b);
                    let g = &dz[(s * k + b) * d..(s * k + b + 1) * d];
                    let zo = ((n + s) * k + b) * d;
                    let po = (i * k + b) * d;
                    for c in 0..d {
                        dprocessed[zo + c] += g[c] * p[c];
                        dprocessed[po + c] += g[c] * z[c];
                    }
                }
            }
        }
        let dassembled = backprop_blocks(&self.cross, &cache.cross, dprocessed, n + frames, k, &mut grads.cross);
        for (i, c) in cache.prompts.iter().enumerate() {
            let g = &mut grads.prompts.embeddings[c.index()].data;
            for b in 0..k {
                let row = &dassembled[(i * k + b) * d..(i * k + b + 1) * d];
                for (gv, r) in g.iter_mut().zip(row) {
                    *gv += *r;
                }
            }
        }
        self.encoder.backward(&cache.spec, &cache.enc, &dassembled[n * w..], &mut grads.encoder);
        Ok(())
    }
}

/// Prompt-free separator with a fixed number of output heads.
#[derive(Debug, Clone)]
pub struct Baseline<T> {
    config: ModelConfig,
    stft: Stft<T>,
    pub encoder: BandEncoder<T>,
    pub blocks: Vec<LocoformerBlock<T>>,
    pub heads: Vec<BandDecoder<T>>,
}

pub const BASELINE_OUTPUTS: usize = 4;

impl<T: Real> Parameters<T> for Baseline<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.heads.visit(&join(prefix, "heads"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.heads.visit_mut(&join(prefix, "heads"), f);
    }
}

#[derive(Debug, Clone)]
pub struct BaselineCache<T> {
    len: usize,
    spec: Spectrogram<T>,
    enc: EncoderCache<T>,
    blocks: Vec<BlockCache<T>>,
    dec: Vec<DecoderCache<T>>,
}

impl<T: Real> Baseline<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let stft = Stft::new(config.stft)?;
        let encoder = BandEncoder::new(&config.band_spec, d, config.norm_eps, rng);
        let mut blocks: Vec<LocoformerBlock<T>> = (0..config.cross.blocks).map(|_| config.cross_block(rng)).collect();
        blocks.extend((0..config.tse.blocks).map(|_| config.tse_block(rng)));
        let heads = (0..BASELINE_OUTPUTS).map(|_| BandDecoder::new(&config.band_spec, d, config.norm_eps, rng)).collect();
        Ok(Self { config, stft, encoder, blocks, heads })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn run(&self, mixture: &[T], keep: bool) -> Result<(Vec<Vec<T>>, Option<BaselineCache<T>>)> {
        let spec = self.stft.forward(mixture, self.config.sample_rate_hz)?;
        let (k, frames) = (self.config.num_bands(), spec.num_frames);
        let (z, enc) = self.encoder.forward(&spec);
        let (h, blocks) = run_blocks(&self.blocks, z, frames, k, "blocks", keep)?;
        let mut outs = Vec::with_capacity(BASELINE_OUTPUTS);
        let mut dec = Vec::new();
        for head in &self.heads {
            let (est, c) = head.forward(&h, &spec);
            outs.push(self.stft.inverse(&est, mixture.len())?);
            if keep {
                dec.push(c);
            }
        }
        let cache = keep.then_some(BaselineCache { len: mixture.len(), spec, enc, blocks, dec });
        Ok((outs, cache))
    }

    pub fn forward(&self, mixture: &[T]) -> Result<Vec<Vec<T>>> {
        Ok(self.run(mixture, false)?.0)
    }

    pub fn forward_train(&self, mixture: &[T]) -> Result<(Vec<Vec<T>>, BaselineCache<T>)> {
        let (o, c) = self.run(mixture, true)?;
        Ok((o, c.expect("cache kept")))
    }

    /// Four outputs at the input's length and rate.
    pub fn separate(&self, mixture: &AudioBuffer<T>) -> Result<Vec<AudioBuffer<T>>> {
        if mixture.is_empty() {
            return Err(Error::EmptySignal);
        }
        let rate = self.config.sample_rate_hz;
        let input = resample(mixture, rate as i64)?;
        self.forward(&input.samples)?
            .into_iter()
            .map(|samples| {
                let mut back = resample(&AudioBuffer { samples, sample_rate_hz: rate }, mixture.sample_rate_hz as i64)?;
                back.samples.resize(mixture.len(), T::zero());
                Ok(back)
            })
            .collect()
    }

    pub fn backward(&self, cache: &BaselineCache<T>, grad_outputs: &[Vec<T>], grads: &mut Self) -> Result<()> {
        if grad_outputs.len() != BASELINE_OUTPUTS || grad_outputs.iter().any(|g| g.len() != cache.len) {
            return Err(Error::Shape("one waveform gradient per output is required".into()));
        }
        let (k, frames) = (self.config.num_bands(), cache.spec.num_frames);
        let mut dh = vec![T::zero(); frames * k * self.config.embed_dim];
        for (i, head) in self.heads.iter().enumerate() {
            let (d_re, d_im) = self.stft.inverse_adjoint(&grad_outputs[i], frames);
            let g = head.backward(&cache.dec[i], &cache.spec, &d_re, &d_im, &mut grads.heads[i]);
            crate::nn::layers::add_into(&mut dh, &g);
        }
        let dz = backprop_blocks(&self.blocks, &cache.blocks, dh, frames, k, &mut grads.blocks);
        self.encoder.backward(&cache.spec, &cache.enc, &dz, &mut grads.encoder);
        Ok(())
    }
}
