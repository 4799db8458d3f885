//! Macaron-style sub-blocks and the two-axis block built from them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::attention::{Attention, AttentionCache};
use super::ffn::{ConvFfn, FfnCache, SeqLayout};
use super::layers::{add_into, add_scaled_into, ensure_finite, GroupRmsNorm};
use super::param::impl_parameters;
use crate::error::Result;
use crate::real::Real;

/// Hyper-parameters of one sub-block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubBlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub groups: usize,
    pub ffn_hidden: usize,
    pub kernel: usize,
    pub rope: bool,
    pub rope_base: f64,
    pub eps: f64,
}

/// `x += FFN/2`, `x += MHSA`, `x += FFN/2`, each behind a group RMS norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBlock<T> {
    pub norm1: GroupRmsNorm<T>,
    pub ffn1: ConvFfn<T>,
    pub norm_attn: GroupRmsNorm<T>,
    pub attn: Attention<T>,
    pub norm2: GroupRmsNorm<T>,
    pub ffn2: ConvFfn<T>,
}

impl_parameters!(SubBlock { norm1, ffn1, norm_attn, attn, norm2, ffn2 });

#[derive(Debug, Clone)]
pub struct SubBlockCache<T> {
    x: Vec<T>,
    n1: Vec<T>,
    inv1: Vec<T>,
    c1: FfnCache<T>,
    x1: Vec<T>,
    na: Vec<T>,
    inva: Vec<T>,
    ca: AttentionCache<T>,
    x2: Vec<T>,
    n2: Vec<T>,
    inv2: Vec<T>,
    c2: FfnCache<T>,
}

impl<T: Real> SubBlock<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &SubBlockConfig, rng: &mut R) -> Self {
        let norm = || GroupRmsNorm::new(cfg.dim, cfg.groups, true, cfg.eps);
        Self {
            norm1: norm(),
            ffn1: ConvFfn::new(cfg.dim, cfg.ffn_hidden, cfg.kernel, rng),
            norm_attn: norm(),
            attn: Attention::new(cfg.dim, cfg.heads, cfg.head_dim, cfg.rope, cfg.rope_base, rng),
            norm2: norm(),
            ffn2: ConvFfn::new(cfg.dim, cfg.ffn_hidden, cfg.kernel, rng),
        }
    }

    pub fn forward(&self, x: &[T], layout: SeqLayout, stage: &str) -> Result<(Vec<T>, SubBlockCache<T>)> {
        let rows = layout.rows();
        let half = T::lit(0.5);

        let (n1, inv1) = self.norm1.forward(x, rows);
        let (f1, c1) = self.ffn1.forward(&n1, layout);
        let mut x1 = x.to_vec();
        add_scaled_into(&mut x1, &f1, half);
        ensure_finite(&x1, || format!("{stage}.ffn1"))?;

        let (na, inva) = self.norm_attn.forward(&x1, rows);
        let (a, ca) = self.attn.forward(&na, layout);
        let mut x2 = x1.clone();
        add_into(&mut x2, &a);
        ensure_finite(&x2, || format!("{stage}.attn"))?;

        let (n2, inv2) = self.norm2.forward(&x2, rows);
        let (f2, c2) = self.ffn2.forward(&n2, layout);
        let mut y = x2.clone();
        add_scaled_into(&mut y, &f2, half);
        ensure_finite(&y, || format!("{stage}.ffn2"))?;

        let cache = SubBlockCache { x: x.to_vec(), n1, inv1, c1, x1, na, inva, ca, x2, n2, inv2, c2 };
        Ok((y, cache))
    }

    /// Returns the input gradient; parameter gradients accumulate into `grad`.
    pub fn backward(&self, cache: &SubBlockCache<T>, dy: &[T], layout: SeqLayout, grad: &mut Self) -> Vec<T> {
        let rows = layout.rows();
        let half = T::lit(0.5);
        let halved: Vec<T> = dy.iter().map(|v| *v * half).collect();

        let mut dx2 = dy.to_vec();
        let mut dn2 = vec![T::zero(); dy.len()];
        self.ffn2.backward(&cache.n2, &cache.c2, &halved, layout, &mut grad.ffn2, &mut dn2);
        self.norm2.backward(&cache.x2, &cache.inv2, &dn2, rows, &mut grad.norm2, &mut dx2);

        let mut dx1 = dx2.clone();
        let mut dna = vec![T::zero(); dy.len()];
        self.attn.backward(&cache.na, &cache.ca, &dx2, layout, &mut grad.attn, &mut dna);
        self.norm_attn.backward(&cache.x1, &cache.inva, &dna, rows, &mut grad.norm_attn, &mut dx1);

        let mut dx = dx1.clone();
        let halved: Vec<T> = dx1.iter().map(|v| *v * half).collect();
        let mut dn1 = vec![T::zero(); dy.len()];
        self.ffn1.backward(&cache.n1, &cache.c1, &halved, layout, &mut grad.ffn1, &mut dn1);
        self.norm1.backward(&cache.x, &cache.inv1, &dn1, rows, &mut grad.norm1, &mut dx);
        dx
    }
}

/// A frequency-axis sub-block followed by a temporal one. Rows of the
/// feature buffer are `s * bands + k` with `dim` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LocoformerBlock<T> {
    pub freq: SubBlock<T>,
    pub time: SubBlock<T>,
}

impl_parameters!(LocoformerBlock { freq, time });

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    freq: SubBlockCache<T>,
    time: SubBlockCache<T>,
}

impl<T: Real> LocoformerBlock<T> {
    /// `freq` gets no positional encoding; `time` uses `time_cfg.rope`.
    pub fn new<R: Rng + ?Sized>(freq_cfg: &SubBlockConfig, time_cfg: &SubBlockConfig, rng: &mut R) -> Self {
        Self { freq: SubBlock::new(freq_cfg, rng), time: SubBlock::new(time_cfg, rng) }
    }

    pub fn forward(&self, x: &[T], seq: usize, bands: usize, stage: &str) -> Result<(Vec<T>, BlockCache<T>)> {
        let (h, freq) = self.freq.forward(x, SeqLayout::over_bands(seq, bands), &join(stage, "freq"))?;
        let (y, time) = self.time.forward(&h, SeqLayout::over_time(seq, bands), &join(stage, "time"))?;
        Ok((y, BlockCache { freq, time }))
    }

    pub fn backward(&self, cache: &BlockCache<T>, dy: &[T], seq: usize, bands: usize, grad: &mut Self) -> Vec<T> {
        let dh = self.time.backward(&cache.time, dy, SeqLayout::over_time(seq, bands), &mut grad.time);
        self.freq.backward(&cache.freq, &dh, SeqLayout::over_bands(seq, bands), &mut grad.freq)
    }
}

fn join(a: &str, b: &str) -> String {
    format!("{a}.{b}")
}
