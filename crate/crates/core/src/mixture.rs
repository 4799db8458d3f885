//! On-the-fly mixture synthesis: prompt sampling, source drawing, rate
//! harmonization, RMS normalization, gains and submixes.
//!
//! Every random choice is recorded in a [`MixturePlan`], and
//! [`MixtureEngine::realize`] replays a plan without touching the RNG. That
//! is how fixed validation sets are built.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::audio::{db_to_gain, rms, AudioBuffer};
use crate::dsp::resample::{resample, resampled_len};
use crate::error::{Error, Result};
use crate::prompt::{check_prompts, PromptCategory, PromptSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "val" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

/// One audio file of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub path: String,
    pub category: PromptCategory,
    pub sample_rate_hz: u32,
    pub num_samples: usize,
    pub split: Split,
}

impl SourceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.path.is_empty() {
            return Err(Error::InvalidConfig("empty path".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidConfig(format!("{}: sample_rate_hz must be positive", self.path)));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidConfig(format!("{}: num_samples must be positive", self.path)));
        }
        Ok(())
    }
}

/// Validated records with a `(split, category)` index.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    records: Vec<SourceRecord>,
    index: Vec<Vec<usize>>,
    warnings: Vec<String>,
}

fn bucket(split: Split, category: PromptCategory) -> usize {
    split as usize * PromptCategory::ALL.len() + category.index()
}

impl CorpusManifest {
    /// Duplicate paths are accepted and reported through [`warnings`](Self::warnings).
    pub fn new(records: Vec<SourceRecord>) -> Result<Self> {
        let mut index = vec![Vec::new(); Split::ALL.len() * PromptCategory::ALL.len()];
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut warnings = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            rec.validate().map_err(|e| Error::InvalidConfig(format!("record {}: {e}", i + 1)))?;
            if let Some(first) = seen.insert(rec.path.as_str(), i) {
                warnings.push(format!("duplicate path {} (records {} and {})", rec.path, first + 1, i + 1));
            }
            index[bucket(rec.split, rec.category)].push(i);
        }
        Ok(Self { records, index, warnings })
    }

    pub fn records(&self) -> &[SourceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Indices into [`records`](Self::records).
    pub fn indices(&self, split: Split, category: PromptCategory) -> &[usize] {
        &self.index[bucket(split, category)]
    }

    pub fn count(&self, split: Split, category: PromptCategory) -> usize {
        self.indices(split, category).len()
    }

    /// Every category the sampler may emit must be drawable from `split`,
    /// either directly or, for the mix categories, as a submix.
    pub fn check_sampler(&self, config: &PromptSamplerConfig, split: Split) -> Result<()> {
        let missing: Vec<&str> = config
            .categories
            .iter()
            .filter(|c| !self.drawable(**c, config, split))
            .map(|c| c.name())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("no {split} records for: {}", missing.join(", "))))
        }
    }

    fn drawable(&self, category: PromptCategory, config: &PromptSamplerConfig, split: Split) -> bool {
        self.count(split, category) > 0
            || (config.submix_probability > 0.0 && submix_pool(category).iter().any(|c| self.count(split, *c) > 0))
    }
}

/// Categories summed to build a submix of `category`; empty if it is not a mix.
fn submix_pool(category: PromptCategory) -> &'static [PromptCategory] {
    match category {
        PromptCategory::SfxMix => &[PromptCategory::Sfx],
        PromptCategory::MusicMix => &PromptCategory::INSTRUMENTS,
        _ => &[],
    }
}

/// Weight of one unordered category pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairWeight {
    pub a: PromptCategory,
    pub b: PromptCategory,
    pub weight: f64,
}

/// Symmetric pair weights: `baseline` everywhere except the listed pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CooccurrenceWeights {
    pub baseline: f64,
    pub pairs: Vec<PairWeight>,
}

impl Default for CooccurrenceWeights {
    /// A stand-in table: instrument pairs and (speech, sfx-mix) are 4x as
    /// likely as any other pair.
    fn default() -> Self {
        let mut pairs = Vec::new();
        let inst = PromptCategory::INSTRUMENTS;
        for (i, a) in inst.iter().enumerate() {
            for b in &inst[i + 1..] {
                pairs.push(PairWeight { a: *a, b: *b, weight: 4.0 });
            }
        }
        pairs.push(PairWeight { a: PromptCategory::Speech, b: PromptCategory::SfxMix, weight: 4.0 });
        Self { baseline: 1.0, pairs }
    }
}

impl CooccurrenceWeights {
    pub fn uniform() -> Self {
        Self { baseline: 1.0, pairs: Vec::new() }
    }

    /// Later entries override earlier ones.
    pub fn weight(&self, a: PromptCategory, b: PromptCategory) -> f64 {
        self.pairs
            .iter()
            .rev()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map_or(self.baseline, |p| p.weight)
    }
}

/// Per-category `[low, high]` gain range in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable([[f64; 2]; 8]);

impl Default for GainTable {
    fn default() -> Self {
        let mut t = [[-10.0, 0.0]; 8];
        t[PromptCategory::SfxMix.index()] = [-20.0, 0.0];
        t[PromptCategory::MusicMix.index()] = [-20.0, 0.0];
        Self(t)
    }
}

impl GainTable {
    pub fn range(&self, category: PromptCategory) -> [f64; 2] {
        self.0[category.index()]
    }

    pub fn set(&mut self, category: PromptCategory, range: [f64; 2]) {
        self.0[category.index()] = range;
    }
}

// Serialized as a map keyed by category name; missing keys keep defaults.
impl Serialize for GainTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<PromptCategory, [f64; 2]> = PromptCategory::ALL.iter().map(|c| (*c, self.range(*c))).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GainTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let map = BTreeMap::<PromptCategory, [f64; 2]>::deserialize(d)?;
        let mut table = GainTable::default();
        for (c, r) in map {
            table.set(c, r);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSamplerConfig {
    /// Inclusive range for the number of prompts.
    pub n_range: [usize; 2],
    /// Categories the sampler may emit. Must include speech, which keeps
    /// sampling from running out of candidates.
    pub categories: Vec<PromptCategory>,
    pub cooccurrence_weights: CooccurrenceWeights,
    pub gain_ranges_db: GainTable,
    pub submix_probability: f64,
    /// Inclusive range for the number of constituents in a submix.
    pub submix_count: [usize; 2],
    pub sample_rate_hz: u32,
    /// Crops or sources below this RMS count as digitally silent.
    pub silence_rms: f64,
    /// Crops tried per record before moving to another record.
    pub max_redraws: usize,
    /// Records tried per source before giving up.
    pub max_records: usize,
}

impl Default for PromptSamplerConfig {
    fn default() -> Self {
        Self {
            n_range: [2, 4],
            categories: PromptCategory::ALL.to_vec(),
            cooccurrence_weights: CooccurrenceWeights::default(),
            gain_ranges_db: GainTable::default(),
            submix_probability: 0.5,
            submix_count: [2, 3],
            sample_rate_hz: 48_000,
            silence_rms: 1e-6,
            max_redraws: 10,
            max_records: 10,
        }
    }
}

impl PromptSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let [lo, hi] = self.n_range;
        if lo == 0 || lo > hi {
            problems.push(format!("n_range [{lo}, {hi}] must satisfy 1 <= low <= high"));
        }
        if !self.categories.contains(&PromptCategory::Speech) {
            problems.push("categories must include speech".into());
        }
        let w = &self.cooccurrence_weights;
        if !(w.baseline.is_finite() && w.baseline > 0.0) {
            problems.push(format!("cooccurrence baseline {} must be positive", w.baseline));
        }
        for p in &w.pairs {
            if !(p.weight.is_finite() && p.weight > 0.0) {
                problems.push(format!("cooccurrence weight for ({}, {}) must be positive", p.a, p.b));
            }
        }
        for c in PromptCategory::ALL {
            let [a, b] = self.gain_ranges_db.range(c);
            if !(a.is_finite() && b.is_finite() && a <= b) {
                problems.push(format!("gain range for {c} is [{a}, {b}]"));
            }
        }
        if !(0.0..=1.0).contains(&self.submix_probability) {
            problems.push(format!("submix_probability {} outside [0, 1]", self.submix_probability));
        }
        let [a, b] = self.submix_count;
        if a < 2 || a > b {
            problems.push(format!("submix_count [{a}, {b}] must satisfy 2 <= low <= high"));
        }
        if self.sample_rate_hz == 0 {
            problems.push("sample_rate_hz must be positive".into());
        }
        if !(self.silence_rms.is_finite() && self.silence_rms >= 0.0) {
            problems.push("silence_rms must be non-negative".into());
        }
        if self.max_redraws == 0 || self.max_records == 0 {
            problems.push("max_redraws and max_records must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Draws a valid prompt list: the count is uniform on `n_range`, then each
/// category is drawn with probability proportional to the product of its
/// pair weights against the categories already chosen. Candidates that
/// would break a combination rule are masked out.
pub fn sample_prompt_set<R: Rng + ?Sized>(config: &PromptSamplerConfig, rng: &mut R) -> PromptSet {
    let n = rng.gen_range(config.n_range[0]..=config.n_range[1]);
    let mut chosen: Vec<PromptCategory> = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(config.categories.len());
    for _ in 0..n {
        weights.clear();
        for &c in &config.categories {
            chosen.push(c);
            let ok = check_prompts(&chosen).is_ok();
            chosen.pop();
            let w = if ok {
                chosen.iter().map(|p| config.cooccurrence_weights.weight(c, *p)).product()
            } else {
                0.0
            };
            weights.push(w);
        }
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = weights.iter().rposition(|w| *w > 0.0).expect("speech is always a candidate");
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 && u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        chosen.push(config.categories[pick]);
    }
    PromptSet::new(chosen).expect("masked sampling keeps the prompt rules")
}

/// Audio access for the engine.
pub trait SourceProvider {
    /// `len` samples of `record` from `offset`, at its native rate. Positions
    /// past the end of the file are returned as zeros.
    fn read(&self, record: &SourceRecord, offset: usize, len: usize) -> Result<Vec<f32>>;
}

/// Provider over in-memory signals keyed by path.
#[derive(Debug, Clone, Default)]
pub struct MemoryProvider {
    signals: BTreeMap<String, Vec<f32>>,
}

impl MemoryProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, samples: Vec<f32>) {
        self.signals.insert(path.into(), samples);
    }
}

impl SourceProvider for MemoryProvider {
    fn read(&self, record: &SourceRecord, offset: usize, len: usize) -> Result<Vec<f32>> {
        let x = self
            .signals
            .get(&record.path)
            .ok_or_else(|| Error::Source(format!("{}: not loaded", record.path)))?;
        let mut out = vec![0.0; len];
        if offset < x.len() {
            let n = len.min(x.len() - offset);
            out[..n].copy_from_slice(&x[offset..offset + n]);
        }
        Ok(out)
    }
}

/// One file contribution: `record[offset..]` placed `pad_samples` into the
/// native-rate window. Submix constituents carry their own gain; a single
/// source has `gain_db = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePart {
    pub record: SourceRecord,
    pub offset_samples: usize,
    pub pad_samples: usize,
    pub gain_db: f64,
}

/// Everything needed to rebuild one prompted source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPlan {
    pub prompt: PromptCategory,
    pub gain_db: f64,
    pub parts: Vec<SourcePart>,
}

/// A fully specified mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub num_samples: usize,
    pub sample_rate_hz: u32,
    pub slots: Vec<SlotPlan>,
}

impl MixturePlan {
    pub fn prompts(&self) -> Result<PromptSet> {
        Ok(PromptSet::new(self.slots.iter().map(|s| s.prompt).collect())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    pub mixture: AudioBuffer<f32>,
    /// Aligned with `prompts`, each already scaled by its gain.
    pub sources: Vec<AudioBuffer<f32>>,
    pub prompts: PromptSet,
    pub gains_db: Vec<f64>,
    pub plan: MixturePlan,
}

impl MixtureExample {
    /// Records that make up source `i`.
    pub fn provenance(&self, i: usize) -> impl Iterator<Item = &SourceRecord> {
        self.plan.slots[i].parts.iter().map(|p| &p.record)
    }
}

/// A drawn part plus its native-rate window.
struct DrawnPart {
    part: SourcePart,
    window: Vec<f32>,
}

/// Native-rate window length covering `num_samples` output samples.
fn native_len(num_samples: usize, out_rate: u32, rate: u32) -> usize {
    resampled_len(num_samples, out_rate, rate).max(1)
}

fn place(read: Vec<f32>, pad: usize, len: usize) -> Vec<f32> {
    if pad == 0 && read.len() == len {
        return read;
    }
    let mut out = vec![0.0; len];
    let n = read.len().min(len.saturating_sub(pad));
    out[pad..pad + n].copy_from_slice(&read[..n]);
    out
}

/// Draws sources from one split of a manifest.
pub struct MixtureEngine<'a, P: SourceProvider + ?Sized> {
    manifest: &'a CorpusManifest,
    provider: &'a P,
    config: &'a PromptSamplerConfig,
    split: Split,
}

impl<'a, P: SourceProvider + ?Sized> MixtureEngine<'a, P> {
    pub fn new(manifest: &'a CorpusManifest, provider: &'a P, config: &'a PromptSamplerConfig, split: Split) -> Result<Self> {
        config.validate()?;
        manifest.check_sampler(config, split)?;
        Ok(Self { manifest, provider, config, split })
    }

    pub fn config(&self) -> &PromptSamplerConfig {
        self.config
    }

    fn output_len(&self, duration_s: f64) -> Result<usize> {
        let n = libm::round(duration_s * self.config.sample_rate_hz as f64);
        if !(n.is_finite() && n >= 1.0) {
            return Err(Error::InvalidConfig(format!("segment duration {duration_s} s is too short")));
        }
        Ok(n as usize)
    }

    fn read_part(&self, part: &SourcePart, num_samples: usize) -> Result<Vec<f32>> {
        let rec = &part.record;
        let len = native_len(num_samples, self.config.sample_rate_hz, rec.sample_rate_hz);
        let avail = rec.num_samples.saturating_sub(part.offset_samples).min(len.saturating_sub(part.pad_samples));
        let read = self.provider.read(rec, part.offset_samples, avail)?;
        if read.iter().any(|v| !v.is_finite()) {
            return Err(Error::Source(format!("{}: non-finite samples", rec.path)));
        }
        Ok(place(read, part.pad_samples, len))
    }

    /// A random non-silent crop of a random `category` record.
    fn draw_part<R: Rng + ?Sized>(&self, category: PromptCategory, num_samples: usize, rng: &mut R) -> Result<DrawnPart> {
        let pool = self.manifest.indices(self.split, category);
        if pool.is_empty() {
            return Err(Error::NoRecords(category.name()));
        }
        for _ in 0..self.config.max_records {
            let record = &self.manifest.records()[pool[rng.gen_range(0..pool.len())]];
            let len = native_len(num_samples, self.config.sample_rate_hz, record.sample_rate_hz);
            for _ in 0..self.config.max_redraws {
                // Long files are cropped, short ones are zero-padded at a random offset.
                let (offset, pad) = if record.num_samples >= len {
                    (rng.gen_range(0..=record.num_samples - len), 0)
                } else {
                    (0, rng.gen_range(0..=len - record.num_samples))
                };
                let part = SourcePart { record: record.clone(), offset_samples: offset, pad_samples: pad, gain_db: 0.0 };
                let window = self.read_part(&part, num_samples)?;
                if rms(&window) >= self.config.silence_rms {
                    return Ok(DrawnPart { part, window });
                }
                if record.num_samples <= len {
                    // Every placement holds the same samples.
                    break;
                }
            }
        }
        Err(Error::Source(format!(
            "no non-silent {category} crop after {} records",
            self.config.max_records
        )))
    }

    /// The parts of one prompted source: a single record, or for the mix
    /// categories (with probability `submix_probability`) a sum of 2 or 3
    /// individual sources.
    fn draw_slot<R: Rng + ?Sized>(&self, category: PromptCategory, num_samples: usize, rng: &mut R) -> Result<Vec<DrawnPart>> {
        let pool: Vec<PromptCategory> = submix_pool(category)
            .iter()
            .copied()
            .filter(|c| self.manifest.count(self.split, *c) > 0)
            .collect();
        let direct = self.manifest.count(self.split, category) > 0;
        let submix = !pool.is_empty()
            && self.config.submix_probability > 0.0
            && (!direct || rng.gen::<f64>() < self.config.submix_probability);
        if !submix {
            return Ok(vec![self.draw_part(category, num_samples, rng)?]);
        }
        let [a, b] = self.config.submix_count;
        let count = rng.gen_range(a..=b);
        let mut parts = Vec::with_capacity(count);
        for _ in 0..count {
            let c = pool[rng.gen_range(0..pool.len())];
            let mut drawn = self.draw_part(c, num_samples, rng)?;
            let [lo, hi] = self.config.gain_ranges_db.range(c);
            drawn.part.gain_db = rng.gen_range(lo..=hi);
            parts.push(drawn);
        }
        Ok(parts)
    }

    /// One source for `category` at the native rate(s), with its records.
    /// Submix constituents are returned separately; use
    /// [`synthesize`](Self::synthesize) for rate-harmonized audio.
    pub fn draw_source<R: Rng + ?Sized>(
        &self,
        category: PromptCategory,
        duration_s: f64,
        rng: &mut R,
    ) -> Result<Vec<(SourcePart, AudioBuffer<f32>)>> {
        let n = self.output_len(duration_s)?;
        Ok(self
            .draw_slot(category, n, rng)?
            .into_iter()
            .map(|d| {
                let rate = d.part.record.sample_rate_hz;
                (d.part, AudioBuffer { samples: d.window, sample_rate_hz: rate })
            })
            .collect())
    }

    /// Samples a prompt list and synthesizes a mixture for it.
    pub fn next_example<R: Rng + ?Sized>(&self, duration_s: f64, rng: &mut R) -> Result<MixtureExample> {
        let prompts = sample_prompt_set(self.config, rng);
        self.synthesize(&prompts, duration_s, rng)
    }

    pub fn synthesize<R: Rng + ?Sized>(&self, prompts: &PromptSet, duration_s: f64, rng: &mut R) -> Result<MixtureExample> {
        let n = self.output_len(duration_s)?;
        let mut slots: Vec<(SlotPlan, Vec<Vec<f32>>)> = Vec::with_capacity(prompts.len());
        for &c in prompts.entries() {
            slots.push(self.new_slot(c, n, rng)?);
        }
        // A source can still come out silent after the resampling chain
        // (e.g. content entirely above the bottleneck); such slots are redrawn.
        for _ in 0..self.config.max_records {
            match self.render(&slots, n) {
                Ok(example) => return Ok(example),
                Err(Silent(i)) => {
                    let c = slots[i].0.prompt;
                    slots[i] = self.new_slot(c, n, rng)?;
                }
            }
        }
        Err(Error::SilentMixture)
    }

    fn new_slot<R: Rng + ?Sized>(&self, c: PromptCategory, n: usize, rng: &mut R) -> Result<(SlotPlan, Vec<Vec<f32>>)> {
        let parts = self.draw_slot(c, n, rng)?;
        let [lo, hi] = self.config.gain_ranges_db.range(c);
        let gain_db = rng.gen_range(lo..=hi);
        let (plan_parts, windows) = parts.into_iter().map(|d| (d.part, d.window)).unzip();
        Ok((SlotPlan { prompt: c, gain_db, parts: plan_parts }, windows))
    }

    /// Rebuilds a mixture from its plan; no randomness is involved.
    pub fn realize(&self, plan: &MixturePlan) -> Result<MixtureExample> {
        if plan.sample_rate_hz != self.config.sample_rate_hz {
            return Err(Error::InvalidConfig(format!(
                "plan is at {} Hz but the engine produces {} Hz",
                plan.sample_rate_hz, self.config.sample_rate_hz
            )));
        }
        plan.prompts()?;
        let mut slots = Vec::with_capacity(plan.slots.len());
        for slot in &plan.slots {
            if slot.parts.is_empty() {
                return Err(Error::InvalidConfig(format!("{} source has no parts", slot.prompt)));
            }
            let windows = slot.parts.iter().map(|p| self.read_part(p, plan.num_samples)).collect::<Result<Vec<_>>>()?;
            slots.push((slot.clone(), windows));
        }
        self.render(&slots, plan.num_samples).map_err(|Silent(i)| {
            Error::Source(format!("recipe source {i} ({}) is silent after resampling", plan.slots[i].prompt))
        })
    }

    /// Resamples every part through the lowest native rate, normalizes and
    /// applies gains, then sums.
    fn render(&self, slots: &[(SlotPlan, Vec<Vec<f32>>)], n: usize) -> core::result::Result<MixtureExample, Silent> {
        let out_rate = self.config.sample_rate_hz;
        let thr = self.config.silence_rms;
        let min_rate = slots
            .iter()
            .flat_map(|(s, _)| s.parts.iter().map(|p| p.record.sample_rate_hz))
            .min()
            .unwrap_or(out_rate);
        let mut sources = Vec::with_capacity(slots.len());
        for (i, (slot, windows)) in slots.iter().enumerate() {
            let mut acc = vec![0.0f64; n];
            for (part, window) in slot.parts.iter().zip(windows) {
                let x = harmonize(window, part.record.sample_rate_hz, min_rate, out_rate, n);
                let r = rms(&x);
                if r < thr || r == 0.0 {
                    return Err(Silent(i));
                }
                let g = db_to_gain(part.gain_db) / r;
                for (a, v) in acc.iter_mut().zip(&x) {
                    *a += g * v;
                }
            }
            let r = rms(&acc);
            if r < thr || r == 0.0 {
                return Err(Silent(i));
            }
            let g = db_to_gain(slot.gain_db) / r;
            let samples: Vec<f32> = acc.iter().map(|v| (g * v) as f32).collect();
            sources.push(AudioBuffer { samples, sample_rate_hz: out_rate });
        }
        let mut mixture = vec![0.0f32; n];
        for s in &sources {
            for (m, v) in mixture.iter_mut().zip(&s.samples) {
                *m += *v;
            }
        }
        let plan = MixturePlan { num_samples: n, sample_rate_hz: out_rate, slots: slots.iter().map(|(s, _)| s.clone()).collect() };
        Ok(MixtureExample {
            mixture: AudioBuffer { samples: mixture, sample_rate_hz: out_rate },
            sources,
            prompts: plan.prompts().expect("slots come from a valid prompt list"),
            gains_db: plan.slots.iter().map(|s| s.gain_db).collect(),
            plan,
        })
    }
}

struct Silent(usize);

/// `rate -> min_rate -> out_rate`, fitted to exactly `n` samples.
fn harmonize(window: &[f32], rate: u32, min_rate: u32, out_rate: u32, n: usize) -> Vec<f64> {
    let buf = AudioBuffer { samples: window.iter().map(|v| *v as f64).collect::<Vec<f64>>(), sample_rate_hz: rate };
    // Rates are validated positive, so resampling cannot fail.
    let down = resample(&buf, min_rate as i64).expect("positive rate");
    let mut up = resample(&down, out_rate as i64).expect("positive rate").samples;
    up.resize(n, 0.0);
    up
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(path: &str, category: PromptCategory, rate: u32, n: usize) -> SourceRecord {
        SourceRecord { path: path.into(), category, sample_rate_hz: rate, num_samples: n, split: Split::Train }
    }

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    /// One record per category at 8 kHz, plus the provider.
    fn corpus(rate: u32, seconds: f64) -> (CorpusManifest, MemoryProvider) {
        let n = (rate as f64 * seconds) as usize;
        let mut records = Vec::new();
        let mut provider = MemoryProvider::new();
        for (i, c) in PromptCategory::ALL.iter().enumerate() {
            for j in 0..2 {
                let path = format!("{c}/{j}.wav");
                records.push(rec(&path, *c, rate, n));
                provider.insert(path, noise(n, (10 * i + j) as u64));
            }
        }
        (CorpusManifest::new(records).unwrap(), provider)
    }

    fn small_config(rate: u32) -> PromptSamplerConfig {
        PromptSamplerConfig { sample_rate_hz: rate, ..Default::default() }
    }

    #[test]
    fn manifest_index_and_duplicates() {
        let m = CorpusManifest::new(vec![
            rec("a.wav", PromptCategory::Speech, 16_000, 10),
            rec("b.wav", PromptCategory::Drums, 16_000, 10),
            rec("a.wav", PromptCategory::Speech, 16_000, 10),
        ])
        .unwrap();
        assert_eq!(m.indices(Split::Train, PromptCategory::Speech), &[0, 2]);
        assert_eq!(m.count(Split::Train, PromptCategory::Drums), 1);
        assert_eq!(m.count(Split::Valid, PromptCategory::Drums), 0);
        assert_eq!(m.warnings().len(), 1);
        let err = CorpusManifest::new(vec![rec("z.wav", PromptCategory::Bass, 16_000, 0)]).unwrap_err();
        assert!(format!("{err}").contains("record 1"));
        let cfg = PromptSamplerConfig::default();
        let err = m.check_sampler(&cfg, Split::Train).unwrap_err();
        assert!(format!("{err}").contains("bass"), "{err}");
    }

    #[test]
    fn config_validation_lists_problems() {
        let mut cfg = PromptSamplerConfig::default();
        cfg.validate().unwrap();
        cfg.n_range = [3, 2];
        cfg.submix_probability = 1.5;
        cfg.cooccurrence_weights.baseline = 0.0;
        let msg = format!("{}", cfg.validate().unwrap_err());
        assert!(msg.contains("n_range") && msg.contains("submix_probability") && msg.contains("baseline"), "{msg}");
    }

    #[test]
    fn sampler_respects_rules_and_counts() {
        let cfg = PromptSamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut hist = [0usize; 6];
        for _ in 0..10_000 {
            let p = sample_prompt_set(&cfg, &mut rng);
            check_prompts(p.entries()).unwrap();
            hist[p.len()] += 1;
        }
        assert_eq!(hist[0] + hist[1] + hist[5], 0);
        assert!(hist[2] > 0 && hist[3] > 0 && hist[4] > 0);
        let a = sample_prompt_set(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_prompt_set(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn cooccurrence_product_rule() {
        // Only speech and drums/bass: after drums, bass is 9x as likely as speech.
        let cfg = PromptSamplerConfig {
            n_range: [2, 2],
            categories: vec![PromptCategory::Speech, PromptCategory::Drums, PromptCategory::Bass],
            cooccurrence_weights: CooccurrenceWeights {
                baseline: 1.0,
                pairs: vec![PairWeight { a: PromptCategory::Bass, b: PromptCategory::Drums, weight: 9.0 }],
            },
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut bass, mut speech) = (0usize, 0usize);
        for _ in 0..30_000 {
            let p = sample_prompt_set(&cfg, &mut rng);
            if p.entries()[0] == PromptCategory::Drums {
                match p.entries()[1] {
                    PromptCategory::Bass => bass += 1,
                    PromptCategory::Speech => speech += 1,
                    other => panic!("drums twice or {other}"),
                }
            }
        }
        let ratio = bass as f64 / speech as f64;
        assert!((ratio - 9.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn mixture_is_additive_and_normalized() {
        let (m, p) = corpus(8_000, 1.0);
        let cfg = small_config(8_000);
        let engine = MixtureEngine::new(&m, &p, &cfg, Split::Train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let ex = engine.next_example(0.5, &mut rng).unwrap();
            assert_eq!(ex.sources.len(), ex.prompts.len());
            assert_eq!(ex.mixture.len(), 4000);
            let mut sum = vec![0.0f32; 4000];
            for (s, &g) in ex.sources.iter().zip(&ex.gains_db) {
                assert_eq!(s.len(), 4000);
                assert!((s.rms() / db_to_gain(g) - 1.0).abs() < 1e-6);
                for (a, v) in sum.iter_mut().zip(&s.samples) {
                    *a += *v;
                }
            }
            assert_eq!(sum, ex.mixture.samples);
            for (slot, &c) in ex.plan.slots.iter().zip(ex.prompts.entries()) {
                let [lo, hi] = cfg.gain_ranges_db.range(c);
                assert!(slot.gain_db >= lo && slot.gain_db <= hi);
            }
        }
    }

    #[test]
    fn submix_and_short_files() {
        let (m, p) = corpus(8_000, 1.0);
        let cfg = PromptSamplerConfig { submix_probability: 1.0, ..small_config(8_000) };
        let engine = MixtureEngine::new(&m, &p, &cfg, Split::Train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let parts = engine.draw_source(PromptCategory::MusicMix, 0.5, &mut rng).unwrap();
        assert!(parts.len() >= 2 && parts.iter().all(|(p, _)| p.record.category.is_instrument()));
        let parts = engine.draw_source(PromptCategory::Speech, 0.5, &mut rng).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].0.record.category, PromptCategory::Speech);

        // 3 s requested from a 1 s file: zero-padded, the file appears intact.
        let (part, audio) = engine.draw_source(PromptCategory::Speech, 3.0, &mut rng).unwrap().remove(0);
        assert_eq!(audio.len(), 24_000);
        let pad = part.pad_samples;
        assert!(audio.samples[..pad].iter().all(|v| *v == 0.0));
        assert!(audio.samples[pad + 8000..].iter().all(|v| *v == 0.0));
        assert_eq!(audio.samples[pad..pad + 8000].to_vec(), engine.provider.read(&part.record, 0, 8000).unwrap());
    }

    #[test]
    fn silent_crops_are_redrawn() {
        let mut signal = vec![0.0f32; 8000];
        signal[6000..].copy_from_slice(&noise(2000, 1));
        let mut p = MemoryProvider::new();
        p.insert("s", signal);
        p.insert("quiet", vec![0.0; 8000]);
        let m = CorpusManifest::new(vec![rec("s", PromptCategory::Speech, 8000, 8000)]).unwrap();
        let cfg = PromptSamplerConfig { categories: vec![PromptCategory::Speech], ..small_config(8000) };
        let engine = MixtureEngine::new(&m, &p, &cfg, Split::Train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (part, audio) = engine.draw_source(PromptCategory::Speech, 0.1, &mut rng).unwrap().remove(0);
            assert!(audio.rms() >= 1e-6, "offset {}", part.offset_samples);
        }
        let m = CorpusManifest::new(vec![rec("quiet", PromptCategory::Speech, 8000, 8000)]).unwrap();
        let engine = MixtureEngine::new(&m, &p, &cfg, Split::Train).unwrap();
        assert!(matches!(engine.draw_source(PromptCategory::Speech, 0.1, &mut rng), Err(Error::Source(_))));
    }

    #[test]
    fn realize_replays_plan() {
        let (m, p) = corpus(8_000, 1.0);
        let cfg = small_config(8_000);
        let engine = MixtureEngine::new(&m, &p, &cfg, Split::Train).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ex = engine.next_example(0.5, &mut rng).unwrap();
        assert_eq!(engine.realize(&ex.plan).unwrap(), ex);
    }

    #[test]
    fn gain_table_serde_defaults() {
        let t: GainTable = serde_json::from_str(r#"{"speech": [-5.0, 0.0]}"#).unwrap();
        assert_eq!(t.range(PromptCategory::Speech), [-5.0, 0.0]);
        assert_eq!(t.range(PromptCategory::MusicMix), [-20.0, 0.0]);
        let cfg = PromptSamplerConfig::default();
        let back: PromptSamplerConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    /// Share of energy above `hz`, in dB relative to the total.
    pub(crate) fn energy_above_db(x: &[f32], rate: u32, hz: f64) -> f64 {
        use crate::dsp::fft::FftPlan;
        use num_complex::Complex;
        let plan = FftPlan::<f64>::new(x.len());
        // Hann taper so the wrap-around jump does not leak into the measurement.
        let n = x.len() as f64;
        let mut buf: Vec<Complex<f64>> = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let w = 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * i as f64 / n);
                Complex::new(w * *v as f64, 0.0)
            })
            .collect();
        plan.forward(&mut buf);
        let (mut hi, mut all) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate().take(x.len() / 2 + 1) {
            let f = k as f64 * rate as f64 / x.len() as f64;
            all += c.norm_sqr();
            if f > hz {
                hi += c.norm_sqr();
            }
        }
        10.0 * libm::log10(hi / all)
    }

    #[test]
    fn sources_pass_through_lowest_rate() {
        let mut p = MemoryProvider::new();
        p.insert("a", noise(16_000, 1));
        p.insert("b", noise(48_000, 2));
        let m = CorpusManifest::new(vec![
            rec("a", PromptCategory::Speech, 16_000, 16_000),
            rec("b", PromptCategory::Sfx, 48_000, 48_000),
        ])
        .unwrap();
        let cfg = PromptSamplerConfig { categories: vec![PromptCategory::Speech, PromptCategory::Sfx], ..Default::default() };
        let engine = MixtureEngine::new(&m, &p, &cfg, Split::Train).unwrap();
        let prompts = PromptSet::new(vec![PromptCategory::Speech, PromptCategory::Sfx]).unwrap();
        let ex = engine.synthesize(&prompts, 0.5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for s in &ex.sources {
            assert_eq!(s.sample_rate_hz, 48_000);
            let db = energy_above_db(&s.samples, 48_000, 8_000.0);
            assert!(db < -60.0, "{db} dB above 8 kHz");
        }
    }

    #[test]
    fn speech_gains_are_uniform() {
        let (m, p) = corpus(8_000, 0.05);
        let cfg = small_config(8_000);
        let engine = MixtureEngine::new(&m, &p, &cfg, Split::Train).unwrap();
        let prompts = PromptSet::new(vec![PromptCategory::Speech, PromptCategory::Speech]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut gains = Vec::new();
        while gains.len() < 10_000 {
            gains.extend(engine.synthesize(&prompts, 0.01, &mut rng).unwrap().gains_db);
        }
        gains.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = gains.len() as f64;
        let ks = gains
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let f = (g + 10.0) / 10.0;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(gains[0] >= -10.0 && gains[gains.len() - 1] <= 0.0);
        assert!(ks < 0.02, "KS {ks}");
    }
}
