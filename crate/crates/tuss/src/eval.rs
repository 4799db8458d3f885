//! Separation to files and metric reports.
//!
//! An evaluation manifest has one JSON object per line:
//! `{"id": "x", "mixture": "x/mix.wav", "references": [{"path": "x/s1.wav", "category": "speech"}]}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tuss_core::dsp::AudioBuffer;
use tuss_core::loss::best_assignment;
use tuss_core::metrics::{evaluate_pair, MetricConvention};
use tuss_core::{Baseline, PromptCategory, PromptSet, Tuss};

use crate::error::{Error, Result};
use crate::presets::TaskPreset;
use crate::wav::{read_wav, write_wav};

/// Lowest input rate `separate` accepts.
pub const MIN_INPUT_RATE_HZ: u32 = 8000;

/// Output file name for prompt `index`.
pub fn output_name(stem: &str, index: usize, category: PromptCategory) -> String {
    format!("{stem}.{index}.{category}.wav")
}

fn read_input(input: &Path) -> Result<AudioBuffer<f32>> {
    let audio = read_wav(input)?;
    if audio.sample_rate_hz < MIN_INPUT_RATE_HZ {
        return Err(Error::Input {
            path: input.into(),
            message: format!("sample rate {} Hz is below the supported minimum of {MIN_INPUT_RATE_HZ} Hz", audio.sample_rate_hz),
        });
    }
    Ok(audio)
}

fn write_outputs(input: &Path, out_dir: &Path, outs: &[AudioBuffer<f32>], names: impl Fn(&str, usize) -> String) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "output".into());
    let mut written = Vec::with_capacity(outs.len());
    for (i, o) in outs.iter().enumerate() {
        let p = out_dir.join(names(&stem, i));
        write_wav(&p, o)?;
        written.push(p);
    }
    Ok(written)
}

/// Separates `input` and writes one file per prompt into `out_dir`, at the
/// input's rate. Returns the written paths in prompt order.
pub fn separate_file(model: &Tuss<f32>, input: &Path, prompts: &PromptSet, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let audio = read_input(input)?;
    let outs = model.separate(&audio, prompts)?;
    write_outputs(input, out_dir, &outs, |stem, i| output_name(stem, i, prompts.entries()[i]))
}

/// Like [`separate_file`] for the fixed-head baseline; outputs are named
/// `<stem>.<head>.wav`.
pub fn separate_file_baseline(model: &Baseline<f32>, input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let audio = read_input(input)?;
    let outs = model.separate(&audio)?;
    write_outputs(input, out_dir, &outs, |stem, i| format!("{stem}.{i}.wav"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub path: PathBuf,
    pub category: PromptCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub mixture: PathBuf,
    pub references: Vec<ReferenceEntry>,
}

pub fn load_eval_manifest(path: impl AsRef<Path>) -> Result<Vec<EvalItem>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut items = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut item: EvalItem =
            serde_json::from_str(l).map_err(|e| Error::Parse { path: path.into(), line: i + 1, message: e.to_string() })?;
        item.mixture = base.join(&item.mixture);
        for r in &mut item.references {
            r.path = base.join(&r.path);
        }
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub category: PromptCategory,
    pub db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub prompts: Vec<PromptCategory>,
    /// Aligned with `prompts`, after the best assignment within each category.
    pub scores: Vec<SourceScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub convention: MetricConvention,
    pub per_item: Vec<ItemResult>,
    /// Mean over every scored source of the category, across items.
    pub per_category_mean: BTreeMap<PromptCategory, f64>,
    /// Skipped items and protocol remarks.
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn category_means(items: &[ItemResult]) -> BTreeMap<PromptCategory, f64> {
        let mut acc: BTreeMap<PromptCategory, (f64, usize)> = BTreeMap::new();
        for it in items {
            for s in &it.scores {
                let e = acc.entry(s.category).or_insert((0.0, 0));
                e.0 += s.db;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
    }

    /// Line-delimited JSON: one record per item, then a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for it in &self.per_item {
            out.push_str(&serde_json::to_string(it).expect("items serialize"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "convention": self.convention,
                "items": self.per_item.len(),
                "per_category_mean": self.per_category_mean,
                "notes": self.notes,
            }
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let cats: Vec<&PromptCategory> = self.per_category_mean.keys().collect();
        let _ = write!(s, "{:<24}", format!("item ({})", self.convention));
        for c in &cats {
            let _ = write!(s, "{:>12}", c.name());
        }
        s.push('\n');
        for it in &self.per_item {
            let _ = write!(s, "{:<24}", it.id);
            for c in &cats {
                let v: Vec<f64> = it.scores.iter().filter(|x| x.category == **c).map(|x| x.db).collect();
                if v.is_empty() {
                    let _ = write!(s, "{:>12}", "-");
                } else {
                    let _ = write!(s, "{:>12.2}", v.iter().sum::<f64>() / v.len() as f64);
                }
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<24}", "mean");
        for c in &cats {
            let _ = write!(s, "{:>12.2}", self.per_category_mean[*c]);
        }
        s.push('\n');
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub preset: Option<TaskPreset>,
    /// Count for the repeated presets; defaults to the item's reference count.
    pub n: Option<usize>,
    pub with_noise: bool,
    pub convention: MetricConvention,
    /// Score the references against themselves; no model is needed.
    pub oracle: bool,
    /// One forward pass per category, prompting only that category.
    pub single_category: bool,
}

/// Prompt order (preset order or reference order) and the reference index
/// for each prompt.
fn item_prompts(item: &EvalItem, opts: &EvalOptions) -> Result<(PromptSet, Vec<usize>)> {
    let cats: Vec<PromptCategory> = item.references.iter().map(|r| r.category).collect();
    let prompts = match opts.preset {
        None => PromptSet::new(cats.clone())?,
        Some(p) => {
            let n = opts.n.or_else(|| {
                let base = match p {
                    TaskPreset::Uss => PromptCategory::Sfx,
                    _ => PromptCategory::Speech,
                };
                Some(cats.iter().filter(|c| **c == base).count())
            });
            let with_noise = opts.with_noise || (p == TaskPreset::NoisySs && cats.contains(&PromptCategory::SfxMix));
            p.expand(n, with_noise)?
        }
    };
    let mut used = vec![false; cats.len()];
    let mut order = Vec::with_capacity(prompts.len());
    for c in prompts.entries() {
        let j = (0..cats.len()).find(|&j| !used[j] && cats[j] == *c).ok_or_else(|| {
            Error::Usage(format!("references do not match the prompts: no {c} reference left"))
        })?;
        used[j] = true;
        order.push(j);
    }
    if used.iter().any(|u| !u) {
        return Err(Error::Usage("references include categories the prompts do not request".into()));
    }
    Ok((prompts, order))
}

fn estimates(model: Option<&Tuss<f32>>, mix: &AudioBuffer<f32>, prompts: &PromptSet, refs: &[AudioBuffer<f32>], opts: &EvalOptions) -> Result<Vec<Vec<f32>>> {
    if opts.oracle {
        return Ok(refs.iter().map(|r| r.samples.clone()).collect());
    }
    let model = model.ok_or_else(|| Error::Usage("a checkpoint is required unless --oracle is given".into()))?;
    if !opts.single_category {
        return Ok(model.separate(mix, prompts)?.into_iter().map(|a| a.samples).collect());
    }
    let mut out = vec![Vec::new(); prompts.len()];
    let mut seen: Vec<PromptCategory> = Vec::new();
    for c in prompts.entries() {
        if seen.contains(c) {
            continue;
        }
        seen.push(*c);
        let pos: Vec<usize> = (0..prompts.len()).filter(|&i| prompts.entries()[i] == *c).collect();
        let sub = prompts.select(&pos)?;
        for (i, o) in pos.into_iter().zip(model.separate(mix, &sub)?) {
            out[i] = o.samples;
        }
    }
    Ok(out)
}

fn evaluate_item(model: Option<&Tuss<f32>>, item: &EvalItem, opts: &EvalOptions) -> Result<ItemResult> {
    let (prompts, order) = item_prompts(item, opts)?;
    let mix = read_wav(&item.mixture)?;
    let refs: Vec<AudioBuffer<f32>> = order.iter().map(|&j| read_wav(&item.references[j].path)).collect::<Result<_>>()?;
    for r in &refs {
        if r.len() != mix.len() || r.sample_rate_hz != mix.sample_rate_hz {
            return Err(Error::Input {
                path: item.mixture.clone(),
                message: "reference length or rate differs from the mixture".into(),
            });
        }
    }
    let est = estimates(model, &mix, &prompts, &refs, opts)?;
    let mut scores: Vec<Option<SourceScore>> = vec![None; prompts.len()];
    let mut done: Vec<PromptCategory> = Vec::new();
    for c in prompts.entries() {
        if done.contains(c) {
            continue;
        }
        done.push(*c);
        let pos: Vec<usize> = (0..prompts.len()).filter(|&i| prompts.entries()[i] == *c).collect();
        // cost[j][t]: output pos[j] scored against reference pos[t], negated.
        let mut cost = vec![vec![0.0; pos.len()]; pos.len()];
        for (j, &e) in pos.iter().enumerate() {
            for (t, &r) in pos.iter().enumerate() {
                cost[j][t] = -evaluate_pair(&refs[r].samples, &est[e], opts.convention)?;
            }
        }
        let (_, perm) = best_assignment(&cost);
        for (j, &e) in pos.iter().enumerate() {
            scores[e] = Some(SourceScore { category: *c, db: -cost[j][perm[j]] });
        }
    }
    Ok(ItemResult {
        id: item.id.clone(),
        prompts: prompts.into_vec(),
        scores: scores.into_iter().map(|s| s.expect("every position is scored")).collect(),
    })
}

/// Scores every item; failing items are skipped and noted.
pub fn evaluate(model: Option<&Tuss<f32>>, items: &[EvalItem], opts: &EvalOptions) -> EvalReport {
    let results: Vec<Result<ItemResult>> = items.par_iter().map(|it| evaluate_item(model, it, opts)).collect();
    let mut per_item = Vec::new();
    let mut notes = Vec::new();
    if opts.single_category && !opts.oracle {
        notes.push("single-category protocol: one forward pass per category, each prompting only that category".into());
    }
    if opts.oracle {
        notes.push("oracle mode: estimates are the references".into());
    }
    for (it, r) in items.iter().zip(results) {
        match r {
            Ok(v) => per_item.push(v),
            Err(e) => notes.push(format!("skipped {}: {e}", it.id)),
        }
    }
    let per_category_mean = EvalReport::category_means(&per_item);
    EvalReport { convention: opts.convention, per_item, per_category_mean, notes }
}
