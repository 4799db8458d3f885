//! Line-delimited JSON manifests and mixing recipes, and a WAV-backed
//! [`SourceProvider`].
//!
//! A manifest line looks like
//! `{"path": "speech/a.wav", "category": "speech", "sample_rate_hz": 16000, "num_samples": 96000, "split": "train"}`.
//! `sample_rate_hz` and `num_samples` may be omitted, in which case the file
//! header is read. Blank lines and lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tuss_core::mixture::{CorpusManifest, MixturePlan, SlotPlan, SourcePart, SourceProvider, SourceRecord, Split};
use tuss_core::PromptCategory;

use crate::error::{Error, Result};
use crate::wav::{probe_wav, read_wav_window};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    path: String,
    category: String,
    sample_rate_hz: Option<u32>,
    num_samples: Option<usize>,
    #[serde(default = "default_split")]
    split: String,
}

fn default_split() -> String {
    "train".into()
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_category(path: &Path, line: usize, token: &str) -> Result<PromptCategory> {
    token.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("unknown category `{token}`"),
    })
}

/// Directory relative paths in `manifest` are resolved against.
pub fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parses and validates a manifest. Duplicate paths are kept and listed in
/// [`CorpusManifest::warnings`].
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let base = base_dir(path);
    let mut records = Vec::new();
    for (line, l) in data_lines(&text) {
        let parse = |message: String| Error::Parse { path: path.to_path_buf(), line, message };
        let raw: RawRecord = serde_json::from_str(l).map_err(|e| parse(e.to_string()))?;
        let category = parse_category(path, line, &raw.category)?;
        let split: Split = raw.split.parse().map_err(|e: tuss_core::Error| parse(e.to_string()))?;
        let (rate, n) = match (raw.sample_rate_hz, raw.num_samples) {
            (Some(r), Some(n)) => (r, n),
            (r, n) => {
                let (pr, pn) = probe_wav(base.join(&raw.path)).map_err(|e| parse(e.to_string()))?;
                (r.unwrap_or(pr), n.unwrap_or(pn))
            }
        };
        let rec = SourceRecord { path: raw.path, category, sample_rate_hz: rate, num_samples: n, split };
        rec.validate().map_err(|e| parse(e.to_string()))?;
        records.push(rec);
    }
    Ok(CorpusManifest::new(records)?)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SourceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads windows straight from WAV files under `root`.
#[derive(Debug, Clone)]
pub struct FileProvider {
    root: PathBuf,
}

impl FileProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Provider for the files of the manifest at `manifest_path`.
    pub fn for_manifest(manifest_path: &Path) -> Self {
        Self::new(base_dir(manifest_path))
    }
}

impl SourceProvider for FileProvider {
    fn read(&self, record: &SourceRecord, offset: usize, len: usize) -> tuss_core::Result<Vec<f32>> {
        let (samples, rate) =
            read_wav_window(self.root.join(&record.path), offset, len).map_err(|e| tuss_core::Error::Source(e.to_string()))?;
        if rate != record.sample_rate_hz {
            return Err(tuss_core::Error::Source(format!(
                "{}: file is {rate} Hz but the manifest says {} Hz",
                record.path, record.sample_rate_hz
            )));
        }
        Ok(samples)
    }
}

/// One line of a recipe file: a record contribution plus where and how loud
/// it goes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecipeLine {
    mixture: usize,
    slot: usize,
    prompt: PromptCategory,
    /// Gain of the prompted source.
    gain_db: f64,
    path: String,
    category: PromptCategory,
    sample_rate_hz: u32,
    num_samples: usize,
    split: Split,
    offset_samples: usize,
    pad_samples: usize,
    /// Gain of this constituent inside a submix; 0 for single sources.
    part_gain_db: f64,
    output_samples: usize,
    output_rate_hz: u32,
}

pub fn write_recipes(path: impl AsRef<Path>, plans: &[MixturePlan]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (mixture, plan) in plans.iter().enumerate() {
        for (slot, s) in plan.slots.iter().enumerate() {
            for p in &s.parts {
                let line = RecipeLine {
                    mixture,
                    slot,
                    prompt: s.prompt,
                    gain_db: s.gain_db,
                    path: p.record.path.clone(),
                    category: p.record.category,
                    sample_rate_hz: p.record.sample_rate_hz,
                    num_samples: p.record.num_samples,
                    split: p.record.split,
                    offset_samples: p.offset_samples,
                    pad_samples: p.pad_samples,
                    part_gain_db: p.gain_db,
                    output_samples: plan.num_samples,
                    output_rate_hz: plan.sample_rate_hz,
                };
                serde_json::to_writer(&mut w, &line).expect("recipe lines serialize");
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_recipes(path: impl AsRef<Path>) -> Result<Vec<MixturePlan>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut plans: BTreeMap<usize, (MixturePlan, BTreeMap<usize, SlotPlan>)> = BTreeMap::new();
    for (line, l) in data_lines(&text) {
        let parse = |message: String| Error::Parse { path: path.to_path_buf(), line, message };
        let r: RecipeLine = serde_json::from_str(l).map_err(|e| parse(e.to_string()))?;
        let record = SourceRecord {
            path: r.path,
            category: r.category,
            sample_rate_hz: r.sample_rate_hz,
            num_samples: r.num_samples,
            split: r.split,
        };
        record.validate().map_err(|e| parse(e.to_string()))?;
        let (plan, slots) = plans.entry(r.mixture).or_insert_with(|| {
            (MixturePlan { num_samples: r.output_samples, sample_rate_hz: r.output_rate_hz, slots: Vec::new() }, BTreeMap::new())
        });
        if plan.num_samples != r.output_samples || plan.sample_rate_hz != r.output_rate_hz {
            return Err(parse(format!("mixture {} changes its output length or rate", r.mixture)));
        }
        let slot = slots.entry(r.slot).or_insert_with(|| SlotPlan { prompt: r.prompt, gain_db: r.gain_db, parts: Vec::new() });
        if slot.prompt != r.prompt || slot.gain_db != r.gain_db {
            return Err(parse(format!("mixture {} slot {} changes its prompt or gain", r.mixture, r.slot)));
        }
        slot.parts.push(SourcePart { record, offset_samples: r.offset_samples, pad_samples: r.pad_samples, gain_db: r.part_gain_db });
    }
    let mut out = Vec::with_capacity(plans.len());
    for (id, (mut plan, slots)) in plans {
        plan.slots = slots.into_values().collect();
        plan.prompts().map_err(|e| Error::Parse { path: path.to_path_buf(), line: 0, message: format!("mixture {id}: {e}") })?;
        out.push(plan);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use tuss_core::dsp::AudioBuffer;
    use tuss_core::mixture::{MixtureEngine, PromptSamplerConfig};

    use crate::wav::write_wav;

    fn tone(n: usize, f: f32) -> Vec<f32> {
        (0..n).map(|i| (i as f32 * f).sin() * 0.3).collect()
    }

    #[test]
    fn manifest_parsing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.jsonl");
        write_wav(dir.path().join("c.wav"), &AudioBuffer::new(tone(400, 0.2), 8000).unwrap()).unwrap();
        fs::write(
            &m,
            concat!(
                "{\"path\": \"a.wav\", \"category\": \"speech\", \"sample_rate_hz\": 16000, \"num_samples\": 100, \"split\": \"train\"}\n",
                "# comment\n\n",
                "{\"path\": \"b.wav\", \"category\": \"drums\", \"sample_rate_hz\": 44100, \"num_samples\": 50, \"split\": \"valid\"}\n",
                "{\"path\": \"c.wav\", \"category\": \"sfx-mix\"}\n",
            ),
        )
        .unwrap();
        let man = load_manifest(&m).unwrap();
        assert_eq!(man.len(), 3);
        assert_eq!(man.count(Split::Train, PromptCategory::Speech), 1);
        assert_eq!(man.count(Split::Valid, PromptCategory::Drums), 1);
        assert_eq!(man.records()[2].num_samples, 400);
        assert_eq!(man.records()[2].sample_rate_hz, 8000);

        fs::write(&m, "{\"path\": \"a.wav\", \"category\": \"speech\", \"sample_rate_hz\": 1, \"num_samples\": 1}\n{\"path\": \"p.wav\", \"category\": \"piano\", \"sample_rate_hz\": 1, \"num_samples\": 1}\n").unwrap();
        let msg = load_manifest(&m).unwrap_err().to_string();
        assert!(msg.contains(":2:") && msg.contains("piano"), "{msg}");

        fs::write(&m, "{\"path\": \"a.wav\", \"category\": \"speech\", \"sample_rate_hz\": 1, \"num_samples\": 0}\n").unwrap();
        assert!(load_manifest(&m).unwrap_err().to_string().contains(":1:"));

        let dup = "{\"path\": \"a.wav\", \"category\": \"speech\", \"sample_rate_hz\": 1, \"num_samples\": 3}\n";
        fs::write(&m, format!("{dup}{dup}")).unwrap();
        assert_eq!(load_manifest(&m).unwrap().warnings().len(), 1);
    }

    #[test]
    fn recipes_round_trip_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for (i, c) in PromptCategory::ALL.iter().enumerate() {
            let name = format!("{c}.wav");
            write_wav(dir.path().join(&name), &AudioBuffer::new(tone(4000, 0.05 + 0.03 * i as f32), 8000).unwrap()).unwrap();
            records.push(SourceRecord { path: name, category: *c, sample_rate_hz: 8000, num_samples: 4000, split: Split::Train });
        }
        let mpath = dir.path().join("m.jsonl");
        write_manifest(&mpath, &records).unwrap();
        let man = load_manifest(&mpath).unwrap();
        let provider = FileProvider::for_manifest(&mpath);
        let cfg = PromptSamplerConfig { sample_rate_hz: 8000, submix_probability: 1.0, ..Default::default() };
        let engine = MixtureEngine::new(&man, &provider, &cfg, Split::Train).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let examples: Vec<_> = (0..6).map(|_| engine.next_example(0.25, &mut rng).unwrap()).collect();
        let plans: Vec<MixturePlan> = examples.iter().map(|e| e.plan.clone()).collect();
        let rpath = dir.path().join("r.jsonl");
        write_recipes(&rpath, &plans).unwrap();
        let back = load_recipes(&rpath).unwrap();
        assert_eq!(back, plans);
        for (p, e) in back.iter().zip(&examples) {
            assert_eq!(&engine.realize(p).unwrap(), e);
        }
    }
}
