//! Named prompt lists for common separation tasks.

use std::fmt;
use std::str::FromStr;

use tuss_core::{PromptCategory, PromptSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskPreset {
    /// Speech enhancement.
    Se,
    /// Speech separation.
    Ss,
    /// Speech separation in noise.
    NoisySs,
    /// Universal sound separation.
    Uss,
    /// Music source separation.
    Mss,
    /// Cinematic audio source separation.
    Cass,
}

impl TaskPreset {
    pub const ALL: [TaskPreset; 6] =
        [TaskPreset::Se, TaskPreset::Ss, TaskPreset::NoisySs, TaskPreset::Uss, TaskPreset::Mss, TaskPreset::Cass];

    pub fn name(self) -> &'static str {
        match self {
            TaskPreset::Se => "se",
            TaskPreset::Ss => "ss",
            TaskPreset::NoisySs => "noisy-ss",
            TaskPreset::Uss => "uss",
            TaskPreset::Mss => "mss",
            TaskPreset::Cass => "cass",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            TaskPreset::Se => "speech enhancement",
            TaskPreset::Ss => "speech separation",
            TaskPreset::NoisySs => "noisy speech separation",
            TaskPreset::Uss => "universal sound separation",
            TaskPreset::Mss => "music source separation",
            TaskPreset::Cass => "cinematic audio source separation",
        }
    }

    /// Whether the template repeats a category `n` times.
    pub fn needs_count(self) -> bool {
        matches!(self, TaskPreset::Ss | TaskPreset::NoisySs | TaskPreset::Uss)
    }

    /// Human-readable template, e.g. `speech x N, [sfx-mix]`.
    pub fn template(self) -> &'static str {
        match self {
            TaskPreset::Se => "speech, sfx-mix",
            TaskPreset::Ss => "speech x N",
            TaskPreset::NoisySs => "speech x N, [sfx-mix]",
            TaskPreset::Uss => "sfx x N",
            TaskPreset::Mss => "drums, bass, vocals, other-inst",
            TaskPreset::Cass => "speech, sfx-mix, music-mix",
        }
    }

    /// Expands the template. `n` is required for the repeated templates;
    /// `with_noise` adds the optional sfx-mix of noisy-ss.
    pub fn expand(self, n: Option<usize>, with_noise: bool) -> Result<PromptSet> {
        use PromptCategory::*;
        let count = || match n {
            Some(0) => Err(Error::Usage(format!("preset {} needs --n >= 1", self.name()))),
            Some(n) => Ok(n),
            None => Err(Error::Usage(format!("preset {} needs --n", self.name()))),
        };
        let entries = match self {
            TaskPreset::Se => vec![Speech, SfxMix],
            TaskPreset::Ss => vec![Speech; count()?],
            TaskPreset::NoisySs => {
                let mut v = vec![Speech; count()?];
                if with_noise {
                    v.push(SfxMix);
                }
                v
            }
            TaskPreset::Uss => vec![Sfx; count()?],
            TaskPreset::Mss => PromptCategory::INSTRUMENTS.to_vec(),
            TaskPreset::Cass => vec![Speech, SfxMix, MusicMix],
        };
        Ok(PromptSet::new(entries)?)
    }
}

impl fmt::Display for TaskPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        TaskPreset::ALL
            .into_iter()
            .find(|p| p.name() == norm || (norm == "noisyss" && *p == TaskPreset::NoisySs))
            .ok_or_else(|| Error::Usage(format!("unknown preset `{s}` (expected one of se, ss, noisy-ss, uss, mss, cass)")))
    }
}

/// Looks a preset up by name and expands it.
pub fn preset_lookup(name: &str, n: Option<usize>, with_noise: bool) -> Result<PromptSet> {
    name.parse::<TaskPreset>()?.expand(n, with_noise)
}

/// Parses a comma-separated prompt list such as `speech,sfx-mix`.
pub fn parse_prompt_list(list: &str) -> Result<PromptSet> {
    let entries = list
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<PromptCategory>().map_err(|e| Error::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok(PromptSet::new(entries)?)
}
