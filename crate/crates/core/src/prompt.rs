//! Prompt categories and the validity rules for prompt lists.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// The eight source categories a prompt can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "&'static str", try_from = "alloc::string::String")]
pub enum PromptCategory {
    Speech,
    Sfx,
    SfxMix,
    Drums,
    Bass,
    Vocals,
    OtherInst,
    MusicMix,
}

impl PromptCategory {
    pub const ALL: [PromptCategory; 8] = [
        PromptCategory::Speech,
        PromptCategory::Sfx,
        PromptCategory::SfxMix,
        PromptCategory::Drums,
        PromptCategory::Bass,
        PromptCategory::Vocals,
        PromptCategory::OtherInst,
        PromptCategory::MusicMix,
    ];

    pub const INSTRUMENTS: [PromptCategory; 4] = [
        PromptCategory::Drums,
        PromptCategory::Bass,
        PromptCategory::Vocals,
        PromptCategory::OtherInst,
    ];

    /// Stable, lower-case identifier used in files and on the command line.
    pub const fn name(self) -> &'static str {
        match self {
            PromptCategory::Speech => "speech",
            PromptCategory::Sfx => "sfx",
            PromptCategory::SfxMix => "sfx-mix",
            PromptCategory::Drums => "drums",
            PromptCategory::Bass => "bass",
            PromptCategory::Vocals => "vocals",
            PromptCategory::OtherInst => "other-inst",
            PromptCategory::MusicMix => "music-mix",
        }
    }

    /// Row of this category in the prompt table.
    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub const fn is_instrument(self) -> bool {
        matches!(
            self,
            PromptCategory::Drums | PromptCategory::Bass | PromptCategory::Vocals | PromptCategory::OtherInst
        )
    }

    /// Speech and SFX may appear several times in one prompt list.
    pub const fn is_repeatable(self) -> bool {
        matches!(self, PromptCategory::Speech | PromptCategory::Sfx)
    }

    pub const fn is_mix(self) -> bool {
        matches!(self, PromptCategory::SfxMix | PromptCategory::MusicMix)
    }
}

impl fmt::Display for PromptCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<PromptCategory> for &'static str {
    fn from(c: PromptCategory) -> Self {
        c.name()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown prompt category `{0}`")]
pub struct UnknownCategory(pub alloc::string::String);

impl FromStr for PromptCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: alloc::string::String = s
            .trim()
            .chars()
            .map(|c| if c == '_' || c == ' ' { '-' } else { c.to_ascii_lowercase() })
            .collect();
        let cat = match norm.as_str() {
            "speech" => PromptCategory::Speech,
            "sfx" => PromptCategory::Sfx,
            "sfx-mix" | "sfxmix" => PromptCategory::SfxMix,
            "drums" => PromptCategory::Drums,
            "bass" => PromptCategory::Bass,
            "vocals" => PromptCategory::Vocals,
            "other-inst" | "other" | "otherinst" => PromptCategory::OtherInst,
            "music-mix" | "musicmix" => PromptCategory::MusicMix,
            _ => return Err(UnknownCategory(s.into())),
        };
        Ok(cat)
    }
}

impl TryFrom<alloc::string::String> for PromptCategory {
    type Error = UnknownCategory;
    fn try_from(s: alloc::string::String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Violated prompt-combination rule.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt list is empty")]
    Empty,
    #[error("SFX and SFX-mix cannot coexist")]
    SfxWithSfxMix,
    #[error("Music-mix cannot coexist with individual instruments ({0})")]
    MusicMixWithInstrument(PromptCategory),
    #[error("category {0} may appear at most once")]
    Repeated(PromptCategory),
}

/// Checks the combination rules for an arbitrary category list.
pub fn check_prompts(entries: &[PromptCategory]) -> Result<(), PromptError> {
    if entries.is_empty() {
        return Err(PromptError::Empty);
    }
    let mut counts = [0usize; 8];
    for c in entries {
        counts[c.index()] += 1;
    }
    let has = |c: PromptCategory| counts[c.index()] > 0;
    if has(PromptCategory::Sfx) && has(PromptCategory::SfxMix) {
        return Err(PromptError::SfxWithSfxMix);
    }
    if has(PromptCategory::MusicMix) {
        if let Some(inst) = PromptCategory::INSTRUMENTS.iter().find(|c| has(**c)) {
            return Err(PromptError::MusicMixWithInstrument(*inst));
        }
    }
    for c in PromptCategory::ALL {
        if !c.is_repeatable() && counts[c.index()] > 1 {
            return Err(PromptError::Repeated(c));
        }
    }
    Ok(())
}

/// Ordered, validated list of prompts. Output order follows prompt order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<PromptCategory>", into = "Vec<PromptCategory>")]
pub struct PromptSet {
    entries: Vec<PromptCategory>,
}

impl PromptSet {
    pub fn new(entries: Vec<PromptCategory>) -> Result<Self, PromptError> {
        check_prompts(&entries)?;
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PromptCategory] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Always false for a constructed set; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, category: PromptCategory) -> usize {
        self.entries.iter().filter(|c| **c == category).count()
    }

    /// Sub-list at the given positions, in the order given.
    pub fn select(&self, positions: &[usize]) -> Result<Self, PromptError> {
        Self::new(positions.iter().map(|&i| self.entries[i]).collect())
    }

    pub fn into_vec(self) -> Vec<PromptCategory> {
        self.entries
    }
}

impl TryFrom<Vec<PromptCategory>> for PromptSet {
    type Error = PromptError;
    fn try_from(v: Vec<PromptCategory>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PromptSet> for Vec<PromptCategory> {
    fn from(p: PromptSet) -> Self {
        p.entries
    }
}

impl fmt::Display for PromptSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(c.name())?;
        }
        Ok(())
    }
}

impl FromStr for PromptSet {
    type Err = PromptParseError;

    /// Parses a comma-separated list such as `speech,sfx-mix`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cats = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.parse::<PromptCategory>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PromptSet::new(cats)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptParseError {
    #[error(transparent)]
    Unknown(#[from] UnknownCategory),
    #[error(transparent)]
    Invalid(#[from] PromptError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use PromptCategory::*;

    #[test]
    fn names_round_trip_case_insensitively() {
        for c in PromptCategory::ALL {
            assert_eq!(c.name().parse::<PromptCategory>().unwrap(), c);
            assert_eq!(c.name().to_uppercase().parse::<PromptCategory>().unwrap(), c);
        }
        assert!("piano".parse::<PromptCategory>().is_err());
    }

    #[test]
    fn exclusion_rules() {
        assert_eq!(PromptSet::new(vec![Sfx, SfxMix]).unwrap_err(), PromptError::SfxWithSfxMix);
        assert_eq!(
            PromptSet::new(vec![MusicMix, Bass]).unwrap_err(),
            PromptError::MusicMixWithInstrument(Bass)
        );
        assert_eq!(PromptSet::new(vec![Drums, Drums]).unwrap_err(), PromptError::Repeated(Drums));
        assert_eq!(PromptSet::new(vec![]).unwrap_err(), PromptError::Empty);
        assert!(PromptSet::new(vec![Speech, Speech, Sfx, Sfx]).is_ok());
        assert!(PromptSet::new(vec![Speech, SfxMix, MusicMix]).is_ok());
    }

    #[test]
    fn error_message_names_rule() {
        let msg = alloc::format!("{}", "sfx,sfx-mix".parse::<PromptSet>().unwrap_err());
        assert_eq!(msg, "SFX and SFX-mix cannot coexist");
    }
}
