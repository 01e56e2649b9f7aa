use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::diff::{parse_unified_diff, CodeSegments};
use crate::error::{Error, Result};

/// Hard cap on the length of a single ground-truth aspect phrase.
pub const MAX_ASPECT_WORDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    NonPatch,
    VulnerablePatch,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::NonPatch => 0,
            Label::VulnerablePatch => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::VulnerablePatch
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::NonPatch),
            1 => Ok(Label::VulnerablePatch),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// The four explainable key aspects of a vulnerability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    VulnerabilityType,
    RootCause,
    AttackVector,
    Impact,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [
        Aspect::VulnerabilityType,
        Aspect::RootCause,
        Aspect::AttackVector,
        Aspect::Impact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::VulnerabilityType => "vulnerability_type",
            Aspect::RootCause => "root_cause",
            Aspect::AttackVector => "attack_vector",
            Aspect::Impact => "impact",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.name() == s || a.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown aspect {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vulnerability_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_cause: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_vector: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact: Option<String>,
}

impl AspectSet {
    pub fn get(&self, aspect: Aspect) -> Option<&str> {
        match aspect {
            Aspect::VulnerabilityType => self.vulnerability_type.as_deref(),
            Aspect::RootCause => self.root_cause.as_deref(),
            Aspect::AttackVector => self.attack_vector.as_deref(),
            Aspect::Impact => self.impact.as_deref(),
        }
    }

    pub fn set(&mut self, aspect: Aspect, value: Option<String>) {
        let slot = match aspect {
            Aspect::VulnerabilityType => &mut self.vulnerability_type,
            Aspect::RootCause => &mut self.root_cause,
            Aspect::AttackVector => &mut self.attack_vector,
            Aspect::Impact => &mut self.impact,
        };
        *slot = value;
    }

    pub fn is_empty(&self) -> bool {
        Aspect::ALL.iter().all(|a| self.get(*a).is_none())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for aspect in Aspect::ALL {
            if let Some(v) = self.get(aspect) {
                if v.trim().is_empty() {
                    return Err(format!("aspect {aspect} is empty"));
                }
                let words = v.split_whitespace().count();
                if words > MAX_ASPECT_WORDS {
                    return Err(format!(
                        "aspect {aspect} has {words} words, cap is {MAX_ASPECT_WORDS}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One commit of the dataset.
///
/// `segments` is always the decomposition of `diff` and is never serialized.
/// Fields not known to this schema are kept in `extra` and written back out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub id: String,
    pub repo: String,
    pub message: String,
    pub diff: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspects: Option<AspectSet>,
    #[serde(default)]
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cve_ids: Option<Vec<String>>,
    #[serde(skip)]
    pub segments: CodeSegments,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl CommitRecord {
    /// Creates a record with segments computed from `diff`.
    pub fn new(
        id: impl Into<String>,
        repo: impl Into<String>,
        message: impl Into<String>,
        diff: impl Into<String>,
        label: Label,
    ) -> Result<Self> {
        let mut record = CommitRecord {
            id: id.into(),
            repo: repo.into(),
            message: message.into(),
            diff: diff.into(),
            label,
            aspects: None,
            language: String::new(),
            cve_ids: None,
            segments: CodeSegments::default(),
            extra: Map::new(),
        };
        record.refresh_segments()?;
        Ok(record)
    }

    pub fn with_aspects(mut self, aspects: AspectSet) -> Self {
        self.aspects = Some(aspects);
        self
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    pub fn refresh_segments(&mut self) -> Result<()> {
        self.segments = parse_unified_diff(&self.diff)?;
        Ok(())
    }

    pub fn aspect(&self, aspect: Aspect) -> Option<&str> {
        self.aspects.as_ref().and_then(|a| a.get(aspect))
    }

    /// Checks record-level invariants (not id uniqueness, which is dataset-level).
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidRecord {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if let Some(aspects) = &self.aspects {
            if !self.label.is_positive() {
                return Err(invalid("non-patch record must not carry aspects".into()));
            }
            aspects.validate().map_err(invalid)?;
        }
        Ok(())
    }
}
