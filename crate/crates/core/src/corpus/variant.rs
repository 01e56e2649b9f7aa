use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::diff::CodeSegments;
use super::record::CommitRecord;
use crate::error::Error;

/// Which parts of a commit the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputVariant {
    MessageOnly,
    ChangedCodeOnly,
    AllCodeOnly,
    MessageAndChangedCode,
    MessageAndAllCode,
}

impl InputVariant {
    pub const ALL: [InputVariant; 5] = [
        InputVariant::MessageOnly,
        InputVariant::ChangedCodeOnly,
        InputVariant::AllCodeOnly,
        InputVariant::MessageAndChangedCode,
        InputVariant::MessageAndAllCode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InputVariant::MessageOnly => "message-only",
            InputVariant::ChangedCodeOnly => "changed-code-only",
            InputVariant::AllCodeOnly => "all-code-only",
            InputVariant::MessageAndChangedCode => "message-and-changed-code",
            InputVariant::MessageAndAllCode => "message-and-all-code",
        }
    }

    pub fn uses_message(self) -> bool {
        matches!(
            self,
            InputVariant::MessageOnly
                | InputVariant::MessageAndChangedCode
                | InputVariant::MessageAndAllCode
        )
    }

    pub fn uses_unchanged(self) -> bool {
        matches!(
            self,
            InputVariant::AllCodeOnly | InputVariant::MessageAndAllCode
        )
    }

    pub fn uses_code(self) -> bool {
        self != InputVariant::MessageOnly
    }
}

impl fmt::Display for InputVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        InputVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown input variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInput {
    pub message_text: String,
    pub code_text: String,
    pub variant: InputVariant,
}

/// Joins code lines with their change-kind prefix: added, then deleted, then
/// (optionally) unchanged lines.
pub fn code_text(segments: &CodeSegments, include_unchanged: bool) -> String {
    let mut lines = Vec::with_capacity(segments.total_lines());
    lines.extend(segments.added.iter().map(|l| format!("+{l}")));
    lines.extend(segments.deleted.iter().map(|l| format!("-{l}")));
    if include_unchanged {
        lines.extend(segments.unchanged.iter().map(|l| format!(" {l}")));
    }
    lines.join("\n")
}

pub fn build_input(record: &CommitRecord, variant: InputVariant) -> ModelInput {
    build_input_from_parts(&record.message, &record.segments, variant)
}

pub fn build_input_from_parts(
    message: &str,
    segments: &CodeSegments,
    variant: InputVariant,
) -> ModelInput {
    ModelInput {
        message_text: if variant.uses_message() {
            message.to_string()
        } else {
            String::new()
        },
        code_text: if variant.uses_code() {
            code_text(segments, variant.uses_unchanged())
        } else {
            String::new()
        },
        variant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn record() -> CommitRecord {
        let mut r = CommitRecord::new("r1", "repo", "fix npe", "", Label::VulnerablePatch).unwrap();
        r.segments = CodeSegments {
            added: vec!["x=1".into()],
            deleted: vec!["x=0".into()],
            unchanged: vec!["y=2".into()],
        };
        r
    }

    #[test]
    fn message_only() {
        let input = build_input(&record(), InputVariant::MessageOnly);
        assert_eq!(input.message_text, "fix npe");
        assert_eq!(input.code_text, "");
    }

    #[test]
    fn changed_code_only() {
        let input = build_input(&record(), InputVariant::ChangedCodeOnly);
        assert_eq!(input.message_text, "");
        assert_eq!(input.code_text, "+x=1\n-x=0");
    }

    #[test]
    fn all_variants() {
        let r = record();
        let got: Vec<(String, String)> = InputVariant::ALL
            .iter()
            .map(|v| {
                let i = build_input(&r, *v);
                (i.message_text, i.code_text)
            })
            .collect();
        assert_eq!(
            got,
            vec![
                ("fix npe".into(), "".into()),
                ("".into(), "+x=1\n-x=0".into()),
                ("".into(), "+x=1\n-x=0\n y=2".into()),
                ("fix npe".into(), "+x=1\n-x=0".into()),
                ("fix npe".into(), "+x=1\n-x=0\n y=2".into()),
            ]
        );
    }

    #[test]
    fn variant_names_parse() {
        for v in InputVariant::ALL {
            assert_eq!(v.name().parse::<InputVariant>().unwrap(), v);
        }
        assert!("message".parse::<InputVariant>().is_err());
    }
}
