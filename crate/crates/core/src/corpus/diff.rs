//! Unified diff decomposition into added, deleted and unchanged lines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lines recovered from the hunk bodies of a unified diff, prefix stripped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSegments {
    pub added: Vec<String>,
    pub deleted: Vec<String>,
    pub unchanged: Vec<String>,
}

impl CodeSegments {
    pub fn total_lines(&self) -> usize {
        self.added.len() + self.deleted.len() + self.unchanged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total_lines() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HunkRange {
    old_lines: usize,
    new_lines: usize,
}

/// Parses `@@ -a[,b] +c[,d] @@ ...`. Returns `None` on malformed input.
fn parse_hunk_header(line: &str) -> Option<HunkRange> {
    let rest = line.strip_prefix("@@ ")?;
    let end = rest.find(" @@")?;
    let mut parts = rest[..end].split_whitespace();
    let old = parts.next()?.strip_prefix('-')?;
    let new = parts.next()?.strip_prefix('+')?;
    if parts.next().is_some() {
        return None;
    }
    fn count(range: &str) -> Option<usize> {
        match range.split_once(',') {
            Some((start, len)) => {
                start.parse::<usize>().ok()?;
                len.parse().ok()
            }
            None => {
                range.parse::<usize>().ok()?;
                Some(1)
            }
        }
    }
    Some(HunkRange {
        old_lines: count(old)?,
        new_lines: count(new)?,
    })
}

fn is_binary_marker(line: &str) -> bool {
    line == "GIT binary patch" || (line.starts_with("Binary files ") && line.ends_with(" differ"))
}

enum State {
    /// Between files or inside file headers.
    Outside,
    /// Current file is binary; everything up to the next `diff --git` is ignored.
    SkipFile,
    Hunk { old_left: usize, new_left: usize },
}

/// Splits a unified diff into added / deleted / unchanged code lines.
///
/// Hunk bodies are delimited by the line counts in their headers, so a
/// deleted line that happens to read `-- foo` is never mistaken for a file
/// header. Binary-file sections are skipped without error.
pub fn parse_unified_diff(diff_text: &str) -> Result<CodeSegments> {
    let mut segments = CodeSegments::default();
    let mut state = State::Outside;
    let mut offset = 0usize;

    for raw in diff_text.split_inclusive('\n') {
        let line_offset = offset;
        offset += raw.len();
        let line = raw
            .strip_suffix('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .unwrap_or(raw);

        if let State::Hunk { old_left, new_left } = &mut state {
            if *old_left > 0 || *new_left > 0 {
                let mut chars = line.chars();
                match chars.next() {
                    Some('+') if *new_left > 0 => {
                        segments.added.push(chars.as_str().to_string());
                        *new_left -= 1;
                        continue;
                    }
                    Some('-') if *old_left > 0 => {
                        segments.deleted.push(chars.as_str().to_string());
                        *old_left -= 1;
                        continue;
                    }
                    Some(' ') if *old_left > 0 && *new_left > 0 => {
                        segments.unchanged.push(chars.as_str().to_string());
                        *old_left -= 1;
                        *new_left -= 1;
                        continue;
                    }
                    // Some tools strip the single space of empty context lines.
                    None if *old_left > 0 && *new_left > 0 => {
                        segments.unchanged.push(String::new());
                        *old_left -= 1;
                        *new_left -= 1;
                        continue;
                    }
                    Some('\\') => continue,
                    // Short hunk: fall through and treat as a header line.
                    _ => state = State::Outside,
                }
            } else if line.starts_with('\\') {
                continue;
            } else {
                state = State::Outside;
            }
        }

        if line.starts_with("diff --git ") {
            state = State::Outside;
            continue;
        }
        if matches!(state, State::SkipFile) {
            continue;
        }
        if is_binary_marker(line) {
            state = State::SkipFile;
            continue;
        }
        if line.starts_with("@@") {
            let range = parse_hunk_header(line).ok_or_else(|| Error::DiffParse {
                offset: line_offset,
                line: line.to_string(),
            })?;
            state = State::Hunk {
                old_left: range.old_lines,
                new_left: range.new_lines,
            };
        }
        // Anything else outside a hunk (index, ---/+++, mode lines, preamble) is a header.
    }
    Ok(segments)
}
