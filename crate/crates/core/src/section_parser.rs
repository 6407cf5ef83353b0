//! Splitting raw report text into named sections.
//!
//! A heading is recognised only at the start of a line (after optional spaces
//! or tabs), matched case-insensitively against the canonical heading names
//! and the alias table, and must be followed by a colon or a line break. The
//! body of a section runs from the end of its heading to the start of the
//! next heading line (or end of text) and is stored trimmed.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::Report;
use crate::error::{Error, Result};

pub const FINDINGS: &str = "FINDINGS";
pub const IMPRESSION: &str = "IMPRESSION";
pub const HISTORY: &str = "HISTORY";
pub const TECHNIQUE: &str = "TECHNIQUE";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("report `{id}`: empty input")]
    EmptyInput { id: String },
    #[error("report `{id}`: missing section {section}")]
    MissingSection { id: String, section: String },
    #[error("report `{id}`: section {section} appears more than once")]
    DuplicateSection { id: String, section: String },
    #[error("report `{id}`: section {section} is empty")]
    EmptySection { id: String, section: String },
}

/// Canonical heading names plus the variant spellings that map onto them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionLayout {
    pub headings: Vec<String>,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

impl Default for SectionLayout {
    fn default() -> Self {
        let aliases = [
            ("CONCLUSION", IMPRESSION),
            ("CONCLUSIONS", IMPRESSION),
            ("IMPRESSIONS", IMPRESSION),
            ("OBSERVATIONS", FINDINGS),
            ("CLINICAL HISTORY", HISTORY),
            ("INDICATION", HISTORY),
            ("TECHNIQUES", TECHNIQUE),
            ("PROCEDURE", TECHNIQUE),
        ];
        SectionLayout {
            headings: [HISTORY, TECHNIQUE, FINDINGS, IMPRESSION]
                .into_iter()
                .map(String::from)
                .collect(),
            aliases: aliases
                .into_iter()
                .map(|(a, c)| (a.to_string(), c.to_string()))
                .collect(),
        }
    }
}

fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_uppercase()
}

impl SectionLayout {
    /// Build a layout, normalising names and checking the alias table.
    pub fn new(headings: Vec<String>, aliases: BTreeMap<String, String>) -> Result<Self> {
        let layout = SectionLayout {
            headings: headings.iter().map(|h| normalize_name(h)).collect(),
            aliases: aliases
                .iter()
                .map(|(a, c)| (normalize_name(a), normalize_name(c)))
                .collect(),
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        for required in [FINDINGS, IMPRESSION] {
            if !self.headings.iter().any(|h| h == required) {
                return Err(Error::Config(format!(
                    "section layout must include {required}"
                )));
            }
        }
        for (alias, target) in &self.aliases {
            if !self.headings.contains(target) {
                return Err(Error::Config(format!(
                    "alias {alias} points at unknown heading {target}"
                )));
            }
            if self.headings.contains(alias) {
                return Err(Error::Config(format!(
                    "alias {alias} shadows a canonical heading"
                )));
            }
        }
        Ok(())
    }

    pub fn with_alias(mut self, alias: &str, canonical: &str) -> Result<Self> {
        self.aliases
            .insert(normalize_name(alias), normalize_name(canonical));
        self.validate()?;
        Ok(self)
    }

    /// Parse a layout from TOML text (`headings = [...]` and an `[aliases]` table).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: SectionLayout =
            toml::from_str(text).map_err(|e| Error::Config(format!("section layout: {e}")))?;
        SectionLayout::new(raw.headings, raw.aliases)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Map a heading spelling onto its canonical name.
    pub fn canonicalize(&self, name: &str) -> Option<String> {
        let n = normalize_name(name);
        if self.headings.contains(&n) {
            return Some(n);
        }
        self.aliases.get(&n).cloned()
    }

    /// All recognised spellings, longest first, paired with their canonical name.
    fn spellings(&self) -> Vec<(&str, &str)> {
        let mut all: Vec<(&str, &str)> = self
            .headings
            .iter()
            .map(|h| (h.as_str(), h.as_str()))
            .chain(self.aliases.iter().map(|(a, c)| (a.as_str(), c.as_str())))
            .collect();
        all.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
        all
    }
}

/// One heading occurrence and the byte ranges it owns in the raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    /// Byte offset of the heading word itself.
    pub offset: usize,
    /// From the start of the heading line through the optional colon.
    pub heading: Range<usize>,
    /// Untrimmed body, up to the next heading line.
    pub body: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub preamble: Range<usize>,
    pub segments: Vec<Segment>,
}

/// Match `spelling` at `p`, case-insensitively, letting any run of spaces or
/// tabs stand for each single space. Returns the end offset.
fn match_words(bytes: &[u8], p: usize, spelling: &str) -> Option<usize> {
    let mut q = p;
    for (i, word) in spelling.split(' ').enumerate() {
        if i > 0 {
            let start = q;
            while q < bytes.len() && (bytes[q] == b' ' || bytes[q] == b'\t') {
                q += 1;
            }
            if q == start {
                return None;
            }
        }
        let end = q + word.len();
        if end > bytes.len() || !bytes[q..end].eq_ignore_ascii_case(word.as_bytes()) {
            return None;
        }
        q = end;
    }
    Some(q)
}

/// Try to read a heading at `line_start`; returns (canonical, name offset, heading end).
fn match_heading<'a>(
    raw: &str,
    line_start: usize,
    spellings: &[(&str, &'a str)],
) -> Option<(&'a str, usize, usize)> {
    let bytes = raw.as_bytes();
    let mut p = line_start;
    while p < bytes.len() && (bytes[p] == b' ' || bytes[p] == b'\t') {
        p += 1;
    }
    for &(spelling, canonical) in spellings {
        let Some(end) = match_words(bytes, p, spelling) else {
            continue;
        };
        let mut q = end;
        while q < bytes.len() && (bytes[q] == b' ' || bytes[q] == b'\t') {
            q += 1;
        }
        match bytes.get(q) {
            Some(b':') => return Some((canonical, p, q + 1)),
            None | Some(b'\n') => return Some((canonical, p, end)),
            Some(b'\r') if bytes.get(q + 1) == Some(&b'\n') => return Some((canonical, p, end)),
            _ => {}
        }
    }
    None
}

/// Locate every heading and partition `raw` into preamble, heading and body ranges.
pub fn segment(raw: &str, layout: &SectionLayout) -> Segmentation {
    let spellings = layout.spellings();
    let mut found: Vec<(String, usize, Range<usize>)> = Vec::new();
    let mut line_start = 0;
    loop {
        if let Some((name, offset, end)) = match_heading(raw, line_start, &spellings) {
            found.push((name.to_string(), offset, line_start..end));
        }
        match raw[line_start..].find('\n') {
            Some(nl) => line_start += nl + 1,
            None => break,
        }
    }

    let preamble_end = found.first().map_or(raw.len(), |f| f.2.start);
    let mut segments = Vec::with_capacity(found.len());
    for i in 0..found.len() {
        let body_end = found.get(i + 1).map_or(raw.len(), |next| next.2.start);
        let (name, offset, heading) = &found[i];
        segments.push(Segment {
            name: name.clone(),
            offset: *offset,
            heading: heading.clone(),
            body: heading.end..body_end,
        });
    }
    Segmentation {
        preamble: 0..preamble_end,
        segments,
    }
}

/// Canonical heading names with the byte offset at which each occurs.
pub fn detect_headings(raw: &str, layout: &SectionLayout) -> Vec<(String, usize)> {
    segment(raw, layout)
        .segments
        .into_iter()
        .map(|s| (s.name, s.offset))
        .collect()
}

/// Parse a raw report into its sections.
///
/// Every section found is kept (HISTORY and TECHNIQUE included); only
/// FINDINGS and IMPRESSION become views.
pub fn parse_report(raw: &str, layout: &SectionLayout, id: &str) -> Result<Report, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::EmptyInput { id: id.to_string() });
    }
    let seg = segment(raw, layout);
    let mut sections = IndexMap::new();
    for s in seg.segments {
        let body = raw[s.body].trim().to_string();
        if sections.contains_key(&s.name) {
            return Err(ParseError::DuplicateSection {
                id: id.to_string(),
                section: s.name,
            });
        }
        sections.insert(s.name, body);
    }
    Report::from_sections(id, sections)
}
