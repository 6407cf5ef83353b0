//! Reports, label spaces and the labeled / unlabeled datasets built from them.
//!
//! On disk a dataset is JSONL: one object per line with `id`, `sections`
//! (heading → text) and, for labeled data, `labels` (task → class name).
//! A record may carry a raw `text` field instead of `sections`; it is then
//! run through the section parser.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::section_parser::{self, ParseError, SectionLayout, FINDINGS, IMPRESSION};
use crate::seed;

/// Which text of a report a classifier reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Fnd,
    Imp,
    Concat,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Fnd => "fnd",
            View::Imp => "imp",
            View::Concat => "concat",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fnd" | "findings" => Ok(View::Fnd),
            "imp" | "impression" => Ok(View::Imp),
            "concat" => Ok(View::Concat),
            other => Err(Error::Config(format!("unknown view `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub sections: IndexMap<String, String>,
}

impl Report {
    /// Build a report from canonical section names; FINDINGS and IMPRESSION
    /// must be present and non-blank.
    pub fn from_sections(
        id: impl Into<String>,
        sections: IndexMap<String, String>,
    ) -> Result<Self, ParseError> {
        let id = id.into();
        for required in [FINDINGS, IMPRESSION] {
            match sections.get(required) {
                None => {
                    return Err(ParseError::MissingSection {
                        id,
                        section: required.to_string(),
                    })
                }
                Some(text) if text.trim().is_empty() => {
                    return Err(ParseError::EmptySection {
                        id,
                        section: required.to_string(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(Report { id, sections })
    }

    pub fn fnd_text(&self) -> &str {
        &self.sections[FINDINGS]
    }

    pub fn imp_text(&self) -> &str {
        &self.sections[IMPRESSION]
    }

    pub fn view_text(&self, view: View) -> Cow<'_, str> {
        match view {
            View::Fnd => Cow::Borrowed(self.fnd_text()),
            View::Imp => Cow::Borrowed(self.imp_text()),
            View::Concat => Cow::Owned(concat_views(self)),
        }
    }
}

/// Findings and Impression joined by a single space, without section titles.
pub fn concat_views(r: &Report) -> String {
    format!("{} {}", r.fnd_text().trim(), r.imp_text().trim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub task_name: String,
    pub class_names: Vec<String>,
}

impl LabelSpace {
    pub fn new(task_name: impl Into<String>, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Config(
                "a label space needs at least two classes".into(),
            ));
        }
        let mut seen = HashSet::new();
        for c in &class_names {
            if !seen.insert(c.to_lowercase()) {
                return Err(Error::Config(format!("duplicate class name `{c}`")));
            }
        }
        Ok(LabelSpace {
            task_name: task_name.into(),
            class_names,
        })
    }

    /// Brain tumor presence.
    pub fn bt() -> Self {
        LabelSpace {
            task_name: "bt".into(),
            class_names: vec!["absent".into(), "present".into()],
        }
    }

    pub fn aggressiveness() -> Self {
        LabelSpace {
            task_name: "aggressiveness".into(),
            class_names: vec![
                "non_aggressive".into(),
                "aggressive".into(),
                "possibly_aggressive".into(),
            ],
        }
    }

    pub fn by_task(task: &str) -> Result<Self> {
        match task.to_ascii_lowercase().as_str() {
            "bt" => Ok(Self::bt()),
            "aggressiveness" | "agg" => Ok(Self::aggressiveness()),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }

    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    /// Resolve a class by name (case-insensitive) or by its decimal index.
    pub fn resolve(&self, name: &str) -> Option<Label> {
        let name = name.trim();
        if let Some(i) = self
            .class_names
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
        {
            return Some(Label(i));
        }
        name.parse::<usize>()
            .ok()
            .filter(|&i| i < self.k())
            .map(Label)
    }

    pub fn name_of(&self, label: Label) -> &str {
        &self.class_names[label.0]
    }

    pub fn check(&self, label: Label) -> Result<()> {
        if label.0 < self.k() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "label {} outside task `{}` with {} classes",
                label.0,
                self.task_name,
                self.k()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub space: LabelSpace,
    pub items: Vec<(Report, Label)>,
}

impl LabeledDataset {
    pub fn new(space: LabelSpace, items: Vec<(Report, Label)>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(items.len());
        for (r, y) in &items {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            space.check(*y)?;
        }
        Ok(LabeledDataset { space, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(r, _)| r.id.as_str())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.items.iter().map(|(_, y)| *y).collect()
    }

    fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            space: self.space.clone(),
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledDataset {
    pub items: Vec<Report>,
}

impl UnlabeledDataset {
    pub fn new(items: Vec<Report>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(items.len());
        for r in &items {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(UnlabeledDataset { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The first `n` reports.
    pub fn truncated(&self, n: usize) -> UnlabeledDataset {
        UnlabeledDataset {
            items: self.items[..n.min(self.items.len())].to_vec(),
        }
    }
}

/// Fail if any report id occurs in more than one of the given datasets.
pub fn check_disjoint(labeled: &[&LabeledDataset], pool: &UnlabeledDataset) -> Result<()> {
    let mut seen = HashSet::new();
    let ids = labeled
        .iter()
        .flat_map(|d| d.ids())
        .chain(pool.items.iter().map(|r| r.id.as_str()));
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::Contract(format!(
                "report `{id}` appears in more than one dataset"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sections: Option<IndexMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<BTreeMap<String, String>>,
}

fn record_report(rec: &Record, layout: &SectionLayout, line: usize) -> Result<Report> {
    let parsed = match (&rec.sections, &rec.text) {
        (Some(sections), _) => {
            let mut canon = IndexMap::new();
            for (name, text) in sections {
                let key = layout
                    .canonicalize(name)
                    .unwrap_or_else(|| name.trim().to_ascii_uppercase());
                if canon.insert(key.clone(), text.clone()).is_some() {
                    return Err(Error::Parse(ParseError::DuplicateSection {
                        id: rec.id.clone(),
                        section: key,
                    }));
                }
            }
            Report::from_sections(rec.id.clone(), canon)
        }
        (None, Some(text)) => section_parser::parse_report(text, layout, &rec.id),
        (None, None) => {
            return Err(Error::Record {
                line,
                message: format!("record `{}` has neither `sections` nor `text`", rec.id),
            })
        }
    };
    parsed.map_err(|e| Error::Record {
        line,
        message: e.to_string(),
    })
}

fn read_records(path: &Path) -> Result<Vec<(usize, Record)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn load_labeled(path: &Path, space: &LabelSpace) -> Result<LabeledDataset> {
    load_labeled_with(path, space, &SectionLayout::default())
}

pub fn load_labeled_with(
    path: &Path,
    space: &LabelSpace,
    layout: &SectionLayout,
) -> Result<LabeledDataset> {
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (line, rec) in read_records(path)? {
        let report = record_report(&rec, layout, line)?;
        let name = rec
            .labels
            .as_ref()
            .and_then(|l| {
                l.iter()
                    .find(|(task, _)| task.eq_ignore_ascii_case(&space.task_name))
                    .map(|(_, v)| v.as_str())
            })
            .ok_or_else(|| Error::Record {
                line,
                message: format!(
                    "record `{}` has no label for task `{}`",
                    rec.id, space.task_name
                ),
            })?;
        let label = space.resolve(name).ok_or_else(|| Error::Record {
            line,
            message: format!(
                "record `{}`: `{name}` is not a class of task `{}`",
                rec.id, space.task_name
            ),
        })?;
        if !ids.insert(report.id.clone()) {
            return Err(Error::DuplicateId(report.id));
        }
        items.push((report, label));
    }
    Ok(LabeledDataset {
        space: space.clone(),
        items,
    })
}

/// Load reports without labels; any `labels` field present is ignored.
pub fn load_unlabeled(path: &Path) -> Result<UnlabeledDataset> {
    load_unlabeled_with(path, &SectionLayout::default())
}

pub fn load_unlabeled_with(path: &Path, layout: &SectionLayout) -> Result<UnlabeledDataset> {
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (line, rec) in read_records(path)? {
        let report = record_report(&rec, layout, line)?;
        if !ids.insert(report.id.clone()) {
            return Err(Error::DuplicateId(report.id));
        }
        items.push(report);
    }
    Ok(UnlabeledDataset { items })
}

fn write_records(path: &Path, records: impl Iterator<Item = Record>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_labeled(data: &LabeledDataset, path: &Path) -> Result<()> {
    write_records(
        path,
        data.items.iter().map(|(r, y)| Record {
            id: r.id.clone(),
            sections: Some(r.sections.clone()),
            text: None,
            labels: Some(BTreeMap::from([(
                data.space.task_name.clone(),
                data.space.name_of(*y).to_string(),
            )])),
        }),
    )
}

pub fn save_unlabeled(data: &UnlabeledDataset, path: &Path) -> Result<()> {
    write_records(
        path,
        data.items.iter().map(|r| Record {
            id: r.id.clone(),
            sections: Some(r.sections.clone()),
            text: None,
            labels: None,
        }),
    )
}

#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: LabeledDataset,
    pub valid: LabeledDataset,
    pub test: LabeledDataset,
}

/// Shuffle indices `0..n` with a seeded generator and deal them round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut out = vec![Vec::with_capacity(n / folds.max(1) + 1); folds];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    out
}

/// Cross-validation triples: triple `i` tests on fold `i`, validates on fold
/// `i + 1 (mod folds)` and trains on the rest.
pub fn split_k_folds(data: &LabeledDataset, folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if folds < 3 {
        return Err(Error::Config(format!(
            "need at least 3 folds for train/valid/test roles, got {folds}"
        )));
    }
    if data.len() < folds {
        return Err(Error::Config(format!(
            "{} samples cannot fill {folds} folds",
            data.len()
        )));
    }
    let assignment = fold_assignment(data.len(), folds, seed);
    Ok((0..folds)
        .map(|i| {
            let v = (i + 1) % folds;
            let train: Vec<usize> = (0..folds)
                .filter(|&f| f != i && f != v)
                .flat_map(|f| assignment[f].iter().copied())
                .collect();
            FoldSplit {
                fold: i,
                train: data.subset(&train),
                valid: data.subset(&assignment[v]),
                test: data.subset(&assignment[i]),
            }
        })
        .collect())
}
