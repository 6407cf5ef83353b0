//! Synthetic two-view report corpora.
//!
//! Each report draws a class from the priors, then fills its Findings and
//! Impression sections independently: every token is, with probability equal
//! to that view's signal, a uniform draw from the class's private vocabulary
//! for the view, and otherwise a uniform draw from a noise vocabulary shared
//! by all classes and both views. The two views are therefore conditionally
//! independent given the class.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabelSpace, LabeledDataset, Report, UnlabeledDataset, View};
use crate::error::{Error, Result};
use crate::section_parser::{parse_report, SectionLayout};
use crate::seed;
use crate::semisup_engine::PseudoLabeledSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub space: LabelSpace,
    pub class_priors: Vec<f64>,
    /// Size of each class's private Findings vocabulary.
    pub fnd_vocab_per_class: usize,
    /// Size of each class's private Impression vocabulary.
    pub imp_vocab_per_class: usize,
    pub shared_noise_vocab: usize,
    pub fnd_length_mean: f64,
    pub imp_length_mean: f64,
    pub fnd_signal: f64,
    pub imp_signal: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl GenConfig {
    /// Task defaults: label distribution 331:537 (BT) or 331:344:193
    /// (Aggressiveness), section lengths 219 / 55 tokens, vocabularies of
    /// 25 000 / 8 000 class words per view and 1 000 shared noise words.
    pub fn for_task(space: LabelSpace) -> Self {
        let counts: Vec<f64> = if space.k() == 3 {
            vec![331.0, 344.0, 193.0]
        } else if space.k() == 2 {
            vec![331.0, 537.0]
        } else {
            vec![1.0; space.k()]
        };
        let total: f64 = counts.iter().sum();
        GenConfig {
            space,
            class_priors: counts.iter().map(|c| c / total).collect(),
            fnd_vocab_per_class: 25_000,
            imp_vocab_per_class: 8_000,
            shared_noise_vocab: 1_000,
            fnd_length_mean: 219.0,
            imp_length_mean: 55.0,
            fnd_signal: 0.25,
            imp_signal: 0.35,
            n_labeled: 868,
            n_unlabeled: 10_000,
            n_test: 200,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_priors.len() != self.space.k() {
            return Err(Error::Config(format!(
                "{} priors for {} classes",
                self.class_priors.len(),
                self.space.k()
            )));
        }
        let sum: f64 = self.class_priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.class_priors.iter().any(|&p| p.is_nan() || p < 0.0) {
            return Err(Error::Config(format!(
                "class priors must sum to 1, got {sum}"
            )));
        }
        for (name, s) in [
            ("fnd_signal", self.fnd_signal),
            ("imp_signal", self.imp_signal),
        ] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.fnd_length_mean >= 1.0 && self.imp_length_mean >= 1.0) {
            return Err(Error::Config(
                "section length means must be at least 1".into(),
            ));
        }
        if self.fnd_vocab_per_class == 0
            || self.imp_vocab_per_class == 0
            || self.shared_noise_vocab == 0
        {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Class { view: View, class: usize },
    Noise,
}

fn view_prefix(view: View) -> char {
    match view {
        View::Imp => 'i',
        _ => 'f',
    }
}

pub fn class_token(view: View, class: usize, index: usize) -> String {
    format!("{}c{class}w{index}", view_prefix(view))
}

pub fn noise_token(index: usize) -> String {
    format!("nw{index}")
}

fn noise_token_kind(token: &str) -> Option<TokenKind> {
    token
        .strip_prefix("nw")?
        .parse::<usize>()
        .ok()
        .map(|_| TokenKind::Noise)
}

fn class_token_kind(token: &str) -> Option<TokenKind> {
    let view = match token.as_bytes().first()? {
        b'f' => View::Fnd,
        b'i' => View::Imp,
        _ => return None,
    };
    let rest = token[1..].strip_prefix('c')?;
    let (class, idx) = rest.split_once('w')?;
    idx.parse::<usize>().ok()?;
    Some(TokenKind::Class {
        view,
        class: class.parse().ok()?,
    })
}

/// Recover where a generated token came from; `None` for foreign tokens.
pub fn token_kind(token: &str) -> Option<TokenKind> {
    noise_token_kind(token).or_else(|| class_token_kind(token))
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub labeled: LabeledDataset,
    pub pool: UnlabeledDataset,
    pub test: LabeledDataset,
    /// Ground truth for the pool; for evaluation only.
    pub hidden_labels: BTreeMap<String, Label>,
}

struct Sampler<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
    classes: WeightedIndex<f64>,
    fnd_len: Geometric,
    imp_len: Geometric,
    layout: SectionLayout,
}

impl Sampler<'_> {
    /// Section length: `1 + Geometric(1/mean)`, so the mean is exact and
    /// short, hard sections are common.
    fn length(&mut self, view: View) -> usize {
        let d = if view == View::Imp {
            &self.imp_len
        } else {
            &self.fnd_len
        };
        1 + d.sample(&mut self.rng) as usize
    }

    fn section(&mut self, view: View, class: usize) -> String {
        let (signal, class_vocab) = if view == View::Imp {
            (self.cfg.imp_signal, self.cfg.imp_vocab_per_class)
        } else {
            (self.cfg.fnd_signal, self.cfg.fnd_vocab_per_class)
        };
        let n = self.length(view);
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            if self.rng.random_bool(signal) {
                let i = self.rng.random_range(0..class_vocab);
                tokens.push(class_token(view, class, i));
            } else {
                let i = self.rng.random_range(0..self.cfg.shared_noise_vocab);
                tokens.push(noise_token(i));
            }
        }
        tokens.join(" ")
    }

    fn report(&mut self, id: String) -> Result<(Report, Label)> {
        let class = self.classes.sample(&mut self.rng);
        let fnd = self.section(View::Fnd, class);
        let imp = self.section(View::Imp, class);
        let raw = render_report(&fnd, &imp);
        let report = parse_report(&raw, &self.layout, &id)?;
        Ok((report, Label(class)))
    }
}

fn length_dist(mean: f64) -> Result<Geometric> {
    Geometric::new(1.0 / mean).map_err(|e| Error::Config(format!("section length: {e}")))
}

/// Raw report text around the two generated sections.
pub fn render_report(fnd: &str, imp: &str) -> String {
    format!(
        "HISTORY:\nroutine surveillance\n\nTECHNIQUE:\nmri brain\n\nFINDINGS:\n{fnd}\n\nIMPRESSION:\n{imp}\n"
    )
}

/// Generate labeled, pool and test sets. Ids are prefixed `L`, `U`, `T`.
pub fn generate(cfg: &GenConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut s = Sampler {
        cfg,
        rng: seed::rng(seed::derive(cfg.seed, &[seed::tag("synth")])),
        classes: WeightedIndex::new(&cfg.class_priors)
            .map_err(|e| Error::Config(format!("class priors: {e}")))?,
        fnd_len: length_dist(cfg.fnd_length_mean)?,
        imp_len: length_dist(cfg.imp_length_mean)?,
        layout: SectionLayout::default(),
    };
    let mut labeled = Vec::with_capacity(cfg.n_labeled);
    for i in 0..cfg.n_labeled {
        labeled.push(s.report(format!("L{i:06}"))?);
    }
    let mut pool = Vec::with_capacity(cfg.n_unlabeled);
    let mut hidden_labels = BTreeMap::new();
    for i in 0..cfg.n_unlabeled {
        let (r, y) = s.report(format!("U{i:06}"))?;
        hidden_labels.insert(r.id.clone(), y);
        pool.push(r);
    }
    let mut test = Vec::with_capacity(cfg.n_test);
    for i in 0..cfg.n_test {
        test.push(s.report(format!("T{i:06}"))?);
    }
    Ok(SyntheticCorpus {
        labeled: LabeledDataset::new(cfg.space.clone(), labeled)?,
        pool: UnlabeledDataset::new(pool)?,
        test: LabeledDataset::new(cfg.space.clone(), test)?,
        hidden_labels,
    })
}

/// Write hidden pool labels as a JSON object `id → class name`.
pub fn save_hidden_labels(
    hidden: &BTreeMap<String, Label>,
    space: &LabelSpace,
    path: &Path,
) -> Result<()> {
    let named: BTreeMap<&str, &str> = hidden
        .iter()
        .map(|(id, y)| (id.as_str(), space.name_of(*y)))
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&named)?).map_err(|e| Error::io(path, e))
}

pub fn load_hidden_labels(path: &Path, space: &LabelSpace) -> Result<BTreeMap<String, Label>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let named: BTreeMap<String, String> = serde_json::from_str(&text)?;
    named
        .into_iter()
        .map(|(id, name)| {
            let y = space.resolve(&name).ok_or_else(|| {
                Error::Config(format!("hidden label `{name}` for `{id}` is not a class"))
            })?;
            Ok((id, y))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub value: f64,
    /// Set when the pseudo-labeled set was empty and the value defaulted to 1.
    pub vacuous: bool,
}

/// Fraction of pseudo-labels that match the hidden truth.
pub fn pseudo_label_precision(
    set: &PseudoLabeledSet,
    hidden: &BTreeMap<String, Label>,
) -> Result<Precision> {
    if set.is_empty() {
        log::warn!("pseudo-label precision of an empty set taken as 1");
        return Ok(Precision {
            value: 1.0,
            vacuous: true,
        });
    }
    let mut hits = 0usize;
    for p in &set.items {
        let truth = hidden
            .get(&p.id)
            .ok_or_else(|| Error::UnknownId(p.id.clone()))?;
        if *truth == p.label {
            hits += 1;
        }
    }
    Ok(Precision {
        value: hits as f64 / set.len() as f64,
        vacuous: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::tokenize;
    use crate::semisup_engine::Prediction;

    fn small(seed: u64) -> GenConfig {
        GenConfig {
            n_labeled: 60,
            n_unlabeled: 80,
            n_test: 20,
            seed,
            ..GenConfig::for_task(LabelSpace::bt())
        }
    }

    #[test]
    fn deterministic_and_unique_ids() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a.labeled, b.labeled);
        assert_eq!(a.pool, b.pool);
        assert_eq!(a.test, b.test);
        let c = generate(&small(4)).unwrap();
        assert_ne!(a.labeled, c.labeled);
        crate::corpus::check_disjoint(&[&a.labeled, &a.test], &a.pool).unwrap();
        assert_eq!(a.hidden_labels.len(), 80);
    }

    #[test]
    fn tokens_respect_view_vocabularies() {
        let cfg = GenConfig {
            fnd_signal: 1.0,
            imp_signal: 1.0,
            ..small(1)
        };
        let c = generate(&cfg).unwrap();
        for (r, y) in &c.labeled.items {
            for t in tokenize(r.fnd_text()) {
                assert_eq!(
                    token_kind(&t),
                    Some(TokenKind::Class {
                        view: View::Fnd,
                        class: y.0
                    })
                );
            }
            for t in tokenize(r.imp_text()) {
                assert_eq!(
                    token_kind(&t),
                    Some(TokenKind::Class {
                        view: View::Imp,
                        class: y.0
                    })
                );
            }
        }
        let cfg = GenConfig {
            fnd_signal: 0.0,
            imp_signal: 0.0,
            ..small(1)
        };
        let c = generate(&cfg).unwrap();
        for (r, _) in &c.labeled.items {
            assert!(tokenize(&crate::corpus::concat_views(r))
                .iter()
                .all(|t| token_kind(t) == Some(TokenKind::Noise)));
        }
    }

    #[test]
    fn rejects_bad_priors() {
        let mut cfg = small(0);
        cfg.class_priors = vec![0.5, 0.6];
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        cfg.class_priors = vec![1.0];
        assert!(generate(&cfg).is_err());
        let mut cfg = small(0);
        cfg.imp_signal = 1.5;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn default_priors_match_table_counts() {
        let bt = GenConfig::for_task(LabelSpace::bt());
        assert!((bt.class_priors[0] - 331.0 / 868.0).abs() < 1e-15);
        let agg = GenConfig::for_task(LabelSpace::aggressiveness());
        assert!((agg.class_priors[2] - 193.0 / 868.0).abs() < 1e-15);
        assert_eq!((bt.fnd_length_mean, bt.imp_length_mean), (219.0, 55.0));
    }

    #[test]
    fn precision_cases() {
        let hidden: BTreeMap<String, Label> = [("a", 0), ("b", 1)]
            .iter()
            .map(|(k, v)| (k.to_string(), Label(*v)))
            .collect();
        let p = |id: &str, y: usize| Prediction {
            id: id.into(),
            label: Label(y),
            confidence: 0.9,
        };
        let set = |items| PseudoLabeledSet {
            source_view: View::Fnd,
            items,
        };
        assert_eq!(
            pseudo_label_precision(&set(vec![p("a", 0), p("b", 1)]), &hidden)
                .unwrap()
                .value,
            1.0
        );
        assert_eq!(
            pseudo_label_precision(&set(vec![p("a", 0), p("b", 0)]), &hidden)
                .unwrap()
                .value,
            0.5
        );
        let empty = pseudo_label_precision(&set(vec![]), &hidden).unwrap();
        assert!(empty.vacuous && empty.value == 1.0);
        assert!(matches!(
            pseudo_label_precision(&set(vec![p("zz", 0)]), &hidden),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn hidden_labels_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(&small(2)).unwrap();
        let path = dir.path().join("hidden.json");
        save_hidden_labels(&c.hidden_labels, &LabelSpace::bt(), &path).unwrap();
        assert_eq!(
            load_hidden_labels(&path, &LabelSpace::bt()).unwrap(),
            c.hidden_labels
        );
    }
}
