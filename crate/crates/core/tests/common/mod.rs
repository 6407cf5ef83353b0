//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use cotrain::corpus::{Label, LabelSpace, View};
use cotrain::featurizer::{FeatureVector, Vocabulary};
use cotrain::linear_classifier::{loss_and_grad, ClassifierParams, Example};
use cotrain::semisup_engine::Prediction;
use cotrain::synth_gen::{token_kind, GenConfig, SyntheticCorpus, TokenKind};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

/// Brute force: rank each agreed item by how many agreed items beat it.
pub fn oracle_select(
    fnd: &[Prediction],
    imp: &[Prediction],
    source: View,
    k_half_units: u64,
) -> Vec<Prediction> {
    let imp_by: BTreeMap<&str, &Prediction> = imp.iter().map(|p| (p.id.as_str(), p)).collect();
    let agreed: Vec<&Prediction> = fnd
        .iter()
        .filter_map(|f| {
            let i = imp_by[f.id.as_str()];
            (f.label == i.label).then_some(if source == View::Imp { i } else { f })
        })
        .collect();
    let n = agreed.len() as u64;
    // ⌈(k/100)·n⌉ with k = k_half_units / 2, in integers.
    let m = (k_half_units * n).div_ceil(200) as usize;
    let beats = |a: &Prediction, b: &Prediction| {
        a.confidence > b.confidence || (a.confidence == b.confidence && a.id < b.id)
    };
    let mut ranked: Vec<(usize, &Prediction)> = agreed
        .iter()
        .map(|&p| (agreed.iter().filter(|&&q| beats(q, p)).count(), p))
        .filter(|&(rank, _)| rank < m)
        .collect();
    ranked.sort_by_key(|&(rank, _)| rank);
    ranked.into_iter().map(|(_, p)| p.clone()).collect()
}

/// Two prediction lists over the same shuffled ids. `coarse` draws
/// confidences from a handful of values so ties are common.
pub fn random_predictions(
    rng: &mut impl Rng,
    n: usize,
    k: usize,
    coarse: bool,
) -> (Vec<Prediction>, Vec<Prediction>) {
    let conf = |rng: &mut dyn RngCore| -> f64 {
        if coarse {
            [0.5, 0.6, 0.75, 0.9, 1.0][rng.random_range(0..5)]
        } else {
            rng.random_range(1.0 / k as f64..=1.0)
        }
    };
    let ids: Vec<String> = (0..n)
        .map(|i| format!("r{:03}", rng.random_range(0..1000) * 1000 + i))
        .collect();
    let fnd: Vec<Prediction> = ids
        .iter()
        .map(|id| Prediction {
            id: id.clone(),
            label: Label(rng.random_range(0..k)),
            confidence: conf(rng),
        })
        .collect();
    let mut imp: Vec<Prediction> = ids
        .iter()
        .map(|id| Prediction {
            id: id.clone(),
            label: Label(rng.random_range(0..k)),
            confidence: conf(rng),
        })
        .collect();
    imp.shuffle(rng);
    (fnd, imp)
}

pub fn space(k: usize) -> LabelSpace {
    LabelSpace::new("t", (0..k).map(|c| format!("c{c}")).collect()).unwrap()
}

/// A vocabulary of exactly `v` tokens, so features have dimension v + 1.
pub fn vocab(v: usize) -> Arc<Vocabulary> {
    let text: Vec<String> = (0..v).map(|i| format!("w{i}")).collect();
    let voc = Vocabulary::build(&[text.join(" ")], 1);
    assert_eq!(voc.len(), v);
    Arc::new(voc)
}

/// Random small classification instance for gradient checks.
pub struct Instance {
    pub params: ClassifierParams,
    pub xs: Vec<FeatureVector>,
    pub ys: Vec<Label>,
    pub l2: f64,
}

impl Instance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let v = rng.random_range(1..=10);
        let k = rng.random_range(2..=3);
        let voc = vocab(v);
        let dim = voc.dim();
        let weights = (0..k * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let params = ClassifierParams::from_weights(space(k), voc, weights).unwrap();
        let n = rng.random_range(1..=6);
        let xs = (0..n)
            .map(|_| {
                let mut pairs: Vec<(usize, f64)> = Vec::new();
                for j in 0..v {
                    if rng.random_bool(0.6) {
                        pairs.push((j, rng.random_range(-1.0..1.0)));
                    }
                }
                pairs.push((dim - 1, 1.0));
                FeatureVector::from_pairs(pairs, dim).unwrap()
            })
            .collect();
        let ys = (0..n).map(|_| Label(rng.random_range(0..k))).collect();
        let l2 = if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..0.5)
        };
        Instance { params, xs, ys, l2 }
    }

    pub fn batch(&self) -> Vec<Example<'_>> {
        self.xs.iter().zip(self.ys.iter().copied()).collect()
    }

    /// Largest relative gap between the analytic gradient and central
    /// differences with step `h`. Gaps are relative to the larger magnitude,
    /// floored at `floor` so exact zeros compare absolutely.
    pub fn max_relative_error(&self, h: f64, floor: f64) -> f64 {
        let batch = self.batch();
        let (_, grad) = loss_and_grad(&self.params, &batch, self.l2).unwrap();
        let mut worst = 0.0f64;
        for (j, &g) in grad.iter().enumerate() {
            let mut p = self.params.clone();
            p.weights_mut()[j] += h;
            let up = loss_and_grad(&p, &batch, self.l2).unwrap().0;
            p.weights_mut()[j] -= 2.0 * h;
            let down = loss_and_grad(&p, &batch, self.l2).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            let denom = g.abs().max(numeric.abs()).max(floor);
            worst = worst.max((g - numeric).abs() / denom);
        }
        worst
    }
}

/// Default BT generator settings at the given seed.
pub fn bt_config(seed: u64) -> GenConfig {
    GenConfig {
        seed,
        ..GenConfig::for_task(LabelSpace::bt())
    }
}

/// A small corpus that trains in well under a second.
pub fn small_config(seed: u64) -> GenConfig {
    GenConfig {
        n_labeled: 150,
        n_unlabeled: 400,
        n_test: 100,
        fnd_vocab_per_class: 400,
        imp_vocab_per_class: 150,
        shared_noise_vocab: 200,
        fnd_length_mean: 60.0,
        imp_length_mean: 20.0,
        seed,
        ..GenConfig::for_task(LabelSpace::bt())
    }
}

/// Number of class-vocabulary tokens in one view of a generated section.
pub fn class_token_count(text: &str) -> usize {
    text.split_whitespace()
        .filter(|t| matches!(token_kind(t), Some(TokenKind::Class { .. })))
        .count()
}

/// Empirical I(X; Y | C) in nats from (x, y, c) triples.
pub fn conditional_mutual_information(samples: &[(usize, usize, usize)]) -> f64 {
    let n = samples.len() as f64;
    let mut by_class: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(x, y, c) in samples {
        by_class.entry(c).or_default().push((x, y));
    }
    let mut mi = 0.0;
    for pairs in by_class.values() {
        let nc = pairs.len() as f64;
        let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut px: BTreeMap<usize, f64> = BTreeMap::new();
        let mut py: BTreeMap<usize, f64> = BTreeMap::new();
        for &(x, y) in pairs {
            *joint.entry((x, y)).or_default() += 1.0;
            *px.entry(x).or_default() += 1.0;
            *py.entry(y).or_default() += 1.0;
        }
        let mut mic = 0.0;
        for (&(x, y), &cnt) in &joint {
            mic += cnt / nc * (cnt * nc / (px[&x] * py[&y])).ln();
        }
        mi += nc / n * mic;
    }
    mi
}

/// Bucket a count into 0, 1, 2-3, 4-7, 8-15, 16+.
pub fn log_bucket(n: usize) -> usize {
    match n {
        0 => 0,
        1 => 1,
        2..=3 => 2,
        4..=7 => 3,
        8..=15 => 4,
        _ => 5,
    }
}

/// (Findings bucket, Impression bucket, class) for every pool report.
pub fn view_indicator_samples(c: &SyntheticCorpus) -> Vec<(usize, usize, usize)> {
    c.pool
        .items
        .iter()
        .map(|r| {
            (
                log_bucket(class_token_count(r.fnd_text())),
                log_bucket(class_token_count(r.imp_text())),
                c.hidden_labels[&r.id].0,
            )
        })
        .collect()
}
