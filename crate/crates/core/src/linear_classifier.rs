//! K-way softmax linear classifier trained by regularized maximum likelihood.
//!
//! The bias lives in the last feature column (every [`FeatureVector`] carries
//! a constant 1 there), so the weights are a single K × (V+1) matrix.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LabelSpace};
use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeatureVector, Vocabulary};
use crate::seed;

pub type Example<'a> = (&'a FeatureVector, Label);

#[derive(Debug, Clone)]
pub struct ClassifierParams {
    space: LabelSpace,
    vocab: Arc<Vocabulary>,
    /// Row-major, `k` rows of length `dim`.
    weights: Vec<f64>,
}

impl PartialEq for ClassifierParams {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space
            && (Arc::ptr_eq(&self.vocab, &other.vocab) || *self.vocab == *other.vocab)
            && self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ClassifierParams {
    pub fn zeros(space: LabelSpace, vocab: Arc<Vocabulary>) -> Self {
        let weights = vec![0.0; space.k() * vocab.dim()];
        ClassifierParams {
            space,
            vocab,
            weights,
        }
    }

    pub fn from_weights(
        space: LabelSpace,
        vocab: Arc<Vocabulary>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != space.k() * vocab.dim() {
            return Err(Error::Contract(format!(
                "weight length {} does not match {} classes × {} features",
                weights.len(),
                space.k(),
                vocab.dim()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Contract("non-finite weight".into()));
        }
        Ok(ClassifierParams {
            space,
            vocab,
            weights,
        })
    }

    pub fn k(&self) -> usize {
        self.space.k()
    }

    pub fn dim(&self) -> usize {
        self.vocab.dim()
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.dim() + feature]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn squared_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    fn check_dim(&self, x: &FeatureVector) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::Contract(format!(
                "feature dimension {} does not match classifier dimension {}",
                x.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Featurize `text` with this classifier's vocabulary.
    pub fn featurize(&self, text: &str) -> FeatureVector {
        featurize(text, &self.vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ParamsFile {
            task: self.space.clone(),
            vocab_fingerprint: self.vocab.fingerprint(),
            k: self.k(),
            dim: self.dim(),
            weights: self.weights.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
    }

    /// Load parameters saved by [`ClassifierParams::save`]; the vocabulary must
    /// be the one they were trained with.
    pub fn load(path: &Path, vocab: Arc<Vocabulary>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ParamsFile = serde_json::from_str(&text)?;
        if file.vocab_fingerprint != vocab.fingerprint() {
            return Err(Error::Contract(format!(
                "parameters were trained with vocabulary {}, got {}",
                file.vocab_fingerprint,
                vocab.fingerprint()
            )));
        }
        if file.k != file.task.k() || file.dim != vocab.dim() {
            return Err(Error::Contract(
                "parameter shape does not match vocabulary".into(),
            ));
        }
        ClassifierParams::from_weights(file.task, vocab, file.weights)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    task: LabelSpace,
    vocab_fingerprint: String,
    k: usize,
    dim: usize,
    weights: Vec<f64>,
}

fn logits_into(weights: &[f64], dim: usize, scale: f64, x: &FeatureVector, out: &mut [f64]) {
    for (c, z) in out.iter_mut().enumerate() {
        let row = &weights[c * dim..(c + 1) * dim];
        *z = scale * x.iter().map(|(j, v)| row[j] * v).sum::<f64>();
    }
}

/// In-place softmax; returns log-sum-exp of the input.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    m + sum.ln()
}

/// Index of the largest entry, lowest index on ties, with its value.
pub fn argmax(dist: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate().skip(1) {
        if p > dist[best] {
            best = i;
        }
    }
    (best, dist[best])
}

pub fn predict_dist(params: &ClassifierParams, x: &FeatureVector) -> Result<Vec<f64>> {
    params.check_dim(x)?;
    let mut z = vec![0.0; params.k()];
    logits_into(&params.weights, params.dim(), 1.0, x, &mut z);
    softmax_in_place(&mut z);
    Ok(z)
}

/// Most probable class (lowest index on ties) and its probability.
pub fn predict_label(params: &ClassifierParams, x: &FeatureVector) -> Result<(Label, f64)> {
    let dist = predict_dist(params, x)?;
    let (i, p) = argmax(&dist);
    Ok((Label(i), p))
}

/// Mean negative log-likelihood plus `l2/2 · ‖W‖²`, and its exact gradient.
pub fn loss_and_grad(
    params: &ClassifierParams,
    batch: &[Example<'_>],
    l2_penalty: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    let (k, dim) = (params.k(), params.dim());
    let n = batch.len() as f64;
    let mut grad: Vec<f64> = params.weights.iter().map(|w| l2_penalty * w).collect();
    let mut loss = 0.5 * l2_penalty * params.squared_norm();
    let mut z = vec![0.0; k];
    for &(x, y) in batch {
        params.check_dim(x)?;
        params.space.check(y)?;
        logits_into(&params.weights, dim, 1.0, x, &mut z);
        let true_logit = z[y.0];
        let lse = softmax_in_place(&mut z);
        loss += (lse - true_logit) / n;
        for (c, &p) in z.iter().enumerate() {
            let coef = (p - if c == y.0 { 1.0 } else { 0.0 }) / n;
            if coef == 0.0 {
                continue;
            }
            let row = &mut grad[c * dim..(c + 1) * dim];
            for (j, v) in x.iter() {
                row[j] += coef * v;
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 10.0,
            l2_penalty: 1e-4,
            max_epochs: 100,
            batch_size: 16,
            patience: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Config("l2_penalty must be non-negative".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs, batch_size and patience must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Full-data objective after the epoch.
    pub loss: f64,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

fn objective(weights: &[f64], dim: usize, data: &[Example<'_>], l2: f64, z: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for &(x, y) in data {
        logits_into(weights, dim, 1.0, x, z);
        let t = z[y.0];
        loss += softmax_in_place(z) - t;
    }
    loss / data.len() as f64 + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

fn accuracy_of(weights: &[f64], dim: usize, data: &[Example<'_>], z: &mut [f64]) -> f64 {
    let hits = data
        .iter()
        .filter(|&&(x, y)| {
            logits_into(weights, dim, 1.0, x, z);
            argmax(z).0 == y.0
        })
        .count();
    hits as f64 / data.len() as f64
}

/// Train from `init` (zeros when absent); see [`train_with_history`].
pub fn train(
    data: &[Example<'_>],
    valid: &[Example<'_>],
    cfg: &TrainConfig,
    init: Option<&ClassifierParams>,
    space: &LabelSpace,
    vocab: &Arc<Vocabulary>,
) -> Result<ClassifierParams> {
    train_with_history(data, valid, cfg, init, space, vocab).map(|o| o.params)
}

/// Mini-batch gradient descent on mean NLL + `l2/2 · ‖W‖²`.
///
/// Each step applies the data gradient and then the L2 shrinkage in its
/// proximal form `W ← (W − η∇) / (1 + ηλ)`, kept as a lazy scalar so sparse
/// updates stay sparse. Returns the epoch with the best validation accuracy
/// (earliest on ties); with an empty validation set the last epoch is kept.
pub fn train_with_history(
    data: &[Example<'_>],
    valid: &[Example<'_>],
    cfg: &TrainConfig,
    init: Option<&ClassifierParams>,
    space: &LabelSpace,
    vocab: &Arc<Vocabulary>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let dim = vocab.dim();
    let k = space.k();
    for &(x, y) in data.iter().chain(valid) {
        space.check(y)?;
        if x.dim() != dim {
            return Err(Error::Contract(format!(
                "feature dimension {} does not match vocabulary dimension {dim}",
                x.dim()
            )));
        }
    }
    let mut raw = match init {
        Some(p) => {
            if p.space != *space || p.dim() != dim {
                return Err(Error::Contract(
                    "initial parameters have the wrong shape".into(),
                ));
            }
            p.weights.clone()
        }
        None => vec![0.0; k * dim],
    };
    let mut scale = 1.0f64;
    let lr = cfg.learning_rate;
    let shrink = 1.0 + lr * cfg.l2_penalty;
    let batch_size = cfg.batch_size.min(data.len());

    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut z = vec![0.0; k];
    let mut coefs = vec![0.0; k * batch_size];
    let mut current = vec![0.0; k * dim];

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let n = chunk.len() as f64;
            for (b, &i) in chunk.iter().enumerate() {
                let (x, y) = data[i];
                logits_into(&raw, dim, scale, x, &mut z);
                softmax_in_place(&mut z);
                for c in 0..k {
                    coefs[b * k + c] = (z[c] - if c == y.0 { 1.0 } else { 0.0 }) / n;
                }
            }
            let step = lr / scale;
            for (b, &i) in chunk.iter().enumerate() {
                let x = data[i].0;
                for c in 0..k {
                    let g = coefs[b * k + c] * step;
                    let row = &mut raw[c * dim..(c + 1) * dim];
                    for (j, v) in x.iter() {
                        row[j] -= g * v;
                    }
                }
            }
            scale /= shrink;
            if scale < 1e-6 {
                raw.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }

        for (dst, &w) in current.iter_mut().zip(&raw) {
            *dst = w * scale;
        }
        let loss = objective(&current, dim, data, cfg.l2_penalty, &mut z);
        if !loss.is_finite() || current.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let valid_accuracy = (!valid.is_empty()).then(|| accuracy_of(&current, dim, valid, &mut z));
        history.push(EpochStats {
            epoch,
            loss,
            valid_accuracy,
        });

        match valid_accuracy {
            Some(acc) => {
                if best.as_ref().is_none_or(|b| acc > b.0) {
                    best = Some((acc, epoch, current.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        break;
                    }
                }
            }
            None => best = Some((f64::NAN, epoch, current.clone())),
        }
    }

    let (_, best_epoch, weights) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params: ClassifierParams {
            space: space.clone(),
            vocab: Arc::clone(vocab),
            weights,
        },
        best_epoch,
        history,
    })
}
