//! Co-training and self-training over an unlabeled pool.
//!
//! Co-training keeps one classifier per view. Each round the Findings
//! classifier pseudo-labels the pool, the samples on which both classifiers
//! agree are ranked by Findings confidence and the top k% are merged with the
//! labeled set to retrain the Impression classifier; then the freshly
//! retrained Impression classifier teaches the Findings classifier the same
//! way. Rounds continue until ensemble validation accuracy stops improving or
//! `max_rounds` is reached, and the best round (round 0 being the supervised
//! initialization) is returned.
//!
//! Pseudo-labels are regenerated from the full pool every round; nothing
//! accumulates across rounds and the original labeled examples are always
//! included unchanged.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{check_disjoint, Label, LabelSpace, LabeledDataset, UnlabeledDataset, View};
use crate::ensemble_eval::ensemble_dist;
use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeatureVector, Vocabulary, DEFAULT_MIN_DF};
use crate::linear_classifier::{
    argmax, predict_dist, train, ClassifierParams, Example, TrainConfig,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotrainConfig {
    /// Share of the agreed set kept each step, in (0, 100].
    pub top_k_percent: f64,
    pub max_rounds: usize,
    pub task: LabelSpace,
    pub train_cfg: TrainConfig,
    /// Retrain from the previous round's weights instead of from zero.
    pub warm_start: bool,
    /// Impression teaches Findings with its parameters retrained earlier in
    /// the same round (`true`) or with its round-start parameters (`false`).
    #[serde(default = "default_true")]
    pub fresh_second_teacher: bool,
    pub min_df: usize,
}

fn default_true() -> bool {
    true
}

impl CotrainConfig {
    /// Defaults per task: k = 50 for BT, 25 for Aggressiveness, 5 rounds.
    pub fn for_task(task: LabelSpace) -> Self {
        let top_k_percent = if task.task_name.eq_ignore_ascii_case("aggressiveness") {
            25.0
        } else {
            50.0
        };
        CotrainConfig {
            top_k_percent,
            max_rounds: 5,
            task,
            train_cfg: TrainConfig::default(),
            warm_start: false,
            fresh_second_teacher: true,
            min_df: DEFAULT_MIN_DF,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_k_percent > 0.0 && self.top_k_percent <= 100.0) {
            return Err(Error::Config(format!(
                "top_k_percent must lie in (0, 100], got {}",
                self.top_k_percent
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        self.train_cfg.validate()
    }
}

/// One classifier's verdict on one pool report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: Label,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledSet {
    pub source_view: View,
    pub items: Vec<Prediction>,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// View whose predictions supplied the labels.
    pub source: View,
    /// View whose classifier was retrained.
    pub target: View,
    pub agreed: usize,
    pub selected: usize,
    /// |agreed| / |pool|.
    pub agreement_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Validation accuracy keyed by classifier ("fnd", "imp", "concat", "ensemble").
    pub valid_accuracy: BTreeMap<String, f64>,
    pub steps: Vec<StepLog>,
}

/// Write logs as JSONL, one round per line.
pub fn write_round_logs(logs: &[RoundLog], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSelection {
    pub round: usize,
    pub set: PseudoLabeledSet,
}

#[derive(Debug, Clone)]
pub struct CotrainOutcome {
    pub fnd: ClassifierParams,
    pub imp: ClassifierParams,
    pub best_round: usize,
    pub logs: Vec<RoundLog>,
    /// Every pseudo-labeled set built, in order.
    pub selections: Vec<RoundSelection>,
}

#[derive(Debug, Clone)]
pub struct SelftrainOutcome {
    pub params: ClassifierParams,
    pub best_round: usize,
    pub logs: Vec<RoundLog>,
    pub selections: Vec<RoundSelection>,
}

/// Featurized copy of one view of the labeled, validation and pool data.
#[derive(Debug, Clone)]
pub struct ViewFeatures {
    pub vocab: Arc<Vocabulary>,
    pub labeled: Vec<FeatureVector>,
    pub valid: Vec<FeatureVector>,
    pub pool: Vec<FeatureVector>,
}

/// Datasets of one experiment cell, featurized once per view.
///
/// Each view's vocabulary is built from the labeled and pool texts of that
/// view; validation text never contributes document frequencies.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub space: LabelSpace,
    pub labeled_y: Vec<Label>,
    pub valid_y: Vec<Label>,
    pub pool_ids: Vec<String>,
    pool_index: HashMap<String, usize>,
    views: BTreeMap<View, ViewFeatures>,
}

impl Prepared {
    pub fn new(
        labeled: &LabeledDataset,
        valid: &LabeledDataset,
        pool: &UnlabeledDataset,
        views: &[View],
        min_df: usize,
    ) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::EmptyData);
        }
        if valid.space != labeled.space {
            return Err(Error::Contract(
                "labeled and validation tasks differ".into(),
            ));
        }
        check_disjoint(&[labeled, valid], pool)?;
        let mut feats = BTreeMap::new();
        for &view in views {
            let mut texts: Vec<String> = labeled
                .items
                .iter()
                .map(|(r, _)| r.view_text(view).into_owned())
                .collect();
            texts.extend(pool.items.iter().map(|r| r.view_text(view).into_owned()));
            let vocab = Arc::new(Vocabulary::build(&texts, min_df));
            let fz = |t: &str| featurize(t, &vocab);
            let n_lab = labeled.len();
            let labeled_x = texts[..n_lab].iter().map(|t| fz(t)).collect();
            let pool_x = texts[n_lab..].iter().map(|t| fz(t)).collect();
            let valid_x = valid
                .items
                .iter()
                .map(|(r, _)| fz(&r.view_text(view)))
                .collect();
            feats.insert(
                view,
                ViewFeatures {
                    vocab: Arc::clone(&vocab),
                    labeled: labeled_x,
                    valid: valid_x,
                    pool: pool_x,
                },
            );
        }
        let pool_ids: Vec<String> = pool.items.iter().map(|r| r.id.clone()).collect();
        let pool_index = pool_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(Prepared {
            space: labeled.space.clone(),
            labeled_y: labeled.labels(),
            valid_y: valid.labels(),
            pool_ids,
            pool_index,
            views: feats,
        })
    }

    pub fn view(&self, view: View) -> Result<&ViewFeatures> {
        self.views
            .get(&view)
            .ok_or_else(|| Error::Contract(format!("view {view} was not prepared")))
    }

    pub fn pool_len(&self) -> usize {
        self.pool_ids.len()
    }

    fn labeled_examples(&self, view: View) -> Result<Vec<Example<'_>>> {
        let f = self.view(view)?;
        Ok(f.labeled
            .iter()
            .zip(self.labeled_y.iter().copied())
            .collect())
    }

    fn valid_examples(&self, view: View) -> Result<Vec<Example<'_>>> {
        let f = self.view(view)?;
        Ok(f.valid.iter().zip(self.valid_y.iter().copied()).collect())
    }

    /// D_l followed by the pseudo-labeled pool samples, on `view` features.
    pub fn merged_examples(&self, view: View, set: &PseudoLabeledSet) -> Result<Vec<Example<'_>>> {
        let f = self.view(view)?;
        let mut out = self.labeled_examples(view)?;
        out.reserve(set.len());
        for p in &set.items {
            let &i = self
                .pool_index
                .get(&p.id)
                .ok_or_else(|| Error::UnknownId(p.id.clone()))?;
            out.push((&f.pool[i], p.label));
        }
        Ok(out)
    }

    pub fn predict_pool(&self, params: &ClassifierParams, view: View) -> Result<Vec<Prediction>> {
        let f = self.view(view)?;
        predict_features(params, &self.pool_ids, &f.pool)
    }
}

fn predict_features(
    params: &ClassifierParams,
    ids: &[String],
    xs: &[FeatureVector],
) -> Result<Vec<Prediction>> {
    ids.iter()
        .zip(xs)
        .map(|(id, x)| {
            let (i, p) = argmax(&predict_dist(params, x)?);
            Ok(Prediction {
                id: id.clone(),
                label: Label(i),
                confidence: p,
            })
        })
        .collect()
}

/// Predict every pool report from its `view` text, preserving pool order.
pub fn generate_pseudo_labels(
    source: &ClassifierParams,
    view: View,
    pool: &UnlabeledDataset,
) -> Result<Vec<Prediction>> {
    let ids: Vec<String> = pool.items.iter().map(|r| r.id.clone()).collect();
    let xs: Vec<FeatureVector> = pool
        .items
        .iter()
        .map(|r| source.featurize(&r.view_text(view)))
        .collect();
    predict_features(source, &ids, &xs)
}

/// Number of items kept from `agreed` at `k_percent`: ⌈k/100 · agreed⌉.
pub fn selection_size(k_percent: f64, agreed: usize) -> usize {
    // k·n is exact for integral k, so the division rounds only once.
    let m = (k_percent * agreed as f64 / 100.0).ceil();
    (m.max(0.0) as usize).min(agreed)
}

/// Keep the samples whose two predictions agree, then the top `k_percent` of
/// those by the source view's confidence (ties broken by ascending id).
///
/// Labels and confidences come from `imp` when `source_view` is
/// [`View::Imp`] and from `fnd` otherwise.
pub fn select_agreed_topk(
    fnd: &[Prediction],
    imp: &[Prediction],
    source_view: View,
    k_percent: f64,
) -> Result<PseudoLabeledSet> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::Config(format!(
            "top-k percent {k_percent} outside (0, 100]"
        )));
    }
    if fnd.len() != imp.len() {
        return Err(Error::Contract(format!(
            "prediction lists cover {} and {} reports",
            fnd.len(),
            imp.len()
        )));
    }
    let imp_by_id: HashMap<&str, &Prediction> = imp.iter().map(|p| (p.id.as_str(), p)).collect();
    if imp_by_id.len() != imp.len() {
        return Err(Error::Contract("duplicate id in predictions".into()));
    }
    let mut seen = HashSet::with_capacity(fnd.len());
    let mut agreed: Vec<&Prediction> = Vec::new();
    for f in fnd {
        if !seen.insert(f.id.as_str()) {
            return Err(Error::Contract(format!(
                "duplicate id `{}` in predictions",
                f.id
            )));
        }
        let i = imp_by_id.get(f.id.as_str()).ok_or_else(|| {
            Error::Contract(format!(
                "id `{}` missing from the other view's predictions",
                f.id
            ))
        })?;
        if f.label == i.label {
            agreed.push(if source_view == View::Imp { i } else { f });
        }
    }
    agreed.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.id.cmp(&b.id))
    });
    let m = selection_size(k_percent, agreed.len());
    Ok(PseudoLabeledSet {
        source_view,
        items: agreed.into_iter().take(m).cloned().collect(),
    })
}

fn accuracy_on(params: &ClassifierParams, xs: &[FeatureVector], ys: &[Label]) -> Result<f64> {
    if xs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, y) in xs.iter().zip(ys) {
        if argmax(&predict_dist(params, x)?).0 == y.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / xs.len() as f64)
}

fn ensemble_accuracy_on(
    fnd: &ClassifierParams,
    fnd_x: &[FeatureVector],
    imp: &ClassifierParams,
    imp_x: &[FeatureVector],
    ys: &[Label],
) -> Result<f64> {
    if ys.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ((xf, xi), y) in fnd_x.iter().zip(imp_x).zip(ys) {
        let d = ensemble_dist(&predict_dist(fnd, xf)?, &predict_dist(imp, xi)?);
        if argmax(&d).0 == y.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / ys.len() as f64)
}

/// Seed for training `view` at `round` from an experiment cell's base seed.
pub fn train_seed(base: u64, round: usize, view: View) -> u64 {
    seed::derive(base, &[round as u64, seed::tag(view.as_str())])
}

/// Supervised training of one view on the labeled set (round 0).
pub fn supervised_init(
    prep: &Prepared,
    view: View,
    cfg: &CotrainConfig,
) -> Result<ClassifierParams> {
    let f = prep.view(view)?;
    let tc = cfg
        .train_cfg
        .with_seed(train_seed(cfg.train_cfg.seed, 0, view));
    train(
        &prep.labeled_examples(view)?,
        &prep.valid_examples(view)?,
        &tc,
        None,
        &prep.space,
        &f.vocab,
    )
}

fn retrain(
    prep: &Prepared,
    view: View,
    set: &PseudoLabeledSet,
    round: usize,
    cfg: &CotrainConfig,
    previous: &ClassifierParams,
) -> Result<ClassifierParams> {
    let f = prep.view(view)?;
    let tc = cfg
        .train_cfg
        .with_seed(train_seed(cfg.train_cfg.seed, round, view));
    train(
        &prep.merged_examples(view, set)?,
        &prep.valid_examples(view)?,
        &tc,
        cfg.warm_start.then_some(previous),
        &prep.space,
        &f.vocab,
    )
}

fn step_log(
    source: View,
    target: View,
    agreed: usize,
    set: &PseudoLabeledSet,
    pool: usize,
) -> StepLog {
    StepLog {
        source,
        target,
        agreed,
        selected: set.len(),
        agreement_rate: if pool == 0 {
            0.0
        } else {
            agreed as f64 / pool as f64
        },
    }
}

fn agreed_count(a: &[Prediction], b: &[Prediction]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x.label == y.label).count()
}

/// Co-train from raw datasets: featurize, initialize both views on the
/// labeled set, then run the rounds.
pub fn cotrain(
    labeled: &LabeledDataset,
    valid: &LabeledDataset,
    pool: &UnlabeledDataset,
    cfg: &CotrainConfig,
) -> Result<CotrainOutcome> {
    cfg.validate()?;
    let prep = Prepared::new(labeled, valid, pool, &[View::Fnd, View::Imp], cfg.min_df)?;
    cotrain_prepared(&prep, None, cfg)
}

/// Co-training over prepared features, optionally starting from given
/// round-0 classifiers.
pub fn cotrain_prepared(
    prep: &Prepared,
    init: Option<(ClassifierParams, ClassifierParams)>,
    cfg: &CotrainConfig,
) -> Result<CotrainOutcome> {
    cfg.validate()?;
    let (mut fnd, mut imp) = match init {
        Some(pair) => pair,
        None => (
            supervised_init(prep, View::Fnd, cfg)?,
            supervised_init(prep, View::Imp, cfg)?,
        ),
    };
    let fv = prep.view(View::Fnd)?;
    let iv = prep.view(View::Imp)?;
    let y = &prep.valid_y;

    let round_log = |round: usize,
                     fnd: &ClassifierParams,
                     imp: &ClassifierParams,
                     steps|
     -> Result<(f64, RoundLog)> {
        let ens = ensemble_accuracy_on(fnd, &fv.valid, imp, &iv.valid, y)?;
        let valid_accuracy = BTreeMap::from([
            ("fnd".to_string(), accuracy_on(fnd, &fv.valid, y)?),
            ("imp".to_string(), accuracy_on(imp, &iv.valid, y)?),
            ("ensemble".to_string(), ens),
        ]);
        Ok((
            ens,
            RoundLog {
                round,
                valid_accuracy,
                steps,
            },
        ))
    };

    let (acc0, log0) = round_log(0, &fnd, &imp, Vec::new())?;
    log::debug!("cotrain round 0: valid accuracy {:?}", log0.valid_accuracy);
    let mut logs = vec![log0];
    let mut selections = Vec::new();
    let mut best = (acc0, 0usize, fnd.clone(), imp.clone());
    if prep.pool_len() == 0 {
        log::warn!("empty unlabeled pool; returning the supervised initialization");
        return Ok(CotrainOutcome {
            fnd,
            imp,
            best_round: 0,
            logs,
            selections,
        });
    }

    log::info!(
        "cotrain: Impression teaches with its {} parameters",
        if cfg.fresh_second_teacher {
            "freshly retrained"
        } else {
            "round-start"
        }
    );
    let mut previous = acc0;
    let pool_n = prep.pool_len();
    for round in 1..=cfg.max_rounds {
        // Findings teaches Impression.
        let fnd_preds = prep.predict_pool(&fnd, View::Fnd)?;
        let mut imp_preds = prep.predict_pool(&imp, View::Imp)?;
        let from_fnd = select_agreed_topk(&fnd_preds, &imp_preds, View::Fnd, cfg.top_k_percent)?;
        let s1 = step_log(
            View::Fnd,
            View::Imp,
            agreed_count(&fnd_preds, &imp_preds),
            &from_fnd,
            pool_n,
        );
        imp = retrain(prep, View::Imp, &from_fnd, round, cfg, &imp)?;

        // Impression teaches Findings, by default with its fresh parameters.
        if cfg.fresh_second_teacher {
            imp_preds = prep.predict_pool(&imp, View::Imp)?;
        }
        let from_imp = select_agreed_topk(&fnd_preds, &imp_preds, View::Imp, cfg.top_k_percent)?;
        let s2 = step_log(
            View::Imp,
            View::Fnd,
            agreed_count(&fnd_preds, &imp_preds),
            &from_imp,
            pool_n,
        );
        fnd = retrain(prep, View::Fnd, &from_imp, round, cfg, &fnd)?;

        selections.push(RoundSelection {
            round,
            set: from_fnd,
        });
        selections.push(RoundSelection {
            round,
            set: from_imp,
        });
        let (acc, log) = round_log(round, &fnd, &imp, vec![s1, s2])?;
        log::debug!(
            "cotrain round {round}: valid accuracy {:?}, selected {} / {}",
            log.valid_accuracy,
            log.steps[0].selected,
            log.steps[1].selected
        );
        logs.push(log);
        if acc > best.0 {
            best = (acc, round, fnd.clone(), imp.clone());
        }
        if acc <= previous {
            break;
        }
        previous = acc;
    }
    let (_, best_round, fnd, imp) = best;
    Ok(CotrainOutcome {
        fnd,
        imp,
        best_round,
        logs,
        selections,
    })
}

/// Self-training baseline for a single view.
pub fn selftrain(
    labeled: &LabeledDataset,
    valid: &LabeledDataset,
    pool: &UnlabeledDataset,
    view: View,
    cfg: &CotrainConfig,
) -> Result<SelftrainOutcome> {
    cfg.validate()?;
    let prep = Prepared::new(labeled, valid, pool, &[view], cfg.min_df)?;
    selftrain_prepared(&prep, view, None, cfg)
}

/// The co-training loop with one classifier teaching itself: top-k% of its
/// own predictions by its own confidence, no agreement filter.
pub fn selftrain_prepared(
    prep: &Prepared,
    view: View,
    init: Option<ClassifierParams>,
    cfg: &CotrainConfig,
) -> Result<SelftrainOutcome> {
    cfg.validate()?;
    let mut params = match init {
        Some(p) => p,
        None => supervised_init(prep, view, cfg)?,
    };
    let vf = prep.view(view)?;
    let y = &prep.valid_y;
    let key = view.as_str().to_string();

    let acc0 = accuracy_on(&params, &vf.valid, y)?;
    let mut logs = vec![RoundLog {
        round: 0,
        valid_accuracy: BTreeMap::from([(key.clone(), acc0)]),
        steps: Vec::new(),
    }];
    let mut selections = Vec::new();
    let mut best = (acc0, 0usize, params.clone());
    if prep.pool_len() == 0 {
        log::warn!("empty unlabeled pool; returning the supervised initialization");
        return Ok(SelftrainOutcome {
            params,
            best_round: 0,
            logs,
            selections,
        });
    }

    let mut previous = acc0;
    let pool_n = prep.pool_len();
    for round in 1..=cfg.max_rounds {
        let preds = prep.predict_pool(&params, view)?;
        let set = select_agreed_topk(&preds, &preds, view, cfg.top_k_percent)?;
        let step = step_log(view, view, pool_n, &set, pool_n);
        params = retrain(prep, view, &set, round, cfg, &params)?;
        selections.push(RoundSelection { round, set });
        let acc = accuracy_on(&params, &vf.valid, y)?;
        logs.push(RoundLog {
            round,
            valid_accuracy: BTreeMap::from([(key.clone(), acc)]),
            steps: vec![step],
        });
        if acc > best.0 {
            best = (acc, round, params.clone());
        }
        if acc <= previous {
            break;
        }
        previous = acc;
    }
    let (_, best_round, params) = best;
    Ok(SelftrainOutcome {
        params,
        best_round,
        logs,
        selections,
    })
}
