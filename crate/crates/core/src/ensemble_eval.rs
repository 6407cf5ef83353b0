//! Average-probability ensembling, accuracy, and the cross-validated
//! experiment harness.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    split_k_folds, FoldSplit, Label, LabeledDataset, Report, UnlabeledDataset, View,
};
use crate::error::{Error, Result};
use crate::featurizer::{featurize, FeatureVector};
use crate::linear_classifier::{argmax, predict_dist, ClassifierParams};
use crate::seed;
use crate::semisup_engine::{
    cotrain_prepared, selftrain_prepared, supervised_init, CotrainConfig, Prepared,
};
use crate::synth_gen::pseudo_label_precision;

/// Elementwise mean of two distributions.
pub fn ensemble_dist(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Average the two views' class distributions and take the argmax (lowest
/// index on ties).
pub fn ensemble_predict(
    fnd: &ClassifierParams,
    imp: &ClassifierParams,
    r: &Report,
) -> Result<(Label, Vec<f64>)> {
    if fnd.space() != imp.space() {
        return Err(Error::Contract(format!(
            "cannot ensemble tasks `{}` and `{}`",
            fnd.space().task_name,
            imp.space().task_name
        )));
    }
    let p = predict_dist(fnd, &fnd.featurize(r.fnd_text()))?;
    let q = predict_dist(imp, &imp.featurize(r.imp_text()))?;
    let dist = ensemble_dist(&p, &q);
    Ok((Label(argmax(&dist).0), dist))
}

pub fn accuracy(preds: &[Label], gold: &[Label]) -> Result<f64> {
    if preds.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            gold.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// One row of the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    SupervisedConcat,
    SupervisedFnd,
    SupervisedImp,
    SupervisedEnsemble,
    SelftrainConcat,
    SelftrainFnd,
    SelftrainImp,
    SelftrainEnsemble,
    CotrainFnd,
    CotrainImp,
    CotrainEnsemble,
}

impl Setting {
    pub const ALL: [Setting; 11] = [
        Setting::SupervisedConcat,
        Setting::SupervisedFnd,
        Setting::SupervisedImp,
        Setting::SupervisedEnsemble,
        Setting::SelftrainConcat,
        Setting::SelftrainFnd,
        Setting::SelftrainImp,
        Setting::SelftrainEnsemble,
        Setting::CotrainFnd,
        Setting::CotrainImp,
        Setting::CotrainEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::SupervisedConcat => "supervised-concat",
            Setting::SupervisedFnd => "supervised-fnd",
            Setting::SupervisedImp => "supervised-imp",
            Setting::SupervisedEnsemble => "supervised-ensemble",
            Setting::SelftrainConcat => "selftrain-concat",
            Setting::SelftrainFnd => "selftrain-fnd",
            Setting::SelftrainImp => "selftrain-imp",
            Setting::SelftrainEnsemble => "selftrain-ensemble",
            Setting::CotrainFnd => "cotrain-fnd",
            Setting::CotrainImp => "cotrain-imp",
            Setting::CotrainEnsemble => "cotrain-ensemble",
        }
    }

    pub fn is_semi_supervised(self) -> bool {
        !matches!(
            self,
            Setting::SupervisedConcat
                | Setting::SupervisedFnd
                | Setting::SupervisedImp
                | Setting::SupervisedEnsemble
        )
    }

    fn needs_concat(self) -> bool {
        matches!(self, Setting::SupervisedConcat | Setting::SelftrainConcat)
    }

    /// Parse a comma-separated list; `all` expands to every setting.
    pub fn parse_list(spec: &str) -> Result<Vec<Setting>> {
        let mut out: Vec<Setting> = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                out.extend(Setting::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("no settings requested".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown setting `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAccuracy {
    pub fold: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub setting: String,
    pub runs: Vec<RunAccuracy>,
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary {
            median: f64::NAN,
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { median, mean, std }
}

/// Precision of the first pseudo-labeled set of each fold (Findings teaching
/// from the supervised initialization), against hidden pool labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSummary {
    pub per_fold: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: String,
    pub folds: usize,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    pub config: CotrainConfig,
    pub results: Vec<SettingResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_label_precision: Option<PrecisionSummary>,
}

impl ExperimentReport {
    pub fn setting(&self, setting: Setting) -> Option<&SettingResult> {
        self.results.iter().find(|r| r.setting == setting.name())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut json = self.to_json()?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Aligned plain-text table: median and (mean ± std) per setting.
    pub fn to_table(&self) -> String {
        let width = self
            .results
            .iter()
            .map(|r| r.setting.len())
            .max()
            .unwrap_or(7)
            .max(7);
        let mut out = format!(
            "task: {}  folds: {}  seeds: {:?}\n{:<width$}  {:>7}  {:>18}  {:>4}\n",
            self.task, self.folds, self.seeds, "setting", "median", "mean ± std", "runs"
        );
        for r in &self.results {
            out.push_str(&format!(
                "{:<width$}  {:>7.4}  {:>9.4} ± {:>6.4}  {:>4}\n",
                r.setting,
                r.median,
                r.mean,
                r.std,
                r.runs.len()
            ));
        }
        if let Some(p) = &self.pseudo_label_precision {
            out.push_str(&format!(
                "first-round pseudo-label precision: {:.4}\n",
                p.mean
            ));
        }
        out
    }
}

/// Harness options beyond the co-training configuration.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    pub folds: usize,
    /// Seed of the fold partition.
    pub split_seed: u64,
    /// Hidden pool labels, when known, for pseudo-label diagnostics.
    pub hidden_labels: Option<BTreeMap<String, Label>>,
}

impl ExperimentOptions {
    pub fn new(folds: usize, split_seed: u64) -> Self {
        ExperimentOptions {
            folds,
            split_seed,
            hidden_labels: None,
        }
    }
}

struct FoldResult {
    runs: Vec<(Setting, RunAccuracy)>,
    precision: Option<f64>,
}

fn test_features(test: &LabeledDataset, prep: &Prepared, view: View) -> Result<Vec<FeatureVector>> {
    let vocab = &prep.view(view)?.vocab;
    Ok(test
        .items
        .iter()
        .map(|(r, _)| featurize(&r.view_text(view), vocab))
        .collect())
}

fn predictions(params: &ClassifierParams, xs: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    xs.iter().map(|x| predict_dist(params, x)).collect()
}

fn acc_of_dists(dists: &[Vec<f64>], gold: &[Label]) -> Result<f64> {
    let preds: Vec<Label> = dists.iter().map(|d| Label(argmax(d).0)).collect();
    accuracy(&preds, gold)
}

fn ensemble_dists(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(p, q)| ensemble_dist(p, q)).collect()
}

fn valid_acc(params: &ClassifierParams, prep: &Prepared, view: View) -> Result<f64> {
    let d = predictions(params, &prep.view(view)?.valid)?;
    acc_of_dists(&d, &prep.valid_y)
}

/// Index of the (lower) median of `scores`, ties broken by position.
fn median_index(scores: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order[(order.len() - 1) / 2]
}

/// Base seed of the (fold, seed) cell; every training stream in the cell
/// derives from it.
pub fn cell_seed(seed: u64, fold: usize) -> u64 {
    seed::derive(seed, &[fold as u64])
}

fn run_fold(
    split: &FoldSplit,
    pool: &UnlabeledDataset,
    cfg: &CotrainConfig,
    settings: &[Setting],
    seeds: &[u64],
    hidden: Option<&BTreeMap<String, Label>>,
) -> Result<FoldResult> {
    let fold = split.fold;
    let want = |s: Setting| settings.contains(&s);
    let need_concat = settings.iter().any(|s| s.needs_concat());
    let need_pair = settings.iter().any(|s| !s.needs_concat());
    let mut views = Vec::new();
    if need_pair {
        views.extend([View::Fnd, View::Imp]);
    }
    if need_concat {
        views.push(View::Concat);
    }
    let prep = Prepared::new(&split.train, &split.valid, pool, &views, cfg.min_df)?;
    let gold = split.test.labels();
    let mut runs = Vec::new();
    let mut precision = None;
    let cell_cfg = |s: u64| {
        let mut c = cfg.clone();
        c.train_cfg.seed = cell_seed(s, fold);
        c
    };

    if need_pair {
        let tf = test_features(&split.test, &prep, View::Fnd)?;
        let ti = test_features(&split.test, &prep, View::Imp)?;
        let mut sup = Vec::with_capacity(seeds.len());
        let mut ens_valid = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let c = cell_cfg(s);
            let fnd = supervised_init(&prep, View::Fnd, &c)?;
            let imp = supervised_init(&prep, View::Imp, &c)?;
            let vf = predictions(&fnd, &prep.view(View::Fnd)?.valid)?;
            let vi = predictions(&imp, &prep.view(View::Imp)?.valid)?;
            ens_valid.push(acc_of_dists(&ensemble_dists(&vf, &vi), &prep.valid_y)?);
            let df = predictions(&fnd, &tf)?;
            let di = predictions(&imp, &ti)?;
            for (setting, acc) in [
                (Setting::SupervisedFnd, acc_of_dists(&df, &gold)?),
                (Setting::SupervisedImp, acc_of_dists(&di, &gold)?),
                (
                    Setting::SupervisedEnsemble,
                    acc_of_dists(&ensemble_dists(&df, &di), &gold)?,
                ),
            ] {
                if want(setting) {
                    runs.push((
                        setting,
                        RunAccuracy {
                            fold,
                            seed: s,
                            accuracy: acc,
                        },
                    ));
                }
            }
            sup.push((fnd, imp));
        }

        let m = median_index(&ens_valid);
        let s = seeds[m];
        let c = cell_cfg(s);
        let (fnd0, imp0) = &sup[m];

        if [
            Setting::CotrainFnd,
            Setting::CotrainImp,
            Setting::CotrainEnsemble,
        ]
        .into_iter()
        .any(want)
        {
            let out = cotrain_prepared(&prep, Some((fnd0.clone(), imp0.clone())), &c)?;
            let df = predictions(&out.fnd, &tf)?;
            let di = predictions(&out.imp, &ti)?;
            for (setting, acc) in [
                (Setting::CotrainFnd, acc_of_dists(&df, &gold)?),
                (Setting::CotrainImp, acc_of_dists(&di, &gold)?),
                (
                    Setting::CotrainEnsemble,
                    acc_of_dists(&ensemble_dists(&df, &di), &gold)?,
                ),
            ] {
                if want(setting) {
                    runs.push((
                        setting,
                        RunAccuracy {
                            fold,
                            seed: s,
                            accuracy: acc,
                        },
                    ));
                }
            }
            if let (Some(hidden), Some(first)) = (hidden, out.selections.first()) {
                precision = Some(pseudo_label_precision(&first.set, hidden)?.value);
            }
        }

        if [
            Setting::SelftrainFnd,
            Setting::SelftrainImp,
            Setting::SelftrainEnsemble,
        ]
        .into_iter()
        .any(want)
        {
            let f = selftrain_prepared(&prep, View::Fnd, Some(fnd0.clone()), &c)?;
            let i = selftrain_prepared(&prep, View::Imp, Some(imp0.clone()), &c)?;
            let df = predictions(&f.params, &tf)?;
            let di = predictions(&i.params, &ti)?;
            for (setting, acc) in [
                (Setting::SelftrainFnd, acc_of_dists(&df, &gold)?),
                (Setting::SelftrainImp, acc_of_dists(&di, &gold)?),
                (
                    Setting::SelftrainEnsemble,
                    acc_of_dists(&ensemble_dists(&df, &di), &gold)?,
                ),
            ] {
                if want(setting) {
                    runs.push((
                        setting,
                        RunAccuracy {
                            fold,
                            seed: s,
                            accuracy: acc,
                        },
                    ));
                }
            }
        }
    }

    if need_concat {
        let tc = test_features(&split.test, &prep, View::Concat)?;
        let mut sup = Vec::with_capacity(seeds.len());
        let mut valid = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let p = supervised_init(&prep, View::Concat, &cell_cfg(s))?;
            valid.push(valid_acc(&p, &prep, View::Concat)?);
            if want(Setting::SupervisedConcat) {
                let acc = acc_of_dists(&predictions(&p, &tc)?, &gold)?;
                runs.push((
                    Setting::SupervisedConcat,
                    RunAccuracy {
                        fold,
                        seed: s,
                        accuracy: acc,
                    },
                ));
            }
            sup.push(p);
        }
        if want(Setting::SelftrainConcat) {
            let m = median_index(&valid);
            let out = selftrain_prepared(
                &prep,
                View::Concat,
                Some(sup[m].clone()),
                &cell_cfg(seeds[m]),
            )?;
            let acc = acc_of_dists(&predictions(&out.params, &tc)?, &gold)?;
            runs.push((
                Setting::SelftrainConcat,
                RunAccuracy {
                    fold,
                    seed: seeds[m],
                    accuracy: acc,
                },
            ));
        }
    }
    Ok(FoldResult { runs, precision })
}

/// Cross-validated evaluation of the requested settings.
///
/// Every (fold, seed) cell trains the supervised classifiers; the
/// semi-supervised settings run once per fold, starting from the supervised
/// run whose validation accuracy is the median across seeds (the ensemble's
/// for the Findings/Impression pair, the concat model's own for concat).
pub fn run_experiment(
    data: &LabeledDataset,
    pool: &UnlabeledDataset,
    cfg: &CotrainConfig,
    settings: &[Setting],
    seeds: &[u64],
    opts: &ExperimentOptions,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if settings.is_empty() {
        return Err(Error::Config("no settings requested".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    if data.space != cfg.task {
        return Err(Error::Config(format!(
            "data is labeled for task `{}` but the configuration is for `{}`",
            data.space.task_name, cfg.task.task_name
        )));
    }
    let mut settings = settings.to_vec();
    settings.sort();
    settings.dedup();

    let splits = split_k_folds(data, opts.folds, opts.split_seed)?;
    let results: Vec<FoldResult> = splits
        .par_iter()
        .map(|split| {
            run_fold(
                split,
                pool,
                cfg,
                &settings,
                seeds,
                opts.hidden_labels.as_ref(),
            )
            .map_err(|e| e.context(format!("fold {}", split.fold)))
        })
        .collect::<Result<_>>()?;

    let mut by_setting: BTreeMap<Setting, Vec<RunAccuracy>> = BTreeMap::new();
    for fr in &results {
        for (s, run) in &fr.runs {
            by_setting.entry(*s).or_default().push(run.clone());
        }
    }
    let results_out = settings
        .iter()
        .map(|s| {
            let runs = by_setting.remove(s).unwrap_or_default();
            let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            let sm = summarize(&accs);
            SettingResult {
                setting: s.name().to_string(),
                runs,
                median: sm.median,
                mean: sm.mean,
                std: sm.std,
            }
        })
        .collect();
    let per_fold: Vec<f64> = results.iter().filter_map(|r| r.precision).collect();
    let pseudo_label_precision = (!per_fold.is_empty()).then(|| PrecisionSummary {
        mean: per_fold.iter().sum::<f64>() / per_fold.len() as f64,
        per_fold,
    });
    Ok(ExperimentReport {
        task: data.space.task_name.clone(),
        folds: opts.folds,
        split_seed: opts.split_seed,
        seeds: seeds.to_vec(),
        config: cfg.clone(),
        results: results_out,
        pseudo_label_precision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opposite_views_tie_to_class_zero() {
        let d = ensemble_dist(&[0.9, 0.1], &[0.1, 0.9]);
        assert_eq!(d, vec![0.5, 0.5]);
        assert_eq!(argmax(&d).0, 0);
    }

    #[test]
    fn hand_arithmetic_average() {
        let d = ensemble_dist(&[0.6, 0.4], &[0.2, 0.8]);
        assert!((d[0] - 0.4).abs() < 1e-15 && (d[1] - 0.6).abs() < 1e-15);
        assert_eq!(argmax(&d).0, 1);
        let p = [0.2, 0.3, 0.5];
        assert_eq!(ensemble_dist(&p, &p), p.to_vec());
    }

    #[test]
    fn accuracy_cases() {
        let y = |v: &[usize]| v.iter().map(|&i| Label(i)).collect::<Vec<_>>();
        assert_eq!(accuracy(&y(&[0, 1, 1]), &y(&[0, 1, 1])).unwrap(), 1.0);
        assert_eq!(accuracy(&y(&[1, 0]), &y(&[0, 1])).unwrap(), 0.0);
        assert_eq!(
            accuracy(&y(&[0, 1, 1, 0]), &y(&[0, 1, 1, 1])).unwrap(),
            0.75
        );
        assert!(accuracy(&y(&[0]), &y(&[0, 1])).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn setting_names_parse() {
        assert_eq!(Setting::parse_list("all").unwrap().len(), 11);
        assert_eq!(
            Setting::parse_list("cotrain-ensemble").unwrap(),
            vec![Setting::CotrainEnsemble]
        );
        assert!(Setting::parse_list("bogus").is_err());
        assert!(Setting::parse_list("").is_err());
        for s in Setting::ALL {
            assert_eq!(s.name().parse::<Setting>().unwrap(), s);
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[0.8, 0.9, 0.7, 1.0]);
        assert!((s.median - 0.85).abs() < 1e-12);
        assert!((s.mean - 0.85).abs() < 1e-12);
        let var = (0.0025 + 0.0025 + 0.0225 + 0.0225) / 3.0;
        assert!((s.std - f64::sqrt(var)).abs() < 1e-12);
        assert_eq!(summarize(&[0.5]).std, 0.0);
    }

    #[test]
    fn median_index_picks_lower_middle() {
        assert_eq!(median_index(&[0.9, 0.7, 0.8]), 2);
        assert_eq!(median_index(&[0.5, 0.5, 0.5, 0.5]), 1);
        assert_eq!(median_index(&[0.3]), 0);
    }
}
