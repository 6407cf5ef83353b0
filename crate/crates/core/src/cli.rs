//! Command-line front end: `parse`, `generate`, `experiment` and `sweep`.
//!
//! Run settings come from built-in defaults, then an optional TOML file
//! (`--config`), then command-line flags. Every run directory receives a
//! `config-resolved.toml` in the same schema, so `--config` on that file
//! reproduces the run.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_labeled_with, load_unlabeled_with, save_labeled, save_unlabeled, Label, LabelSpace,
    LabeledDataset, UnlabeledDataset,
};
use crate::ensemble_eval::{run_experiment, ExperimentOptions, ExperimentReport, Setting};
use crate::section_parser::{parse_report, SectionLayout};
use crate::semisup_engine::CotrainConfig;
use crate::synth_gen::{generate, load_hidden_labels, save_hidden_labels, GenConfig};

/// Relative output paths are resolved under this directory when it is set.
pub const OUTPUT_ROOT_ENV: &str = "COTRAIN_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "config-resolved.toml";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Parser)]
#[command(
    name = "cotrain",
    version,
    about = "Dual-view co-training for sectioned text reports"
)]
pub struct Cli {
    /// Log more (-v info, -vv debug). `RUST_LOG` takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a directory of raw `.txt` reports into a JSONL corpus.
    Parse(ParseArgs),
    /// Write a synthetic two-view corpus.
    Generate(RunArgs),
    /// Cross-validated comparison of supervised, self-training and co-training.
    Experiment(RunArgs),
    /// Repeat the experiment over values of one parameter and write a CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Directory of `.txt` reports; the file stem becomes the report id.
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML section layout (headings and aliases).
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// JSON object `id -> class name`; reports without a label are rejected.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "bt")]
    pub task: String,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `bt` or `aggressiveness`.
    #[arg(long)]
    pub task: Option<String>,
    /// Comma-separated setting names, or `all`.
    #[arg(long)]
    pub settings: Option<String>,
    /// Base seed; default for the fold split, the generator and `--seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training seeds, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generate the corpus instead of reading one.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub synthetic: Option<bool>,
    /// Labeled JSONL corpus.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Unlabeled JSONL pool.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Ground-truth pool labels for pseudo-label precision.
    #[arg(long)]
    pub hidden_labels: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub warm_start: Option<bool>,
    /// `false`: Impression teaches with its round-start parameters.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fresh_second_teacher: Option<bool>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2_penalty: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Synthetic labeled set size.
    #[arg(long)]
    pub n_labeled: Option<usize>,
    /// Synthetic pool size.
    #[arg(long)]
    pub n_unlabeled: Option<usize>,
    /// Synthetic held-out set size.
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[value(name = "top_k", alias = "top-k")]
    TopK,
    #[value(name = "pool_size", alias = "pool-size")]
    PoolSize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub axis: Option<SweepAxis>,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub l2_penalty: Option<f64>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CotrainSection {
    pub top_k_percent: Option<f64>,
    pub max_rounds: Option<usize>,
    pub warm_start: Option<bool>,
    pub fresh_second_teacher: Option<bool>,
    pub min_df: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub seed: Option<u64>,
    pub class_priors: Option<Vec<f64>>,
    pub fnd_vocab_per_class: Option<usize>,
    pub imp_vocab_per_class: Option<usize>,
    pub shared_noise_vocab: Option<usize>,
    pub fnd_length_mean: Option<f64>,
    pub imp_length_mean: Option<f64>,
    pub fnd_signal: Option<f64>,
    pub imp_signal: Option<f64>,
    pub n_labeled: Option<usize>,
    pub n_unlabeled: Option<usize>,
    pub n_test: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Labeled set, pool and optional hidden pool labels.
type RunData = (
    LabeledDataset,
    UnlabeledDataset,
    Option<BTreeMap<String, Label>>,
);

/// The configuration file schema. Every field is optional; the resolved
/// snapshot fills all of them in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub split_seed: Option<u64>,
    pub folds: Option<usize>,
    pub settings: Option<Vec<String>>,
    pub output: Option<PathBuf>,
    pub synthetic: Option<bool>,
    pub labeled: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub hidden_labels: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub cotrain: CotrainSection,
    #[serde(default)]
    pub synth: SynthSection,
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Flags win over file values.
    fn apply(&mut self, a: &RunArgs) {
        fn set<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        set(&mut self.task, &a.task);
        set(&mut self.seed, &a.seed);
        set(&mut self.seeds, &a.seeds);
        set(&mut self.split_seed, &a.split_seed);
        set(&mut self.folds, &a.folds);
        if let Some(s) = &a.settings {
            self.settings = Some(vec![s.clone()]);
        }
        set(&mut self.output, &a.out);
        set(&mut self.synthetic, &a.synthetic);
        set(&mut self.labeled, &a.labeled);
        set(&mut self.pool, &a.pool);
        set(&mut self.hidden_labels, &a.hidden_labels);
        set(&mut self.layout, &a.layout);
        set(&mut self.cotrain.top_k_percent, &a.top_k);
        set(&mut self.cotrain.max_rounds, &a.max_rounds);
        set(&mut self.cotrain.warm_start, &a.warm_start);
        set(
            &mut self.cotrain.fresh_second_teacher,
            &a.fresh_second_teacher,
        );
        set(&mut self.cotrain.min_df, &a.min_df);
        set(&mut self.train.learning_rate, &a.learning_rate);
        set(&mut self.train.l2_penalty, &a.l2_penalty);
        set(&mut self.train.max_epochs, &a.max_epochs);
        set(&mut self.train.batch_size, &a.batch_size);
        set(&mut self.train.patience, &a.patience);
        set(&mut self.synth.n_labeled, &a.n_labeled);
        set(&mut self.synth.n_unlabeled, &a.n_unlabeled);
        set(&mut self.synth.n_test, &a.n_test);
    }
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub space: LabelSpace,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub folds: usize,
    pub settings: Vec<Setting>,
    pub output: PathBuf,
    pub synthetic: bool,
    pub labeled: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub hidden_labels: Option<PathBuf>,
    pub layout: Option<PathBuf>,
    pub cotrain: CotrainConfig,
    pub gen: GenConfig,
    pub sweep: Option<SweepSection>,
}

fn output_path(out: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() && !root.is_empty() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

/// Merge defaults, file and flags, then check everything that can be
/// checked before any data is read or model trained.
pub fn resolve(args: &RunArgs, default_settings: &str, default_out: &str) -> Result<Resolved> {
    let mut rc = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    rc.apply(args);
    resolve_config(rc, default_settings, default_out)
}

pub fn resolve_config(
    rc: RunConfig,
    default_settings: &str,
    default_out: &str,
) -> Result<Resolved> {
    let space = LabelSpace::by_task(rc.task.as_deref().unwrap_or("bt"))?;
    let seed = rc.seed.unwrap_or(0);
    let seeds = rc.seeds.unwrap_or_else(|| vec![seed]);
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    let settings = match &rc.settings {
        Some(list) => Setting::parse_list(&list.join(","))?,
        None => Setting::parse_list(default_settings)?,
    };

    let mut cotrain = CotrainConfig::for_task(space.clone());
    let c = &rc.cotrain;
    cotrain.top_k_percent = c.top_k_percent.unwrap_or(cotrain.top_k_percent);
    cotrain.max_rounds = c.max_rounds.unwrap_or(cotrain.max_rounds);
    cotrain.warm_start = c.warm_start.unwrap_or(cotrain.warm_start);
    cotrain.fresh_second_teacher = c
        .fresh_second_teacher
        .unwrap_or(cotrain.fresh_second_teacher);
    cotrain.min_df = c.min_df.unwrap_or(cotrain.min_df);
    let t = &rc.train;
    let tc = &mut cotrain.train_cfg;
    tc.learning_rate = t.learning_rate.unwrap_or(tc.learning_rate);
    tc.l2_penalty = t.l2_penalty.unwrap_or(tc.l2_penalty);
    tc.max_epochs = t.max_epochs.unwrap_or(tc.max_epochs);
    tc.batch_size = t.batch_size.unwrap_or(tc.batch_size);
    tc.patience = t.patience.unwrap_or(tc.patience);
    cotrain.validate()?;

    let mut gen = GenConfig::for_task(space.clone());
    let s = rc.synth;
    gen.seed = s.seed.unwrap_or(seed);
    gen.class_priors = s.class_priors.unwrap_or(gen.class_priors);
    gen.fnd_vocab_per_class = s.fnd_vocab_per_class.unwrap_or(gen.fnd_vocab_per_class);
    gen.imp_vocab_per_class = s.imp_vocab_per_class.unwrap_or(gen.imp_vocab_per_class);
    gen.shared_noise_vocab = s.shared_noise_vocab.unwrap_or(gen.shared_noise_vocab);
    gen.fnd_length_mean = s.fnd_length_mean.unwrap_or(gen.fnd_length_mean);
    gen.imp_length_mean = s.imp_length_mean.unwrap_or(gen.imp_length_mean);
    gen.fnd_signal = s.fnd_signal.unwrap_or(gen.fnd_signal);
    gen.imp_signal = s.imp_signal.unwrap_or(gen.imp_signal);
    gen.n_labeled = s.n_labeled.unwrap_or(gen.n_labeled);
    gen.n_unlabeled = s.n_unlabeled.unwrap_or(gen.n_unlabeled);
    gen.n_test = s.n_test.unwrap_or(gen.n_test);
    gen.validate()?;

    let synthetic = rc.synthetic.unwrap_or(false);
    for (what, p) in [
        ("labeled corpus", &rc.labeled),
        ("pool", &rc.pool),
        ("hidden labels", &rc.hidden_labels),
        ("section layout", &rc.layout),
    ] {
        if let Some(p) = p {
            if !p.exists() {
                bail!("{what} {} does not exist", p.display());
            }
        }
    }
    if synthetic && (rc.labeled.is_some() || rc.pool.is_some() || rc.hidden_labels.is_some()) {
        bail!("--synthetic cannot be combined with --labeled, --pool or --hidden-labels");
    }
    // Resolved snapshots are TOML, whose integers are signed 64-bit.
    for s in seeds.iter().chain([&seed, &gen.seed]) {
        if i64::try_from(*s).is_err() {
            bail!("seed {s} is too large (maximum {})", i64::MAX);
        }
    }

    Ok(Resolved {
        space,
        seed,
        seeds,
        split_seed: rc.split_seed.unwrap_or(seed),
        folds: rc.folds.unwrap_or(5),
        settings,
        output: output_path(rc.output.as_deref().unwrap_or(Path::new(default_out))),
        synthetic,
        labeled: rc.labeled,
        pool: rc.pool,
        hidden_labels: rc.hidden_labels,
        layout: rc.layout,
        cotrain,
        gen,
        sweep: rc.sweep,
    })
}

impl Resolved {
    /// The snapshot written next to the outputs.
    pub fn snapshot(&self) -> RunConfig {
        let t = &self.cotrain.train_cfg;
        let g = &self.gen;
        RunConfig {
            task: Some(self.space.task_name.clone()),
            seed: Some(self.seed),
            seeds: Some(self.seeds.clone()),
            split_seed: Some(self.split_seed),
            folds: Some(self.folds),
            settings: Some(self.settings.iter().map(|s| s.name().to_string()).collect()),
            output: Some(self.output.clone()),
            synthetic: Some(self.synthetic),
            labeled: self.labeled.clone(),
            pool: self.pool.clone(),
            hidden_labels: self.hidden_labels.clone(),
            layout: self.layout.clone(),
            train: TrainSection {
                learning_rate: Some(t.learning_rate),
                l2_penalty: Some(t.l2_penalty),
                max_epochs: Some(t.max_epochs),
                batch_size: Some(t.batch_size),
                patience: Some(t.patience),
            },
            cotrain: CotrainSection {
                top_k_percent: Some(self.cotrain.top_k_percent),
                max_rounds: Some(self.cotrain.max_rounds),
                warm_start: Some(self.cotrain.warm_start),
                fresh_second_teacher: Some(self.cotrain.fresh_second_teacher),
                min_df: Some(self.cotrain.min_df),
            },
            synth: SynthSection {
                seed: Some(g.seed),
                class_priors: Some(g.class_priors.clone()),
                fnd_vocab_per_class: Some(g.fnd_vocab_per_class),
                imp_vocab_per_class: Some(g.imp_vocab_per_class),
                shared_noise_vocab: Some(g.shared_noise_vocab),
                fnd_length_mean: Some(g.fnd_length_mean),
                imp_length_mean: Some(g.imp_length_mean),
                fnd_signal: Some(g.fnd_signal),
                imp_signal: Some(g.imp_signal),
                n_labeled: Some(g.n_labeled),
                n_unlabeled: Some(g.n_unlabeled),
                n_test: Some(g.n_test),
            },
            sweep: self.sweep.clone(),
        }
    }

    fn section_layout(&self) -> Result<SectionLayout> {
        Ok(match &self.layout {
            Some(p) => SectionLayout::load(p)?,
            None => SectionLayout::default(),
        })
    }

    /// Pre-flight checks for commands that train.
    fn check_training_inputs(&self) -> Result<()> {
        if !self.synthetic {
            if self.labeled.is_none() {
                bail!("no labeled corpus: pass --labeled or --synthetic");
            }
            if self.pool.is_none() {
                if let Some(s) = self.settings.iter().find(|s| s.is_semi_supervised()) {
                    bail!("setting `{s}` needs an unlabeled pool: pass --pool or --synthetic");
                }
            }
        }
        Ok(())
    }

    /// Read or generate the labeled set, pool and hidden pool labels.
    fn load_data(&self) -> Result<RunData> {
        if self.synthetic {
            let c = generate(&self.gen)?;
            return Ok((c.labeled, c.pool, Some(c.hidden_labels)));
        }
        let layout = self.section_layout()?;
        let labeled_path = self
            .labeled
            .as_ref()
            .ok_or_else(|| anyhow!("no labeled corpus"))?;
        let labeled = load_labeled_with(labeled_path, &self.space, &layout)?;
        let pool = match &self.pool {
            Some(p) => load_unlabeled_with(p, &layout)?,
            None => UnlabeledDataset::new(Vec::new())?,
        };
        let hidden = match &self.hidden_labels {
            Some(p) => Some(load_hidden_labels(p, &self.space)?),
            None => None,
        };
        Ok((labeled, pool, hidden))
    }

    fn options(&self, hidden: Option<BTreeMap<String, Label>>) -> ExperimentOptions {
        ExperimentOptions {
            folds: self.folds,
            split_seed: self.split_seed,
            hidden_labels: hidden,
        }
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => bail!(
                "{} is in use by another run (delete {} if that run is gone)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_snapshot(r: &Resolved) -> Result<()> {
    let path = r.output.join(RESOLVED_CONFIG);
    let text =
        toml::to_string_pretty(&r.snapshot()).context("serializing the resolved configuration")?;
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Counts from `cmd_parse`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseSummary {
    pub parsed: usize,
    pub rejected: Vec<(PathBuf, String)>,
}

pub fn cmd_parse(a: &ParseArgs) -> Result<ParseSummary> {
    let layout = match &a.layout {
        Some(p) => SectionLayout::load(p)?,
        None => SectionLayout::default(),
    };
    let labels = match &a.labels {
        Some(p) => Some((LabelSpace::by_task(&a.task)?, p)),
        None => None,
    };
    let labels = match labels {
        Some((space, p)) => {
            let map = load_hidden_labels(p, &space)
                .with_context(|| format!("reading labels {}", p.display()))?;
            Some((map, space))
        }
        None => None,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("txt")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .txt reports in {}", a.input.display());
    }

    let mut summary = ParseSummary::default();
    let mut reports = Vec::new();
    for path in files {
        let id = path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let outcome = fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|raw| parse_report(&raw, &layout, &id).map_err(|e| e.to_string()))
            .and_then(|report| match &labels {
                Some((map, _)) => match map.get(&id) {
                    Some(y) => Ok((report, Some(*y))),
                    None => Err(format!("report `{id}` has no label")),
                },
                None => Ok((report, None)),
            });
        match outcome {
            Ok(item) => reports.push(item),
            Err(reason) => {
                log::warn!("{}: {reason}", path.display());
                summary.rejected.push((path, reason));
            }
        }
    }
    summary.parsed = reports.len();
    if reports.is_empty() {
        bail!(
            "all {} reports in {} were rejected",
            summary.rejected.len(),
            a.input.display()
        );
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    match &labels {
        Some((_, space)) => {
            let items = reports
                .into_iter()
                .map(|(r, y)| (r, y.expect("labeled")))
                .collect();
            save_labeled(&LabeledDataset::new(space.clone(), items)?, &a.out)?;
        }
        None => {
            let items = reports.into_iter().map(|(r, _)| r).collect();
            save_unlabeled(&UnlabeledDataset::new(items)?, &a.out)?;
        }
    }
    Ok(summary)
}

pub fn cmd_generate(args: &RunArgs) -> Result<Resolved> {
    let mut r = resolve(args, "all", "synthetic")?;
    r.synthetic = true;
    let corpus = generate(&r.gen)?;
    let _lock = OutputLock::acquire(&r.output)?;
    save_labeled(&corpus.labeled, &r.output.join("labeled.jsonl"))?;
    save_unlabeled(&corpus.pool, &r.output.join("pool.jsonl"))?;
    save_labeled(&corpus.test, &r.output.join("test.jsonl"))?;
    save_hidden_labels(
        &corpus.hidden_labels,
        &r.space,
        &r.output.join("hidden_labels.json"),
    )?;
    write_snapshot(&r)?;
    Ok(r)
}

pub fn cmd_experiment(args: &RunArgs) -> Result<ExperimentReport> {
    let r = resolve(args, "all", "experiment")?;
    r.check_training_inputs()?;
    let _lock = OutputLock::acquire(&r.output)?;
    write_snapshot(&r)?;
    let (labeled, pool, hidden) = r.load_data()?;
    let report = run_experiment(
        &labeled,
        &pool,
        &r.cotrain,
        &r.settings,
        &r.seeds,
        &r.options(hidden),
    )?;
    report.write_json(&r.output.join("report.json"))?;
    let table = report.to_table();
    fs::write(r.output.join("report.txt"), &table).context("writing report.txt")?;
    print!("{table}");
    Ok(report)
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub setting: Setting,
    /// Mean test accuracy over folds and seeds.
    pub accuracy: f64,
    pub pseudo_label_precision: Option<f64>,
}

fn check_sweep_values(axis: SweepAxis, values: &[f64], pool_len: usize) -> Result<()> {
    if values.is_empty() {
        bail!("no sweep values given");
    }
    for &v in values {
        let ok = match axis {
            SweepAxis::TopK => v > 0.0 && v <= 100.0,
            SweepAxis::PoolSize => v >= 0.0 && v.fract() == 0.0 && v as usize <= pool_len,
        };
        if !ok {
            let want = match axis {
                SweepAxis::TopK => "a percentage in (0, 100]".to_string(),
                SweepAxis::PoolSize => format!("a whole number of reports up to {pool_len}"),
            };
            bail!("invalid {} value {v}: expected {want}", axis_name(axis));
        }
    }
    Ok(())
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::TopK => "top_k",
        SweepAxis::PoolSize => "pool_size",
    }
}

/// One experiment per axis value, everything else fixed.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    labeled: &LabeledDataset,
    pool: &UnlabeledDataset,
    cfg: &CotrainConfig,
    settings: &[Setting],
    seeds: &[u64],
    opts: &ExperimentOptions,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    check_sweep_values(axis, values, pool.len())?;
    let mut rows = Vec::new();
    for &value in values {
        let mut cfg = cfg.clone();
        let sub_pool;
        let pool = match axis {
            SweepAxis::TopK => {
                cfg.top_k_percent = value;
                pool
            }
            SweepAxis::PoolSize => {
                sub_pool = pool.truncated(value as usize);
                &sub_pool
            }
        };
        log::info!("sweep {} = {value}", axis_name(axis));
        let report = run_experiment(labeled, pool, &cfg, settings, seeds, opts)?;
        let precision = report.pseudo_label_precision.as_ref().map(|p| p.mean);
        for &setting in settings {
            if let Some(res) = report.setting(setting) {
                rows.push(SweepRow {
                    value,
                    setting,
                    accuracy: res.mean,
                    pseudo_label_precision: precision,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    value: f64,
    setting: &'a str,
    accuracy: f64,
    pseudo_label_precision: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow {
            value: r.value,
            setting: r.setting.name(),
            accuracy: r.accuracy,
            pseudo_label_precision: r.pseudo_label_precision,
        })?;
    }
    if rows.is_empty() {
        w.write_record(["value", "setting", "accuracy", "pseudo_label_precision"])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<Vec<SweepRow>> {
    let mut r = resolve(&a.run, "cotrain-fnd,cotrain-imp,cotrain-ensemble", "sweep")?;
    let axis = a
        .axis
        .or(r.sweep.as_ref().map(|s| s.axis))
        .ok_or_else(|| anyhow!("no sweep axis: pass --axis"))?;
    let values = a
        .values
        .clone()
        .or_else(|| r.sweep.as_ref().map(|s| s.values.clone()))
        .ok_or_else(|| anyhow!("no sweep values: pass --values"))?;
    r.sweep = Some(SweepSection {
        axis,
        values: values.clone(),
    });
    r.check_training_inputs()?;
    // The pool size bound is known up front only for generated pools.
    let bound = if r.synthetic {
        r.gen.n_unlabeled
    } else {
        usize::MAX
    };
    check_sweep_values(axis, &values, bound)?;

    let _lock = OutputLock::acquire(&r.output)?;
    write_snapshot(&r)?;
    let (labeled, pool, hidden) = r.load_data()?;
    let rows = run_sweep(
        &labeled,
        &pool,
        &r.cotrain,
        &r.settings,
        &r.seeds,
        &r.options(hidden),
        axis,
        &values,
    )?;
    let csv = sweep_csv(&rows)?;
    fs::write(r.output.join("sweep.csv"), &csv).context("writing sweep.csv")?;
    print!("{csv}");
    Ok(rows)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    init_logging(cli.verbose);
    match cli.command {
        Command::Parse(a) => {
            let s = cmd_parse(&a)?;
            println!("parsed {}, rejected {}", s.parsed, s.rejected.len());
            for (path, reason) in &s.rejected {
                println!("  rejected {}: {reason}", path.display());
            }
        }
        Command::Generate(a) => {
            let r = cmd_generate(&a)?;
            println!("wrote synthetic corpus to {}", r.output.display());
        }
        Command::Experiment(a) => {
            cmd_experiment(&a)?;
        }
        Command::Sweep(a) => {
            cmd_sweep(&a)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let mut rc: RunConfig = toml::from_str(
            "task = \"aggressiveness\"\nseeds = [1, 2]\n[cotrain]\ntop_k_percent = 10.0\n",
        )
        .unwrap();
        rc.apply(&RunArgs {
            top_k: Some(30.0),
            ..RunArgs::default()
        });
        let r = resolve_config(rc, "all", "out").unwrap();
        assert_eq!(r.space, LabelSpace::aggressiveness());
        assert_eq!(r.seeds, [1, 2]);
        assert_eq!(r.cotrain.top_k_percent, 30.0);
        assert_eq!(r.cotrain.max_rounds, 5);
    }

    #[test]
    fn task_default_k() {
        let r = resolve_config(
            RunConfig {
                task: Some("aggressiveness".into()),
                ..Default::default()
            },
            "all",
            "o",
        )
        .unwrap();
        assert_eq!(r.cotrain.top_k_percent, 25.0);
        let r = resolve_config(RunConfig::default(), "all", "o").unwrap();
        assert_eq!(r.cotrain.top_k_percent, 50.0);
        assert_eq!(r.seeds, [0]);
        assert_eq!(r.settings.len(), 11);
    }

    #[test]
    fn snapshot_round_trips() {
        let rc = RunConfig {
            seed: Some(7),
            synthetic: Some(true),
            settings: Some(vec!["cotrain-ensemble".into()]),
            ..Default::default()
        };
        let r = resolve_config(rc, "all", "o").unwrap();
        let text = toml::to_string_pretty(&r.snapshot()).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, r.snapshot());
        let again = resolve_config(back, "all", "o").unwrap();
        assert_eq!(again.snapshot(), r.snapshot());
        assert_eq!(again.gen.seed, 7);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("tpo_k = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[cotrain]\ntop_k = 3.0").is_err());
    }

    #[test]
    fn invalid_values_fail_before_training() {
        let bad = |rc: RunConfig| resolve_config(rc, "all", "o").is_err();
        assert!(bad(RunConfig {
            task: Some("nope".into()),
            ..Default::default()
        }));
        assert!(bad(RunConfig {
            seeds: Some(vec![]),
            ..Default::default()
        }));
        assert!(bad(RunConfig {
            settings: Some(vec!["bogus".into()]),
            ..Default::default()
        }));
        assert!(bad(RunConfig {
            seed: Some(u64::MAX),
            ..Default::default()
        }));
        let mut rc = RunConfig::default();
        rc.cotrain.top_k_percent = Some(0.0);
        assert!(bad(rc));
        let mut rc = RunConfig::default();
        rc.train.learning_rate = Some(-1.0);
        assert!(bad(rc));
        assert!(bad(RunConfig {
            labeled: Some("/no/such/file.jsonl".into()),
            ..Default::default()
        }));
    }

    #[test]
    fn semi_supervised_needs_pool() {
        let dir = tempfile::tempdir().unwrap();
        let labeled = dir.path().join("l.jsonl");
        fs::write(&labeled, "").unwrap();
        let rc = RunConfig {
            labeled: Some(labeled.clone()),
            ..Default::default()
        };
        let r = resolve_config(rc, "cotrain-ensemble", "o").unwrap();
        let err = r.check_training_inputs().unwrap_err().to_string();
        assert!(err.contains("cotrain-ensemble"), "{err}");
        let rc = RunConfig {
            labeled: Some(labeled),
            ..Default::default()
        };
        let r = resolve_config(rc, "supervised-fnd", "o").unwrap();
        r.check_training_inputs().unwrap();
    }

    #[test]
    fn sweep_values_are_checked() {
        assert!(check_sweep_values(SweepAxis::TopK, &[], 10).is_err());
        assert!(check_sweep_values(SweepAxis::TopK, &[10.0, 100.0], 10).is_ok());
        let err = check_sweep_values(SweepAxis::TopK, &[10.0, 120.0], 10)
            .unwrap_err()
            .to_string();
        assert!(err.contains("120"), "{err}");
        assert!(check_sweep_values(SweepAxis::PoolSize, &[5.0, 10.0], 10).is_ok());
        assert!(check_sweep_values(SweepAxis::PoolSize, &[11.0], 10).is_err());
        assert!(check_sweep_values(SweepAxis::PoolSize, &[2.5], 10).is_err());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
        OutputLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn csv_has_header_and_empty_precision() {
        let rows = [
            SweepRow {
                value: 10.0,
                setting: Setting::CotrainEnsemble,
                accuracy: 0.9,
                pseudo_label_precision: Some(0.95),
            },
            SweepRow {
                value: 25.0,
                setting: Setting::CotrainEnsemble,
                accuracy: 0.5,
                pseudo_label_precision: None,
            },
        ];
        assert_eq!(
            sweep_csv(&rows).unwrap(),
            "value,setting,accuracy,pseudo_label_precision\n10.0,cotrain-ensemble,0.9,0.95\n25.0,cotrain-ensemble,0.5,\n"
        );
    }
}
