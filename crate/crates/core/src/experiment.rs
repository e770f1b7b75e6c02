//! End-to-end orchestration: shift split, scaling, training, adaptation, scoring, metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{jeffreys_divergence, load_dataset, shift_split, Dataset, Scaler, ShiftSplit};
use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricsReport};
use crate::model::{Checkpoint, LambdaMode, ModelConfig};
use crate::numerics::Matrix;
use crate::trainer::{score_dataset, train, TrainReport};
use crate::ttcl::{run_ttcl, RoundDiagnostics, TtclOptions};

pub const JD_BINS: usize = 20;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    NoAux,
    NoTtcl,
    NoAdapt,
    NoContra,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::NoAux,
        Ablation::NoTtcl,
        Ablation::NoAdapt,
        Ablation::NoContra,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoAux => "no-aux",
            Ablation::NoTtcl => "no-ttcl",
            Ablation::NoAdapt => "no-adapt",
            Ablation::NoContra => "no-contra",
        }
    }

    /// Method label used in reports.
    pub fn method_name(self) -> &'static str {
        match self {
            Ablation::None => "rttad",
            other => other.as_str(),
        }
    }

    /// Model config with the ablation's flags applied.
    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let mut cfg = cfg.clone();
        match self {
            Ablation::NoAux => cfg.lambda = LambdaMode::Fixed(0.0),
            Ablation::NoTtcl => cfg.max_rounds = 0,
            Ablation::NoContra => cfg.delta = 0.0,
            Ablation::None | Ablation::NoAdapt => {}
        }
        cfg
    }

    pub fn retain_pool(self) -> bool {
        self != Ablation::NoAdapt
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation {s:?}")))
    }
}

fn default_k() -> usize {
    3
}

fn default_ratio() -> f64 {
    0.5
}

const EXPERIMENT_KEYS: [&str; 8] = [
    "dataset",
    "name",
    "k_clusters",
    "split_ratio",
    "ablation",
    "seed",
    "alpha",
    "out_dir",
];

/// One experiment, stored as flat `key = value` TOML. Model hyperparameters sit at the
/// top level next to the experiment keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Report name; defaults to the dataset file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_k")]
    pub k_clusters: usize,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
    /// Evaluation contamination; the true anomaly fraction of the test split when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub model: ModelConfig,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            name: None,
            k_clusters: default_k(),
            split_ratio: default_ratio(),
            ablation: Ablation::None,
            seed: 0,
            alpha: None,
            out_dir: None,
            model: ModelConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::from_toml_with_overrides(s, &[])
    }

    /// Parses `s`, then sets each `key=value` override before validation. Values are read
    /// as TOML (`epochs=50`, `encoder_hidden=[64]`) and fall back to plain strings.
    pub fn from_toml_with_overrides(s: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(s).map_err(|e| Error::ConfigFile(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| {
                Error::ConfigFile(format!("override `{item}` is not of the form key=value"))
            })?;
            let key = key.trim();
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        // serde's flatten ignores deny_unknown_fields, so check keys here
        let model_keys = toml::Table::try_from(ModelConfig::default())
            .map_err(|e| Error::internal(e.to_string()))?;
        for key in table.keys() {
            if !EXPERIMENT_KEYS.contains(&key.as_str()) && !model_keys.contains_key(key) {
                return Err(Error::ConfigFile(format!("unknown key `{key}`")));
            }
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigFile(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigFile(e.to_string()))
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.k_clusters == 0 {
            return Err(Error::config("k_clusters must be >= 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return Err(Error::config(format!(
                "split_ratio must lie in (0, 1], got {}",
                self.split_ratio
            )));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::config(format!("alpha must lie in (0, 1), got {a}")));
            }
        }
        let probe = self
            .model
            .clone()
            .with_input_dim(self.model.input_dim.max(1));
        probe.validate()
    }

    pub fn dataset_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    /// Model config for a dataset of width `d`, ablation applied.
    pub fn resolved_model(&self, d: usize) -> ModelConfig {
        self.ablation.apply(&self.model).with_input_dim(d)
    }
}

/// Split a labeled dataset and return the raw (unscaled) train and test parts.
pub fn split_dataset(
    ds: &Dataset,
    k_clusters: usize,
    ratio: f64,
    seed: u64,
) -> Result<(ShiftSplit, Dataset, Dataset)> {
    let split = shift_split(ds, k_clusters, ratio, seed).map_err(|e| e.in_stage("shift-split"))?;
    let train = ds.subset(&split.train);
    let test = ds.subset(&split.test);
    Ok((split, train, test))
}

/// Fits the scaler on `train`, trains, and packages the result.
pub fn train_stage(
    train_x: &Matrix,
    model: &ModelConfig,
    seed: u64,
) -> Result<(Checkpoint, TrainReport)> {
    let scaler = Scaler::fit(train_x).map_err(|e| e.in_stage("scale"))?;
    let xs = scaler.transform(train_x).map_err(|e| e.in_stage("scale"))?;
    let (params, report) = train(&xs, model, seed).map_err(|e| e.in_stage("train"))?;
    let ck = Checkpoint::new(model.clone(), report.calibration, Some(scaler), params);
    Ok((ck, report))
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub checkpoint: Checkpoint,
    pub static_scores: Vec<f64>,
    pub scores: Vec<f64>,
    pub history: Vec<RoundDiagnostics>,
}

/// Runs test-time adaptation from a trained checkpoint. `labels` only feed diagnostics.
pub fn adapt_stage(
    ck: &Checkpoint,
    train_x: &Matrix,
    test_x: &Matrix,
    retain_pool: bool,
    seed: u64,
    labels: Option<&[u8]>,
) -> Result<AdaptOutcome> {
    let scale = |m: &Matrix| match &ck.scaler {
        Some(s) => s.transform(m),
        None => Ok(m.clone()),
    };
    let train_s = scale(train_x).map_err(|e| e.in_stage("scale"))?;
    let test_s = scale(test_x).map_err(|e| e.in_stage("scale"))?;
    let static_scores = score_dataset(&ck.params, &test_s, &ck.calibration, &ck.config)
        .map_err(|e| e.in_stage("score"))?;
    let mut opts = TtclOptions::from_config(&ck.config, &ck.calibration, seed);
    opts.retain_pool = retain_pool;
    let state = run_ttcl(ck.params.clone(), &train_s, &test_s, &opts, labels)
        .map_err(|e| e.in_stage("adapt"))?;
    let scores = score_dataset(&state.params, &test_s, &ck.calibration, &ck.config)
        .map_err(|e| e.in_stage("score"))?;
    let checkpoint = Checkpoint::new(
        ck.config.clone(),
        ck.calibration,
        ck.scaler.clone(),
        state.params,
    );
    Ok(AdaptOutcome {
        checkpoint,
        static_scores,
        scores,
        history: state.history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub dataset: String,
    /// Row indices of the scored rows in the source dataset, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<Vec<usize>>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub split: ShiftSplit,
    /// Jeffreys divergence between scaled training rows and scaled test normals.
    pub jeffreys_divergence: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    /// Metrics of the trained model before adaptation.
    pub static_report: MetricsReport,
    pub shift: ShiftSummary,
    pub train_report: TrainReport,
    pub adapt: AdaptOutcome,
}

const INCOMPLETE_MARKER: &str = "INCOMPLETE";

fn write(dir: &Path, file: &str, contents: &str) -> Result<()> {
    let p = dir.join(file);
    fs::write(&p, contents).map_err(|e| Error::io(p, e))
}

/// Jeffreys divergence between the training rows and the test normals, both scaled with
/// `scaler`. `None` when the test labels are unknown or there are no test normals.
pub fn jeffreys_to_test_normals(
    train: &Matrix,
    test: &Dataset,
    scaler: Option<&Scaler>,
) -> Result<Option<f64>> {
    let Some(y) = &test.y else { return Ok(None) };
    let normals: Vec<usize> = (0..test.len()).filter(|&i| y[i] == 0).collect();
    if normals.is_empty() || train.rows() == 0 {
        return Ok(None);
    }
    let tn = test.x.select_rows(&normals);
    let (a, b) = match scaler {
        Some(s) => (s.transform(train)?, s.transform(&tn)?),
        None => (train.clone(), tn),
    };
    Ok(Some(jeffreys_divergence(&a, &b, JD_BINS)?))
}

/// Runs the pipeline on an in-memory labeled dataset. Artifacts go to `out` when given.
pub fn run_on_dataset(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    out: Option<&Path>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(dir, INCOMPLETE_MARKER, "run in progress\n")?;
        write(dir, "config.toml", &cfg.to_toml_string()?)?;
    }
    let result = run_inner(cfg, ds, out);
    if let Some(dir) = out {
        match &result {
            Ok(_) => {
                let p = dir.join(INCOMPLETE_MARKER);
                fs::remove_file(&p).map_err(|e| Error::io(p, e))?;
            }
            Err(e) => write(dir, INCOMPLETE_MARKER, &format!("{e}\n"))?,
        }
    }
    result
}

fn run_inner(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    out: Option<&Path>,
) -> Result<ExperimentOutcome> {
    let name = cfg.dataset_name();
    let method = cfg.ablation.method_name();
    let (split, train_ds, test_ds) = split_dataset(ds, cfg.k_clusters, cfg.split_ratio, cfg.seed)?;
    let model = cfg.resolved_model(ds.dim());
    model.validate()?;
    info!(
        "{name}/{method} seed {}: {} train rows, {} test rows",
        cfg.seed,
        train_ds.len(),
        test_ds.len()
    );

    let (ck, train_report) = train_stage(&train_ds.x, &model, cfg.seed)?;
    let jd = jeffreys_to_test_normals(&train_ds.x, &test_ds, ck.scaler.as_ref())
        .map_err(|e| e.in_stage("shift-split"))?;
    let shift = ShiftSummary {
        split,
        jeffreys_divergence: jd,
    };
    if let Some(dir) = out {
        write(dir, "split.json", &serde_json::to_string_pretty(&shift)?)?;
        write(
            dir,
            "train_report.json",
            &serde_json::to_string_pretty(&train_report)?,
        )?;
        ck.save(&dir.join("model.json"))?;
    }

    let y = test_ds
        .y
        .as_deref()
        .ok_or_else(|| Error::internal("test split lost its labels"))?;
    let adapt = adapt_stage(
        &ck,
        &train_ds.x,
        &test_ds.x,
        cfg.ablation.retain_pool(),
        cfg.seed,
        Some(y),
    )?;

    let metrics = |scores: &[f64], method: &str| {
        MetricsReport::compute(method, name.clone(), scores, y, cfg.alpha)
            .map_err(|e| e.in_stage("metrics"))
    };
    let static_report = metrics(&adapt.static_scores, "static")?;
    let mut report = metrics(&adapt.scores, method)?;
    report.rounds = adapt.history.clone();

    if let Some(dir) = out {
        adapt.checkpoint.save(&dir.join("adapted.json"))?;
        write(
            dir,
            "adapt_history.json",
            &serde_json::to_string_pretty(&adapt.history)?,
        )?;
        let scores = ScoreFile {
            dataset: name.clone(),
            index: Some(shift.split.test.clone()),
            scores: adapt.scores.clone(),
        };
        write(dir, "scores.json", &serde_json::to_string_pretty(&scores)?)?;
        write(dir, "metrics.json", &report.to_json()?)?;
        write(
            dir,
            "metrics.csv",
            &crate::metrics::reports_to_csv(std::slice::from_ref(&report))?,
        )?;
    }
    Ok(ExperimentOutcome {
        report,
        static_report,
        shift,
        train_report,
        adapt,
    })
}

/// Loads the configured dataset and runs the pipeline, writing artifacts to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset).map_err(|e| e.in_stage("load"))?;
    let mut ds = ds;
    ds.name = cfg.dataset_name();
    run_on_dataset(cfg, &ds, cfg.out_dir.as_deref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub config: usize,
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: String,
    pub dataset: String,
    /// Missing when every repeat failed.
    pub mean: Option<BTreeMap<Metric, f64>>,
    pub runs_ok: usize,
    pub runs_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueRateRow {
    pub method: String,
    pub dataset: String,
    pub round: usize,
    pub true_rate_normal: Option<f64>,
    pub true_rate_abnormal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub runs: Vec<BenchRun>,
    pub table: Vec<BenchCell>,
    pub true_rates: Vec<TrueRateRow>,
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

impl BenchResult {
    fn build(runs: Vec<BenchRun>) -> Self {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &runs {
            let k = (r.method.clone(), r.dataset.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut table = Vec::new();
        let mut true_rates = Vec::new();
        for (method, dataset) in keys {
            let cell: Vec<&BenchRun> = runs
                .iter()
                .filter(|r| r.method == method && r.dataset == dataset)
                .collect();
            let ok: Vec<&MetricsReport> = cell.iter().filter_map(|r| r.report.as_ref()).collect();
            let mean = (!ok.is_empty()).then(|| {
                Metric::ALL
                    .into_iter()
                    .map(|m| {
                        (
                            m,
                            ok.iter().map(|r| r.metric(m)).sum::<f64>() / ok.len() as f64,
                        )
                    })
                    .collect()
            });
            let rounds = ok.iter().map(|r| r.rounds.len()).max().unwrap_or(0);
            for round in 0..rounds {
                let at = |f: fn(&RoundDiagnostics) -> Option<f64>| {
                    mean_opt(ok.iter().map(|r| r.rounds.get(round).and_then(f)))
                };
                let tn = at(|d| d.true_rate_normal);
                let ta = at(|d| d.true_rate_abnormal);
                if tn.is_some() || ta.is_some() {
                    true_rates.push(TrueRateRow {
                        method: method.clone(),
                        dataset: dataset.clone(),
                        round,
                        true_rate_normal: tn,
                        true_rate_abnormal: ta,
                    });
                }
            }
            table.push(BenchCell {
                method,
                dataset,
                mean,
                runs_ok: ok.len(),
                runs_failed: cell.len() - ok.len(),
            });
        }
        Self {
            runs,
            table,
            true_rates,
        }
    }

    /// `method,dataset,auc_roc,auc_pr,f1,runs_ok,runs_failed`; missing cells read `NA`.
    pub fn table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "dataset",
            "auc_roc",
            "auc_pr",
            "f1",
            "runs_ok",
            "runs_failed",
        ])?;
        for c in &self.table {
            let mut rec = vec![c.method.clone(), c.dataset.clone()];
            for m in Metric::ALL {
                rec.push(match &c.mean {
                    Some(mean) => mean[&m].to_string(),
                    None => "NA".into(),
                });
            }
            rec.push(c.runs_ok.to_string());
            rec.push(c.runs_failed.to_string());
            w.write_record(&rec)?;
        }
        finish_csv(w)
    }

    pub fn true_rate_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "dataset",
            "round",
            "true_rate_normal",
            "true_rate_abnormal",
        ])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        for r in &self.true_rates {
            w.write_record([
                r.method.clone(),
                r.dataset.clone(),
                r.round.to_string(),
                fmt(r.true_rate_normal),
                fmt(r.true_rate_abnormal),
            ])?;
        }
        finish_csv(w)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::internal(e.to_string()))
}

/// Runs every config `repeats` times with seeds `seed, seed+1, ...` in parallel. A failed
/// run is recorded and leaves its table cell partially or fully missing.
pub fn run_bench(
    configs: &[ExperimentConfig],
    repeats: usize,
    out_root: Option<&Path>,
) -> Result<BenchResult> {
    if configs.is_empty() {
        return Err(Error::config("bench needs at least one config"));
    }
    if repeats == 0 {
        return Err(Error::config("repeats must be >= 1"));
    }
    let jobs: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| (0..repeats as u64).map(move |r| (i, c.seed + r)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(i, seed)| {
            let mut cfg = configs[i].clone();
            cfg.seed = seed;
            let method = cfg.ablation.method_name().to_string();
            let dataset = cfg.dataset_name();
            cfg.out_dir =
                out_root.map(|root| root.join(format!("{dataset}_{method}_{i}_seed{seed}")));
            match run_experiment(&cfg) {
                Ok(o) => BenchRun {
                    config: i,
                    method,
                    dataset,
                    seed,
                    report: Some(o.report),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{dataset}/{method} seed {seed} failed: {e}");
                    BenchRun {
                        config: i,
                        method,
                        dataset,
                        seed,
                        report: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let result = BenchResult::build(runs);
    if let Some(root) = out_root {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        write(root, "bench_table.csv", &result.table_csv()?)?;
        write(root, "true_rates.csv", &result.true_rate_csv()?)?;
        write(root, "bench.json", &serde_json::to_string_pretty(&result)?)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_toml_round_trip() {
        let mut cfg = ExperimentConfig::new("data/x.csv");
        cfg.ablation = Ablation::NoContra;
        cfg.model.num_masks = 4;
        cfg.model.lambda = LambdaMode::Fixed(0.5);
        let s = cfg.to_toml_string().unwrap();
        assert!(s.contains("num_masks = 4"), "{s}");
        assert!(s.contains("ablation = \"no-contra\""), "{s}");
        assert_eq!(ExperimentConfig::from_toml_str(&s).unwrap(), cfg);
    }

    #[test]
    fn toml_defaults_and_unknown_keys() {
        let cfg =
            ExperimentConfig::from_toml_str("dataset = \"a.csv\"\nseed = 3\nepochs = 5\n").unwrap();
        assert_eq!(cfg.k_clusters, 3);
        assert_eq!(cfg.model.epochs, 5);
        assert_eq!(cfg.dataset_name(), "a");
        assert!(ExperimentConfig::from_toml_str("dataset = \"a.csv\"\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("dataset = \"a.csv\"\nsplit_ratio = 0\n").is_err());
    }

    #[test]
    fn overrides_replace_file_values() {
        let sets = [
            "epochs=7".to_string(),
            "encoder_hidden = [32, 16]".to_string(),
            "ablation=no-adapt".to_string(),
            "lambda=0.25".to_string(),
        ];
        let cfg =
            ExperimentConfig::from_toml_with_overrides("dataset = \"a.csv\"\nepochs = 5\n", &sets)
                .unwrap();
        assert_eq!(cfg.model.epochs, 7);
        assert_eq!(cfg.model.encoder_hidden, vec![32, 16]);
        assert_eq!(cfg.ablation, Ablation::NoAdapt);
        assert_eq!(cfg.model.lambda, LambdaMode::Fixed(0.25));
        assert!(ExperimentConfig::from_toml_with_overrides(
            "dataset = \"a.csv\"",
            &["bogus=1".into()]
        )
        .is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(
            "dataset = \"a.csv\"",
            &["epochs".into()]
        )
        .is_err());
    }

    #[test]
    fn ablation_flags() {
        let base = ModelConfig::default();
        assert_eq!(Ablation::NoAux.apply(&base).lambda, LambdaMode::Fixed(0.0));
        assert_eq!(Ablation::NoTtcl.apply(&base).max_rounds, 0);
        assert_eq!(Ablation::NoContra.apply(&base).delta, 0.0);
        assert!(!Ablation::NoAdapt.retain_pool());
        assert_eq!(Ablation::None.apply(&base), base);
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
        assert!("nope".parse::<Ablation>().is_err());
    }
}
