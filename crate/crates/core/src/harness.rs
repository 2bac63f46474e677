//! Config-driven pipeline steps behind the command-line tool.
//!
//! One root seed drives everything. The cohort is generated from
//! `derive_seed(root, "synth")`; ablation seed `s` trains from
//! `derive_seed(root, "train/{s}")` for every arm, so arms differ only in
//! their losses. `cmd_train` trains from `derive_seed(root, "train/0")`, the
//! same stream as the first ablation seed.
//!
//! File layout of a data directory:
//!
//! ```text
//! labeled.jsonl  unlabeled.jsonl  test.jsonl        records
//! test_labels.csv  unlabeled_labels.csv             sealed truth (id, label)
//! <stem>_features.csv                               featurized records
//! labeled_labels.csv                                training labels (id, label)
//! stats.json                                        imputation + normalization
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{lr_train, LogisticModel, LrConfig};
use crate::data::{
    feature_width, fit_features, read_jsonl, read_labels_csv, synth_generate, transform_features, write_jsonl,
    write_labels_csv, write_scores_csv, FeatureMatrix, FeatureStats, Label, PatientRecord, SynthConfig,
};
use crate::error::{csv_err, Error, Result};
use crate::losses::LossConfig;
use crate::metrics::{pr_auc, pr_curve, roc_auc, PrCurve, ScoredCohort};
use crate::network::{predict_proba, Checkpoint, Discriminator, NetworkConfig};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::trainer::{init_models, train, TrainConfig, TrainLog, TrainingData};

pub const LR_ARM: &str = "lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    pub loss: LossConfig,
}

fn default_arms() -> Vec<Arm> {
    LossConfig::ablation_arms()
        .into_iter()
        .map(|(name, loss)| Arm {
            name: name.to_string(),
            loss,
        })
        .collect()
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; the `seed` fields of `synth` and `train` are derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub model: NetworkConfig,
    pub train: TrainConfig,
    pub lr: LrConfig,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            synth: SynthConfig::default(),
            model: NetworkConfig::default(),
            train: TrainConfig::default(),
            lr: LrConfig::default(),
            arms: default_arms(),
            seeds: default_seeds(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let width = feature_width(self.synth.symptoms);
        if self.model.feature_dim != width {
            return Err(Error::Config(format!(
                "model.feature_dim is {} but {} symptoms give {width} features",
                self.model.feature_dim, self.synth.symptoms
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut names = HashSet::new();
        for arm in &self.arms {
            if arm.name == LR_ARM {
                return Err(Error::Config(format!("arm name {LR_ARM:?} is reserved for the logistic baseline")));
            }
            if !names.insert(arm.name.as_str()) {
                return Err(Error::Config(format!("duplicate arm name {:?}", arm.name)));
            }
            arm.loss
                .validate()
                .map_err(|e| Error::Config(format!("arm {}: {e}", arm.name)))?;
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, "synth"),
            ..self.synth.clone()
        }
    }

    /// Training config for ablation seed `s` under `loss`.
    pub fn train_config(&self, s: u64, loss: &LossConfig) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &format!("train/{s}")),
            loss: loss.clone(),
            ..self.train.clone()
        }
    }

    pub fn arm(&self, name: &str) -> Result<&Arm> {
        self.arms.iter().find(|a| a.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).chain([LR_ARM]).collect();
            Error::Config(format!("unknown arm {name:?}; known arms: {}", known.join(", ")))
        })
    }
}

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---- synth -----------------------------------------------------------------

pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let cohort = synth_generate(&cfg.synth_config())?;
    create_dir(out)?;
    write_jsonl(&out.join("labeled.jsonl"), &cohort.labeled)?;
    write_jsonl(&out.join("unlabeled.jsonl"), &cohort.unlabeled)?;
    write_jsonl(&out.join("test.jsonl"), &cohort.test)?;
    write_labels_csv(&out.join("test_labels.csv"), &cohort.test_truth)?;
    write_labels_csv(&out.join("unlabeled_labels.csv"), &cohort.unlabeled_truth)?;
    Ok(())
}

// ---- featurize -------------------------------------------------------------

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("cannot name outputs for {}", path.display())))
}

fn labels_of(path: &Path, records: &[PatientRecord]) -> Result<Option<Vec<(String, u8)>>> {
    let labeled = records.iter().filter(|r| r.label != Label::Unlabeled).count();
    if labeled == 0 {
        return Ok(None);
    }
    if labeled != records.len() {
        return Err(Error::Data(format!(
            "{}: mixes labeled and unlabeled records",
            path.display()
        )));
    }
    Ok(Some(
        records
            .iter()
            .map(|r| (r.id.clone(), r.label.as_binary().expect("labeled")))
            .collect(),
    ))
}

/// Without `stats`, fits imputation and normalization on all `inputs` together
/// and writes `stats.json`; with `stats`, reuses them. Writes
/// `<stem>_features.csv` per input and `<stem>_labels.csv` for labeled inputs.
pub fn cmd_featurize(symptoms: usize, inputs: &[PathBuf], stats: Option<&Path>, out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config("featurize needs at least one records file".into()));
    }
    let cohorts = inputs
        .iter()
        .map(|p| read_jsonl(p))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let matrices: Vec<FeatureMatrix> = match stats {
        Some(path) => {
            let st = FeatureStats::load(path)?;
            cohorts
                .iter()
                .map(|c| transform_features(c, &st))
                .collect::<Result<_>>()?
        }
        None => {
            let all: Vec<PatientRecord> = cohorts.iter().flatten().cloned().collect();
            let (m, st) = fit_features(&all, symptoms, "training")?;
            st.save(&out.join("stats.json"))?;
            let mut start = 0;
            cohorts
                .iter()
                .map(|c| {
                    let rows: Vec<usize> = (start..start + c.len()).collect();
                    start += c.len();
                    m.select(&rows)
                })
                .collect::<Result<_>>()?
        }
    };
    for ((path, records), m) in inputs.iter().zip(&cohorts).zip(&matrices) {
        let stem = stem(path)?;
        m.write_csv(&out.join(format!("{stem}_features.csv")))?;
        if let Some(labels) = labels_of(path, records)? {
            write_labels_csv(&out.join(format!("{stem}_labels.csv")), &labels)?;
        }
    }
    Ok(())
}

// ---- train -----------------------------------------------------------------

/// Labels aligned to the rows of `m`.
fn align_labels(m: &FeatureMatrix, labels: &[(String, u8)], path: &Path) -> Result<Vec<u8>> {
    let map: HashMap<&str, u8> = labels.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    if map.len() != labels.len() {
        return Err(Error::Data(format!("{}: duplicate ids", path.display())));
    }
    m.ids
        .iter()
        .map(|id| {
            map.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("{}: no label for id {id}", path.display())))
        })
        .collect()
}

pub fn load_training_data(data_dir: &Path, with_unlabeled: bool) -> Result<TrainingData> {
    let labeled = FeatureMatrix::read_csv(&data_dir.join("labeled_features.csv"))?;
    let labels_path = data_dir.join("labeled_labels.csv");
    let labels = align_labels(&labeled, &read_labels_csv(&labels_path)?, &labels_path)?;
    let unlabeled = if with_unlabeled {
        Some(FeatureMatrix::read_csv(&data_dir.join("unlabeled_features.csv"))?.values)
    } else {
        None
    };
    Ok(TrainingData {
        labeled: labeled.values,
        labels,
        unlabeled,
    })
}

fn needs_unlabeled(loss: &LossConfig) -> bool {
    loss.use_unlabeled || loss.use_fm || loss.use_ent
}

fn write_train_outputs(out: &Path, d: &Discriminator, g: &crate::network::Generator, log: &TrainLog) -> Result<()> {
    d.to_checkpoint().save(&out.join("discriminator.ckpt"))?;
    g.to_checkpoint().save(&out.join("generator.ckpt"))?;
    log.write_step_csv(&out.join("train_log.csv"))?;
    log.write_eval_csv(&out.join("eval_log.csv"))
}

/// Trains one arm from featurized data; never reads sealed labels.
pub fn cmd_train(cfg: &ExperimentConfig, arm: &str, data_dir: &Path, out: &Path) -> Result<()> {
    if arm == LR_ARM {
        let data = load_training_data(data_dir, false)?;
        let fit = lr_train(&data.labeled, &data.labels, &cfg.lr)?;
        create_dir(out)?;
        return fit.model.to_checkpoint().save(&out.join("logistic.ckpt"));
    }
    let arm = cfg.arm(arm)?;
    let data = load_training_data(data_dir, needs_unlabeled(&arm.loss))?;
    check_width(&cfg.model, data.labeled.cols())?;
    let tc = cfg.train_config(0, &arm.loss);
    let (d, g) = init_models(&cfg.model, tc.seed)?;
    let outcome = train(d, g, &data, &tc)?;
    create_dir(out)?;
    write_train_outputs(out, &outcome.d, &outcome.g, &outcome.log)
}

fn check_width(model: &NetworkConfig, cols: usize) -> Result<()> {
    if model.feature_dim != cols {
        return Err(Error::Shape {
            op: "model input vs feature matrix",
            lhs: vec![model.feature_dim],
            rhs: vec![cols],
        });
    }
    Ok(())
}

// ---- evaluate --------------------------------------------------------------

/// A model that can score feature rows.
#[derive(Clone, Debug)]
pub enum Scorer {
    Discriminator(Discriminator),
    Logistic(LogisticModel),
}

impl Scorer {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        match ck.meta("kind")? {
            "discriminator" => Ok(Scorer::Discriminator(Discriminator::from_checkpoint(&ck)?)),
            "logistic" => Ok(Scorer::Logistic(LogisticModel::from_checkpoint(&ck)?)),
            other => Err(Error::Data(format!(
                "{}: cannot score with a {other} checkpoint",
                path.display()
            ))),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Scorer::Discriminator(d) => d.input_dim(),
            Scorer::Logistic(m) => m.dim(),
        }
    }

    pub fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "checkpoint input vs feature matrix",
                lhs: vec![self.input_dim()],
                rhs: vec![x.cols()],
            });
        }
        match self {
            Scorer::Discriminator(d) => Ok(predict_proba(d, x)?.into_values()),
            Scorer::Logistic(m) => m.predict_proba(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pr_auc: f64,
    pub roc_auc: f64,
    pub prevalence: f64,
    pub n: usize,
    pub n_pos: usize,
}

pub fn compute_metrics(scores: Vec<f64>, labels: Vec<u8>) -> Result<(Metrics, PrCurve)> {
    let cohort = ScoredCohort::new(scores, labels)?;
    let curve = pr_curve(&cohort)?;
    let m = Metrics {
        pr_auc: pr_auc(&curve),
        roc_auc: roc_auc(&cohort)?,
        prevalence: cohort.prevalence(),
        n: cohort.len(),
        n_pos: cohort.positives(),
    };
    Ok((m, curve))
}

pub fn write_metrics(out: &Path, m: &Metrics, curve: &PrCurve) -> Result<()> {
    create_dir(out)?;
    let json = serde_json::to_string_pretty(m).expect("metrics serialize");
    write_text(&out.join("metrics.json"), &(json + "\n"))?;
    let path = out.join("pr_curve.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["recall", "precision"]).map_err(|e| csv_err(&path, e))?;
    for (r, p) in &curve.points {
        w.write_record([r.to_string(), p.to_string()]).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Scores `features` with `checkpoint` and measures against the sealed labels.
pub fn cmd_evaluate(checkpoint: &Path, features: &Path, labels: &Path, out: &Path) -> Result<Metrics> {
    let scorer = Scorer::load(checkpoint)?;
    let m = FeatureMatrix::read_csv(features)?;
    let y = align_labels(&m, &read_labels_csv(labels)?, labels)?;
    let scores = scorer.score(&m.values)?;
    create_dir(out)?;
    write_scores_csv(&out.join("scores.csv"), &m.ids, &scores)?;
    let (metrics, curve) = compute_metrics(scores, y)?;
    write_metrics(out, &metrics, &curve)?;
    Ok(metrics)
}

// ---- ablate ----------------------------------------------------------------

/// Featurized cohort held in memory.
#[derive(Clone, Debug)]
pub struct PreparedCohort {
    pub train: TrainingData,
    pub test: Tensor,
    pub test_labels: Vec<u8>,
}

pub fn prepare_cohort(cfg: &ExperimentConfig) -> Result<PreparedCohort> {
    let cohort = synth_generate(&cfg.synth_config())?;
    let n_lab = cohort.labeled.len();
    let all: Vec<PatientRecord> = cohort.labeled.iter().chain(&cohort.unlabeled).cloned().collect();
    let (m, stats) = fit_features(&all, cfg.synth.symptoms, "training")?;
    let labeled = m.values.select_rows(&(0..n_lab).collect::<Vec<_>>())?;
    let unlabeled = m.values.select_rows(&(n_lab..all.len()).collect::<Vec<_>>())?;
    let labels = cohort
        .labeled
        .iter()
        .map(|r| r.label.as_binary().expect("labeled"))
        .collect();
    let test = transform_features(&cohort.test, &stats)?;
    Ok(PreparedCohort {
        train: TrainingData {
            labeled,
            labels,
            unlabeled: Some(unlabeled),
        },
        test: test.values,
        test_labels: cohort.test_truth.iter().map(|t| t.1).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub result: std::result::Result<Metrics, String>,
}

/// Trains and scores one (arm, seed) cell.
pub fn run_arm(cfg: &ExperimentConfig, arm: &Arm, seed: u64, data: &PreparedCohort, out: Option<&Path>) -> Result<Metrics> {
    let tc = cfg.train_config(seed, &arm.loss);
    let (d, g) = init_models(&cfg.model, tc.seed)?;
    let outcome = train(d, g, &data.train, &tc)?;
    let scores = predict_proba(&outcome.d, &data.test)?.into_values();
    let (metrics, curve) = compute_metrics(scores, data.test_labels.clone())?;
    if let Some(dir) = out {
        write_train_outputs(dir, &outcome.d, &outcome.g, &outcome.log)?;
        write_metrics(dir, &metrics, &curve)?;
    }
    Ok(metrics)
}

pub fn ablation_rows(cfg: &ExperimentConfig, data: &PreparedCohort, out: Option<&Path>) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for arm in &cfg.arms {
        for &seed in &cfg.seeds {
            let dir = out.map(|o| o.join("arms").join(&arm.name).join(format!("seed{seed}")));
            let result = dir
                .as_deref()
                .map_or(Ok(()), create_dir)
                .and_then(|_| run_arm(cfg, arm, seed, data, dir.as_deref()))
                .map_err(|e| e.to_string());
            rows.push(AblationRow {
                arm: arm.name.clone(),
                seed,
                result,
            });
        }
    }
    rows
}

/// Mean PR-AUC and ROC-AUC per arm over its successful seeds.
pub fn arm_means(rows: &[AblationRow]) -> BTreeMap<String, Option<(f64, f64)>> {
    let mut acc: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.arm.clone()).or_default();
        if let Ok(m) = &r.result {
            e.push((m.pr_auc, m.roc_auc));
        }
    }
    acc.into_iter()
        .map(|(arm, v)| {
            let mean = (!v.is_empty()).then(|| {
                let n = v.len() as f64;
                (v.iter().map(|x| x.0).sum::<f64>() / n, v.iter().map(|x| x.1).sum::<f64>() / n)
            });
            (arm, mean)
        })
        .collect()
}

/// Per-seed rows in run order, then one `mean` row per arm in config order.
pub fn write_ablation_table(path: &Path, arms: &[Arm], rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["arm", "seed", "pr_auc", "roc_auc", "status"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        let rec = match &r.result {
            Ok(m) => [r.arm.clone(), r.seed.to_string(), m.pr_auc.to_string(), m.roc_auc.to_string(), "ok".into()],
            Err(msg) => [r.arm.clone(), r.seed.to_string(), String::new(), String::new(), format!("failed: {msg}")],
        };
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    let means = arm_means(rows);
    for arm in arms {
        let ok = rows.iter().filter(|r| r.arm == arm.name && r.result.is_ok()).count();
        let total = rows.iter().filter(|r| r.arm == arm.name).count();
        let status = if ok == total { "ok".to_string() } else { format!("failed {}/{total}", total - ok) };
        let rec = match means.get(&arm.name).copied().flatten() {
            Some((p, r)) => [arm.name.clone(), "mean".into(), p.to_string(), r.to_string(), status],
            None => [arm.name.clone(), "mean".into(), String::new(), String::new(), status],
        };
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains every arm for every seed on the configured cohort and writes
/// `ablation_table.csv` plus per-run outputs under `arms/<arm>/seed<s>/`.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let data = prepare_cohort(cfg)?;
    check_width(&cfg.model, data.test.cols())?;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let rows = ablation_rows(cfg, &data, Some(out));
    write_ablation_table(&out.join("ablation_table.csv"), &cfg.arms, &rows)?;
    Ok(rows)
}
