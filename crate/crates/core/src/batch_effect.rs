//! Batch-effect evaluation: fit linear and nearest-neighbour probes on random
//! and group-separated splits and report `G = Acc_split / Acc_random`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::keyed_rng;

#[derive(Debug, Error)]
pub enum BatchEffectError {
    #[error("infeasible {mode} split: {reason}")]
    InfeasibleSplit { mode: SplitMode, reason: String },
    #[error("training split holds a single class")]
    SingleClass,
    #[error("empty training set")]
    EmptyTrain,
    #[error("k = {k} exceeds the {train} training samples")]
    KTooLarge { k: usize, train: usize },
    #[error("G ratios undefined: random-split accuracy is 0")]
    RatioUndefined,
    #[error("invalid batch-effect config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Nss,
    Nsb,
    Nsp,
}

impl SplitMode {
    pub const ALL: [SplitMode; 4] = [SplitMode::Random, SplitMode::Nss, SplitMode::Nsb, SplitMode::Nsp];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Random => "random",
            SplitMode::Nss => "nss",
            SplitMode::Nsb => "nsb",
            SplitMode::Nsp => "nsp",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitMode {
    type Err = BatchEffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| BatchEffectError::InvalidConfig(format!("unknown split mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probe {
    Logreg,
    Knn,
}

impl Probe {
    pub fn as_str(self) -> &'static str {
        match self {
            Probe::Logreg => "logreg",
            Probe::Knn => "knn",
        }
    }
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Probe {
    type Err = BatchEffectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logreg" => Ok(Probe::Logreg),
            "knn" => Ok(Probe::Knn),
            _ => Err(BatchEffectError::InvalidConfig(format!("unknown probe {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub repetitions: usize,
    pub seed: u64,
    /// Largest accepted gap between the achieved and requested test fraction
    /// under grouped splits.
    pub tolerance: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            repetitions: 5,
            seed: 0,
            tolerance: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), BatchEffectError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(BatchEffectError::InvalidConfig(
                "test_fraction must be in (0, 1)".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(BatchEffectError::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(BatchEffectError::InvalidConfig("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogregConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for LogregConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 200,
            lr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub logreg: LogregConfig,
    pub knn_k: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            logreg: LogregConfig::default(),
            knn_k: 15,
        }
    }
}

/// Embeddings with a class label and their plate provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    pub ids: Vec<String>,
    pub x: Array2<f64>,
    /// Index into `classes`.
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
    pub source: Vec<String>,
    pub batch: Vec<String>,
    pub plate: Vec<String>,
}

impl LabeledEmbeddings {
    pub fn new(
        ids: Vec<String>,
        x: Array2<f64>,
        labels: Vec<String>,
        source: Vec<String>,
        batch: Vec<String>,
        plate: Vec<String>,
    ) -> Result<Self, BatchEffectError> {
        let n = x.nrows();
        if [ids.len(), labels.len(), source.len(), batch.len(), plate.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(BatchEffectError::InvalidConfig("column lengths differ".into()));
        }
        if n == 0 || x.ncols() == 0 {
            return Err(BatchEffectError::InvalidConfig("empty embedding table".into()));
        }
        if let Some(r) = x.outer_iter().position(|row| row.iter().any(|v| !v.is_finite())) {
            return Err(BatchEffectError::InvalidConfig(format!(
                "non-finite embedding {}",
                ids[r]
            )));
        }
        let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let labels = labels.iter().map(|l| index[l.as_str()]).collect();
        Ok(Self {
            ids,
            x,
            labels,
            classes,
            source,
            batch,
            plate,
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grouping key of row `i` under `mode` (`None` for random splits).
    pub fn group_key(&self, mode: SplitMode, i: usize) -> Option<String> {
        match mode {
            SplitMode::Random => None,
            SplitMode::Nss => Some(self.source[i].clone()),
            SplitMode::Nsb => Some(format!("{}/{}", self.source[i], self.batch[i])),
            SplitMode::Nsp => Some(format!("{}/{}/{}", self.source[i], self.batch[i], self.plate[i])),
        }
    }

    /// Parse `id,label,source,batch,plate,e0,e1,...`.
    pub fn read_csv(path: &Path) -> Result<Self, BatchEffectError> {
        let table_err = |message: String| BatchEffectError::Table {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| table_err(e.to_string()))?;
        let mut cols: [Vec<String>; 5] = Default::default();
        let mut values = Vec::new();
        let mut dim = None;
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| table_err(e.to_string()))?;
            let row = line + 2;
            if record.len() < 6 {
                return Err(table_err(format!("row {row}: need 5 id columns and values")));
            }
            let d = record.len() - 5;
            if *dim.get_or_insert(d) != d {
                return Err(table_err(format!(
                    "row {row}: {d} values, expected {}",
                    dim.unwrap_or(0)
                )));
            }
            for (c, col) in cols.iter_mut().enumerate() {
                col.push(record[c].to_string());
            }
            for v in record.iter().skip(5) {
                values.push(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| table_err(format!("row {row}: {e}")))?,
                );
            }
        }
        let d = dim.ok_or_else(|| table_err("no rows".into()))?;
        let [ids, labels, source, batch, plate] = cols;
        let x = Array2::from_shape_vec((ids.len(), d), values).map_err(|e| table_err(e.to_string()))?;
        Self::new(ids, x, labels, source, batch, plate)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), BatchEffectError> {
        let table_err = |e: csv::Error| BatchEffectError::Table {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(table_err)?;
        let mut header: Vec<String> = ["id", "label", "source", "batch", "plate"].map(String::from).to_vec();
        header.extend((0..self.x.ncols()).map(|j| format!("e{j}")));
        w.write_record(&header).map_err(table_err)?;
        for i in 0..self.len() {
            let mut row = vec![
                self.ids[i].clone(),
                self.classes[self.labels[i]].clone(),
                self.source[i].clone(),
                self.batch[i].clone(),
                self.plate[i].clone(),
            ];
            row.extend(self.x.row(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&row).map_err(table_err)?;
        }
        w.flush().map_err(|e| table_err(e.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Train/test indices for one repetition. Random splits are stratified by
/// label; grouped splits move whole groups into test, greedily from a seeded
/// shuffle, while that brings the test size closer to the target.
pub fn make_split(
    data: &LabeledEmbeddings,
    mode: SplitMode,
    spec: &SplitSpec,
    repetition: usize,
) -> Result<Split, BatchEffectError> {
    spec.validate()?;
    let n = data.len();
    let mut rng = keyed_rng("batch-effect/split", &[spec.seed, mode.tag(), repetition as u64]);
    let mut in_test = vec![false; n];
    if mode == SplitMode::Random {
        let mut by_class = vec![Vec::new(); data.classes.len()];
        for (i, &l) in data.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        for members in &mut by_class {
            members.shuffle(&mut rng);
            let take = (spec.test_fraction * members.len() as f64).round() as usize;
            for &i in &members[..take] {
                in_test[i] = true;
            }
        }
    } else {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            groups
                .entry(data.group_key(mode, i).unwrap_or_default())
                .or_default()
                .push(i);
        }
        if groups.len() < 2 {
            return Err(BatchEffectError::InfeasibleSplit {
                mode,
                reason: format!("{} distinct group(s), need at least 2", groups.len()),
            });
        }
        let mut order: Vec<&Vec<usize>> = groups.values().collect();
        order.shuffle(&mut rng);
        let target = spec.test_fraction * n as f64;
        let mut count = 0usize;
        for members in order {
            let with = (count + members.len()) as f64;
            if (with - target).abs() < (count as f64 - target).abs() && count + members.len() < n {
                count += members.len();
                for &i in members {
                    in_test[i] = true;
                }
            }
        }
        let achieved = count as f64 / n as f64;
        if count == 0 || (achieved - spec.test_fraction).abs() > spec.tolerance {
            return Err(BatchEffectError::InfeasibleSplit {
                mode,
                reason: format!(
                    "closest test fraction {achieved:.3} is outside {} ± {}",
                    spec.test_fraction, spec.tolerance
                ),
            });
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_test[i]);
    Ok(Split { train, test })
}

/// Multinomial logistic regression `softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logreg {
    /// classes × d
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Features are multiplied by this before the linear map.
    pub scale: f64,
}

impl Logreg {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            w: Array2::zeros((classes, dim)),
            b: Array1::zeros(classes),
            scale: 1.0,
        }
    }

    fn probabilities(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.w.t()) * self.scale + &self.b;
        for mut row in z.axis_iter_mut(Axis(0)) {
            let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        z
    }

    /// Mean cross-entropy plus `l2/2 · ‖W‖²` (bias unpenalized).
    pub fn objective(&self, x: ArrayView2<'_, f64>, y: &[usize], l2: f64) -> f64 {
        let p = self.probabilities(x);
        let ce: f64 = y.iter().enumerate().map(|(i, &c)| -p[[i, c]].ln()).sum::<f64>() / y.len() as f64;
        ce + 0.5 * l2 * self.w.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gradient of [`Logreg::objective`] with respect to `(W, b)`.
    pub fn gradient(&self, x: ArrayView2<'_, f64>, y: &[usize], l2: f64) -> (Array2<f64>, Array1<f64>) {
        let mut residual = self.probabilities(x);
        for (i, &c) in y.iter().enumerate() {
            residual[[i, c]] -= 1.0;
        }
        residual /= y.len() as f64;
        let gw = residual.t().dot(&x) * self.scale + &self.w * l2;
        let gb = residual.sum_axis(Axis(0));
        (gw, gb)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.probabilities(x)
            .outer_iter()
            .map(|row| argmax(row.iter().copied()))
            .collect()
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn distinct_classes(y: &[usize]) -> usize {
    y.iter().collect::<BTreeSet<_>>().len()
}

/// Full-batch gradient descent from zero with a cosine learning-rate decay.
///
/// Features are scaled by the inverse RMS row norm of the training set so the
/// fixed step size suits embeddings of any magnitude; a single scalar keeps the
/// fit equivariant under rotations of the embedding space.
pub fn fit_logreg(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    classes: usize,
    cfg: &LogregConfig,
) -> Result<Logreg, BatchEffectError> {
    if y.is_empty() {
        return Err(BatchEffectError::EmptyTrain);
    }
    if distinct_classes(y) < 2 {
        return Err(BatchEffectError::SingleClass);
    }
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64;
    let mut model = Logreg::zeros(classes, x.ncols());
    model.scale = if mean_sq > 0.0 { 1.0 / mean_sq.sqrt() } else { 1.0 };
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        let (gw, gb) = model.gradient(x, y, cfg.l2);
        model.w.scaled_add(-lr, &gw);
        model.b.scaled_add(-lr, &gb);
    }
    Ok(model)
}

fn unit_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Cosine k-nearest-neighbour majority vote; a tied vote goes to the tied
/// class holding the nearest neighbour.
pub fn knn_classify(
    train_x: ArrayView2<'_, f64>,
    train_y: &[usize],
    test_x: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<usize>, BatchEffectError> {
    if train_y.is_empty() {
        return Err(BatchEffectError::EmptyTrain);
    }
    if k == 0 || k > train_y.len() {
        return Err(BatchEffectError::KTooLarge {
            k,
            train: train_y.len(),
        });
    }
    let sims = unit_rows(test_x).dot(&unit_rows(train_x).t());
    let classes = train_y.iter().max().map_or(0, |&m| m + 1);
    Ok(sims
        .outer_iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let neighbours = &order[..k];
            let mut votes = vec![0usize; classes];
            for &j in neighbours {
                votes[train_y[j]] += 1;
            }
            let top = votes.iter().copied().max().unwrap_or(0);
            neighbours
                .iter()
                .map(|&j| train_y[j])
                .find(|&c| votes[c] == top)
                .unwrap_or(0)
        })
        .collect())
}

/// Fraction of `predicted` equal to `truth`.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Fit `probe` on `split.train` and score it on `split.test`.
pub fn probe_accuracy(
    data: &LabeledEmbeddings,
    split: &Split,
    probe: Probe,
    cfg: &ProbeConfig,
) -> Result<f64, BatchEffectError> {
    let train_x = data.x.select(Axis(0), &split.train);
    let test_x = data.x.select(Axis(0), &split.test);
    let train_y: Vec<usize> = split.train.iter().map(|&i| data.labels[i]).collect();
    let test_y: Vec<usize> = split.test.iter().map(|&i| data.labels[i]).collect();
    let predicted = match probe {
        Probe::Logreg => fit_logreg(train_x.view(), &train_y, data.classes.len(), &cfg.logreg)?.predict(test_x.view()),
        Probe::Knn => knn_classify(train_x.view(), &train_y, test_x.view(), cfg.knn_k)?,
    };
    Ok(accuracy(&predicted, &test_y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: SplitMode,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// `mean / acc_rand`; 1 for the random mode itself.
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEffectReport {
    pub probe: Probe,
    pub acc_rand: f64,
    pub modes: Vec<ModeSummary>,
}

impl BatchEffectReport {
    pub fn mode(&self, mode: SplitMode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn g(&self, mode: SplitMode) -> Option<f64> {
        self.mode(mode).map(|m| m.g)
    }
}

/// Mean probe accuracy per split mode over `spec.repetitions` and the G
/// ratios against the random split. The random mode is always evaluated.
pub fn evaluate_batch_effect(
    data: &LabeledEmbeddings,
    spec: &SplitSpec,
    probe: Probe,
    cfg: &ProbeConfig,
    modes: &[SplitMode],
) -> Result<BatchEffectReport, BatchEffectError> {
    spec.validate()?;
    let mut wanted = vec![SplitMode::Random];
    wanted.extend(modes.iter().copied().filter(|&m| m != SplitMode::Random));
    wanted.dedup();
    let jobs: Vec<(SplitMode, usize)> = wanted
        .iter()
        .flat_map(|&m| (0..spec.repetitions).map(move |r| (m, r)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(mode, rep)| probe_accuracy(data, &make_split(data, mode, spec, rep)?, probe, cfg))
        .collect::<Result<_, _>>()?;
    let summaries: Vec<(SplitMode, Vec<f64>)> = wanted
        .iter()
        .zip(accs.chunks(spec.repetitions))
        .map(|(&m, a)| (m, a.to_vec()))
        .collect();
    let acc_rand = mean(&summaries[0].1);
    let modes = summaries
        .into_iter()
        .map(|(mode, accuracies)| {
            let m = mean(&accuracies);
            Ok(ModeSummary {
                mode,
                std: std_dev(&accuracies, m),
                mean: m,
                g: generalisation_ratio(m, acc_rand)?,
                accuracies,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(BatchEffectReport { probe, acc_rand, modes })
}

/// `acc_split / acc_rand`, refusing a zero denominator.
pub fn generalisation_ratio(acc_split: f64, acc_rand: f64) -> Result<f64, BatchEffectError> {
    if acc_rand > 0.0 {
        Ok(acc_split / acc_rand)
    } else {
        Err(BatchEffectError::RatioUndefined)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64], m: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// One row per probe: `probe,acc_rand,g_nsp,g_nsb,g_nss`.
pub fn report_csv(reports: &[BatchEffectReport]) -> String {
    let mut out = String::from("probe,acc_rand,g_nsp,g_nsb,g_nss\n");
    let cell = |g: Option<f64>| g.map_or(String::new(), |v| format!("{v:.6}"));
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.6},{},{},{}",
            r.probe,
            r.acc_rand,
            cell(r.g(SplitMode::Nsp)),
            cell(r.g(SplitMode::Nsb)),
            cell(r.g(SplitMode::Nss))
        );
    }
    out
}

/// Per-repetition accuracies: `probe,mode,repetition,accuracy`.
pub fn detail_csv(reports: &[BatchEffectReport]) -> String {
    let mut out = String::from("probe,mode,repetition,accuracy\n");
    for r in reports {
        for m in &r.modes {
            for (rep, acc) in m.accuracies.iter().enumerate() {
                let _ = writeln!(out, "{},{},{rep},{acc:.6}", r.probe, m.mode);
            }
        }
    }
    out
}

pub fn report_text(reports: &[BatchEffectReport]) -> String {
    let mut out = format!(
        "{:<8} {:>9} {:>7} {:>7} {:>7}\n",
        "probe", "Acc_Rand", "G_NSP", "G_NSB", "G_NSS"
    );
    let cell = |g: Option<f64>| g.map_or("-".to_string(), |v| format!("{v:.3}"));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8} {:>9.3} {:>7} {:>7} {:>7}",
            r.probe.as_str(),
            r.acc_rand,
            cell(r.g(SplitMode::Nsp)),
            cell(r.g(SplitMode::Nsb)),
            cell(r.g(SplitMode::Nss))
        );
    }
    out
}

/// Class-structured Gaussian embeddings laid out over
/// `sources × batches × plates`, with an optional constant offset per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticLabeledConfig {
    pub classes: usize,
    pub dim: usize,
    pub sources: usize,
    pub batches_per_source: usize,
    pub plates_per_batch: usize,
    /// Samples of each class on each plate.
    pub per_plate_class: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub source_offset_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticLabeledConfig {
    fn default() -> Self {
        Self {
            classes: 9,
            dim: 16,
            sources: 5,
            batches_per_source: 2,
            plates_per_batch: 2,
            per_plate_class: 5,
            class_separation: 3.0,
            noise_sigma: 1.0,
            source_offset_sigma: 0.0,
            seed: 0,
        }
    }
}

pub fn synthetic_labeled(cfg: &SyntheticLabeledConfig) -> Result<LabeledEmbeddings, BatchEffectError> {
    let mut rng = keyed_rng("batch-effect/synthetic", &[cfg.seed]);
    let mut gauss =
        |n: usize, sigma: f64| -> Vec<f64> { (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect() };
    let centers: Vec<Vec<f64>> = (0..cfg.classes).map(|_| gauss(cfg.dim, cfg.class_separation)).collect();
    let offsets: Vec<Vec<f64>> = (0..cfg.sources)
        .map(|_| gauss(cfg.dim, cfg.source_offset_sigma))
        .collect();
    let (mut ids, mut labels, mut source, mut batch, mut plate, mut values) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    for (s, offset) in offsets.iter().enumerate() {
        for b in 0..cfg.batches_per_source {
            for p in 0..cfg.plates_per_batch {
                for (c, center) in centers.iter().enumerate() {
                    for r in 0..cfg.per_plate_class {
                        let noise = gauss(cfg.dim, cfg.noise_sigma);
                        values.extend((0..cfg.dim).map(|j| center[j] + offset[j] + noise[j]));
                        ids.push(format!("s{s}_b{b}_p{p}_c{c}_{r}"));
                        labels.push(format!("class_{c}"));
                        source.push(format!("source_{s}"));
                        batch.push(format!("batch_{b}"));
                        plate.push(format!("plate_{p}"));
                    }
                }
            }
        }
    }
    let x = Array2::from_shape_vec((ids.len(), cfg.dim), values)
        .map_err(|e| BatchEffectError::InvalidConfig(e.to_string()))?;
    LabeledEmbeddings::new(ids, x, labels, source, batch, plate)
}

/// Random orthogonal `d × d` matrix (Gram-Schmidt on a Gaussian draw).
pub fn random_orthogonal(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = keyed_rng("orthogonal", &[seed, d as u64]);
    let mut q = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        loop {
            let mut v = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
            for j in 0..i {
                let proj = v.dot(&q.row(j));
                v.scaled_add(-proj, &q.row(j));
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-8 {
                q.row_mut(i).assign(&(v / norm));
                break;
            }
        }
    }
    q
}
