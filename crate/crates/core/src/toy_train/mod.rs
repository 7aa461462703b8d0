//! Two-tower training on synthetic paired data.
//!
//! [`generate`] draws molecule features and several image views per compound
//! with optional offsets per plate cell, [`train`] fits two small MLP
//! encoders with one of the contrastive losses, and [`held_out_embeddings`]
//! turns the result into the tables the retrieval and batch-effect
//! evaluations consume.

mod data;
mod model;
mod optim;
mod train;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Axis;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{generate, Cell, SyntheticConfig, SyntheticDataset};
pub use model::{normalize_backward, normalize_rows, Dense, Mlp, MlpTrace, TwoTower};
pub use optim::{learning_rate, AdamW};
pub use train::{
    augment_views, holdout_split, image_rows, loss_and_gradient, sample_compound_views, train, train_from, EpochRecord,
    TrainConfig, TrainOutcome,
};

use crate::batch_effect::{
    evaluate_batch_effect, BatchEffectError, BatchEffectReport, LabeledEmbeddings, Probe, ProbeConfig, SplitMode,
    SplitSpec,
};
use crate::config::config_hash;
use crate::losses::LossError;
use crate::retrieval::{evaluate_both, PairedEmbeddings, RetrievalConfig, RetrievalError, RetrievalReport};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (tau = {tau})")]
    NonFinite { epoch: usize, batch: usize, tau: f64 },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    BatchEffect(#[from] BatchEffectError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything `train-toy` needs: data, training, and both evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyRunConfig {
    pub data: SyntheticConfig,
    pub train: TrainConfig,
    /// Fraction of compounds kept out of training for evaluation.
    pub holdout_fraction: f64,
    pub retrieval: RetrievalConfig,
    pub split: SplitSpec,
    pub probe: Probe,
    pub probe_config: ProbeConfig,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        Self {
            data: SyntheticConfig::default(),
            train: TrainConfig::default(),
            holdout_fraction: 0.2,
            retrieval: RetrievalConfig::default(),
            split: SplitSpec::default(),
            probe: Probe::Logreg,
            probe_config: ProbeConfig::default(),
        }
    }
}

/// Unit-norm embeddings of `compounds`: the retrieval table (one molecule
/// row and every view per compound) and the labeled image table.
pub fn held_out_embeddings(
    model: &TwoTower,
    data: &SyntheticDataset,
    compounds: &[usize],
) -> Result<(PairedEmbeddings, LabeledEmbeddings), ToyError> {
    let views = data.views();
    let mol = model.embed_mol(data.mol.select(Axis(0), compounds).view());
    let img = model.embed_img(image_rows(data, compounds).view());
    let ids: Vec<String> = compounds.iter().map(|&c| data.ids[c].clone()).collect();
    let owners = (0..compounds.len() * views).map(|r| r / views).collect();
    let paired = PairedEmbeddings::new(ids, mol, img.clone(), owners)?;

    let mut cols: [Vec<String>; 5] = Default::default();
    for &c in compounds {
        for (k, cell) in data.cells[c].iter().enumerate() {
            let (source, batch, plate) = cell.names();
            cols[0].push(format!("{}_v{k}", data.ids[c]));
            cols[1].push(format!("class_{}", data.labels[c]));
            cols[2].push(source);
            cols[3].push(batch);
            cols[4].push(plate);
        }
    }
    let [ids, labels, source, batch, plate] = cols;
    let labeled = LabeledEmbeddings::new(ids, img, labels, source, batch, plate)?;
    Ok((paired, labeled))
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyRunReport {
    pub config_hash: String,
    pub curve: Vec<EpochRecord>,
    pub retrieval: Vec<RetrievalReport>,
    /// `None` when the held-out data cannot support every split mode.
    pub batch_effect: Option<BatchEffectReport>,
    pub wall_seconds: f64,
}

/// Generate, train, embed the held-out compounds and evaluate; writes the
/// artifacts to `out_dir` when given.
pub fn run_toy(cfg: &ToyRunConfig, out_dir: Option<&Path>) -> Result<ToyRunReport, ToyError> {
    let started = Instant::now();
    let data = generate(&cfg.data)?;
    let (train_idx, test_idx) = holdout_split(data.len(), cfg.holdout_fraction, cfg.data.seed);
    let outcome = train(&data, &train_idx, &cfg.train)?;
    let (paired, labeled) = held_out_embeddings(&outcome.model, &data, &test_idx)?;
    let retrieval = evaluate_both(&paired, &cfg.retrieval)?;
    let batch_effect = match evaluate_batch_effect(&labeled, &cfg.split, cfg.probe, &cfg.probe_config, &SplitMode::ALL)
    {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("batch-effect evaluation skipped: {e}");
            None
        }
    };
    let report = ToyRunReport {
        config_hash: config_hash(cfg),
        curve: outcome.curve,
        retrieval,
        batch_effect,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        write_artifacts(dir, cfg, &report, &paired, &labeled)?;
    }
    Ok(report)
}

pub fn loss_curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for r in curve {
        let _ = writeln!(out, "{},{:e},{:e}", r.epoch, r.mean_loss, r.lr);
    }
    out
}

/// `id,modality,e0,...` rows: molecules first, then images.
pub fn retrieval_csv(paired: &PairedEmbeddings) -> String {
    let d = paired.dim();
    let mut out = String::from("id,modality");
    for j in 0..d {
        let _ = write!(out, ",e{j}");
    }
    out.push('\n');
    let mut row = |id: &str, modality: &str, v: ndarray::ArrayView1<'_, f64>| {
        let _ = write!(out, "{id},{modality}");
        for x in v {
            let _ = write!(out, ",{x:e}");
        }
        out.push('\n');
    };
    for (id, v) in paired.ids().iter().zip(paired.mol().outer_iter()) {
        row(id, "mol", v);
    }
    for (&owner, v) in paired.img_owner().iter().zip(paired.img().outer_iter()) {
        row(&paired.ids()[owner], "img", v);
    }
    out
}

fn write_artifacts(
    dir: &Path,
    cfg: &ToyRunConfig,
    report: &ToyRunReport,
    paired: &PairedEmbeddings,
    labeled: &LabeledEmbeddings,
) -> Result<(), ToyError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ToyError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io(&path))
    };
    write("loss_curve.csv", loss_curve_csv(&report.curve))?;
    write("embeddings_retrieval.csv", retrieval_csv(paired))?;
    labeled.write_csv(&dir.join("embeddings_labeled.csv"))?;
    write("retrieval_report.csv", crate::retrieval::report_csv(&report.retrieval))?;
    if let Some(be) = &report.batch_effect {
        write(
            "batch_effect_report.csv",
            crate::batch_effect::report_csv(std::slice::from_ref(be)),
        )?;
    }
    let meta = serde_json::json!({
        "config": cfg,
        "config_hash": report.config_hash,
        "data_seed": cfg.data.seed,
        "train_seed": cfg.train.seed,
        "wall_seconds": report.wall_seconds,
        "final_loss": report.curve.last().map(|r| r.mean_loss),
        "retrieval": report.retrieval,
        "batch_effect": report.batch_effect,
    });
    let mut text = serde_json::to_string_pretty(&meta).expect("run metadata serializes");
    text.push('\n');
    write("run.json", text)
}
