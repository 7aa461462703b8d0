//! Cross-modal 1:N retrieval: rank the true partner of each query among a
//! seeded pool of candidates and report HitRate@k and MRR.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::keyed_rng;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("pool of {needed} candidates needs {needed} distinct ids, only {available} available")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("zero-norm embedding for {0}")]
    ZeroVector(String),
    #[error("non-finite embedding for {0}")]
    NonFinite(String),
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Img2Mol,
    Mol2Img,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Img2Mol, Direction::Mol2Img];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Img2Mol => "img2mol",
            Direction::Mol2Img => "mol2img",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| RetrievalError::InvalidConfig(format!("unknown direction {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Candidates per query, the positive included.
    pub pool_size: usize,
    pub ks: Vec<usize>,
    pub direction: Direction,
    pub trials: usize,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            pool_size: 100,
            ks: vec![1, 3, 5, 10],
            direction: Direction::Img2Mol,
            trials: 1,
            seed: 0,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.pool_size < 2 {
            return Err(RetrievalError::InvalidConfig("pool_size must be >= 2".into()));
        }
        if self.ks.is_empty() {
            return Err(RetrievalError::InvalidConfig("ks must not be empty".into()));
        }
        if let Some(k) = self.ks.iter().find(|&&k| k == 0 || k > self.pool_size) {
            return Err(RetrievalError::InvalidConfig(format!(
                "k = {k} outside 1..={}",
                self.pool_size
            )));
        }
        if self.trials == 0 {
            return Err(RetrievalError::InvalidConfig("trials must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub pool_size: usize,
    pub hit_rate: BTreeMap<usize, f64>,
    pub mrr: f64,
    /// Query-major, trial-minor.
    pub per_query_ranks: Vec<usize>,
}

/// Molecule embeddings (one row per id) and image embeddings (one row per
/// image, each owned by an id). Rows are L2-normalized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedEmbeddings {
    ids: Vec<String>,
    mol: Array2<f64>,
    img: Array2<f64>,
    img_owner: Vec<usize>,
    /// Image rows of each id.
    images_of: Vec<Vec<usize>>,
}

impl PairedEmbeddings {
    pub fn new(
        ids: Vec<String>,
        mol: Array2<f64>,
        img: Array2<f64>,
        img_owner: Vec<usize>,
    ) -> Result<Self, RetrievalError> {
        if mol.nrows() != ids.len() {
            return Err(RetrievalError::InvalidConfig(format!(
                "{} ids but {} molecule rows",
                ids.len(),
                mol.nrows()
            )));
        }
        if img.ncols() != mol.ncols() {
            return Err(RetrievalError::DimensionMismatch {
                expected: mol.ncols(),
                got: img.ncols(),
            });
        }
        if img_owner.len() != img.nrows() {
            return Err(RetrievalError::InvalidConfig(format!(
                "{} image rows but {} owners",
                img.nrows(),
                img_owner.len()
            )));
        }
        let mut images_of = vec![Vec::new(); ids.len()];
        for (row, &owner) in img_owner.iter().enumerate() {
            let slot = images_of
                .get_mut(owner)
                .ok_or_else(|| RetrievalError::InvalidConfig(format!("image row {row} owned by unknown id {owner}")))?;
            slot.push(row);
        }
        if let Some(i) = images_of.iter().position(Vec::is_empty) {
            return Err(RetrievalError::InvalidConfig(format!("id {} has no image", ids[i])));
        }
        let mol = normalized_rows(mol, |r| format!("mol {}", ids[r]))?;
        let img = normalized_rows(img, |r| format!("img row {r} of {}", ids[img_owner[r]]))?;
        Ok(Self {
            ids,
            mol,
            img,
            img_owner,
            images_of,
        })
    }

    /// One image per id, row-aligned with `mol`.
    pub fn aligned(ids: Vec<String>, mol: Array2<f64>, img: Array2<f64>) -> Result<Self, RetrievalError> {
        let owners = (0..img.nrows()).collect();
        Self::new(ids, mol, img, owners)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn mol(&self) -> &Array2<f64> {
        &self.mol
    }

    pub fn img(&self) -> &Array2<f64> {
        &self.img
    }

    pub fn img_owner(&self) -> &[usize] {
        &self.img_owner
    }

    pub fn dim(&self) -> usize {
        self.mol.ncols()
    }

    /// Multiply every embedding by `q` (d × d) on the right.
    pub fn transformed(&self, q: &Array2<f64>) -> Result<Self, RetrievalError> {
        if q.nrows() != self.dim() {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim(),
                got: q.nrows(),
            });
        }
        Self::new(
            self.ids.clone(),
            self.mol.dot(q),
            self.img.dot(q),
            self.img_owner.clone(),
        )
    }

    /// Parse `id,modality,e0,e1,...` where modality is `mol` or `img`. Each id
    /// needs exactly one `mol` row and at least one `img` row.
    pub fn read_csv(path: &Path) -> Result<Self, RetrievalError> {
        let table_err = |message: String| RetrievalError::Table {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| table_err(e.to_string()))?;
        let mut ids: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut mol_rows: Vec<Option<Vec<f64>>> = Vec::new();
        let mut img_rows: Vec<Vec<f64>> = Vec::new();
        let mut owners = Vec::new();
        let mut dim = None;
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| table_err(e.to_string()))?;
            let row = line + 2;
            if record.len() < 3 {
                return Err(table_err(format!("row {row}: need id, modality and values")));
            }
            let values = record
                .iter()
                .skip(2)
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| table_err(format!("row {row}: {e}")))?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(RetrievalError::DimensionMismatch {
                        expected: d,
                        got: values.len(),
                    })
                }
                Some(_) => {}
            }
            let id = record[0].to_string();
            let slot = *index.entry(id.clone()).or_insert_with(|| {
                ids.push(id.clone());
                mol_rows.push(None);
                ids.len() - 1
            });
            match &record[1] {
                "mol" => {
                    if mol_rows[slot].replace(values).is_some() {
                        return Err(table_err(format!("row {row}: second mol row for {id}")));
                    }
                }
                "img" => {
                    img_rows.push(values);
                    owners.push(slot);
                }
                other => return Err(table_err(format!("row {row}: unknown modality {other:?}"))),
            }
        }
        let d = dim.ok_or_else(|| table_err("no rows".into()))?;
        let mut mol = Vec::with_capacity(ids.len() * d);
        for (id, row) in ids.iter().zip(mol_rows) {
            mol.extend(row.ok_or_else(|| table_err(format!("{id} has no mol row")))?);
        }
        let img: Vec<f64> = img_rows.into_iter().flatten().collect();
        let n_img = owners.len();
        Self::new(
            ids.clone(),
            Array2::from_shape_vec((ids.len(), d), mol).map_err(|e| table_err(e.to_string()))?,
            Array2::from_shape_vec((n_img, d), img).map_err(|e| table_err(e.to_string()))?,
            owners,
        )
    }
}

fn normalized_rows(mut m: Array2<f64>, name: impl Fn(usize) -> String) -> Result<Array2<f64>, RetrievalError> {
    for (r, mut row) in m.axis_iter_mut(Axis(0)).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite(name(r)));
        }
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(RetrievalError::ZeroVector(name(r)));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(m)
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
}

/// 1-based rank of `positive` among `negatives` by cosine similarity to
/// `query`; ties count against the positive.
pub fn rank_positive(
    query: ArrayView1<'_, f64>,
    positive: ArrayView1<'_, f64>,
    negatives: &[ArrayView1<'_, f64>],
) -> Result<usize, RetrievalError> {
    let d = query.len();
    for v in std::iter::once(&positive).chain(negatives) {
        if v.len() != d {
            return Err(RetrievalError::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    let target = cosine(query, positive);
    Ok(1 + negatives.iter().filter(|n| cosine(query, n.view()) >= target).count())
}

/// Rank the positive of every query in `cfg.direction` against
/// `pool_size - 1` negatives from other ids, sampled without replacement per
/// `(seed, query, trial)`.
pub fn evaluate(data: &PairedEmbeddings, cfg: &RetrievalConfig) -> Result<RetrievalReport, RetrievalError> {
    cfg.validate()?;
    let others = data.ids.len() - 1;
    if others < cfg.pool_size - 1 {
        return Err(RetrievalError::InsufficientCandidates {
            needed: cfg.pool_size,
            available: data.ids.len(),
        });
    }
    let queries = data.img.nrows();
    let direction_tag = match cfg.direction {
        Direction::Img2Mol => 0,
        Direction::Mol2Img => 1,
    };
    let ranks: Vec<usize> = (0..queries * cfg.trials)
        .into_par_iter()
        .map(|job| {
            let (q, trial) = (job / cfg.trials, job % cfg.trials);
            let owner = data.img_owner[q];
            let mut rng = keyed_rng("retrieval/pool", &[cfg.seed, direction_tag, q as u64, trial as u64]);
            let negative_ids: Vec<usize> = rand::seq::index::sample(&mut rng, others, cfg.pool_size - 1)
                .into_iter()
                .map(|i| if i >= owner { i + 1 } else { i })
                .collect();
            let (query, positive, negatives) = match cfg.direction {
                Direction::Img2Mol => (
                    data.img.row(q),
                    data.mol.row(owner),
                    negative_ids.iter().map(|&j| data.mol.row(j)).collect::<Vec<_>>(),
                ),
                Direction::Mol2Img => (
                    data.mol.row(owner),
                    data.img.row(q),
                    negative_ids
                        .iter()
                        .map(|&j| {
                            let rows = &data.images_of[j];
                            data.img.row(rows[rng.random_range(0..rows.len())])
                        })
                        .collect(),
                ),
            };
            rank_positive(query, positive, &negatives)
        })
        .collect::<Result<_, _>>()?;
    Ok(summarize(cfg.direction, cfg.pool_size, &cfg.ks, ranks))
}

/// HitRate@k and MRR over precomputed ranks.
pub fn summarize(direction: Direction, pool_size: usize, ks: &[usize], ranks: Vec<usize>) -> RetrievalReport {
    let n = ranks.len().max(1) as f64;
    let hit_rate = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    RetrievalReport {
        direction,
        pool_size,
        hit_rate,
        mrr,
        per_query_ranks: ranks,
    }
}

/// Both directions with the same pool settings.
pub fn evaluate_both(data: &PairedEmbeddings, cfg: &RetrievalConfig) -> Result<Vec<RetrievalReport>, RetrievalError> {
    Direction::ALL
        .into_iter()
        .map(|direction| {
            evaluate(
                data,
                &RetrievalConfig {
                    direction,
                    ..cfg.clone()
                },
            )
        })
        .collect()
}

/// Expected HitRate@k under random ranking.
pub fn random_hit_rate(k: usize, pool_size: usize) -> f64 {
    k.min(pool_size) as f64 / pool_size as f64
}

/// Expected MRR under random ranking: `H_pool / pool`.
pub fn random_mrr(pool_size: usize) -> f64 {
    (1..=pool_size).map(|r| 1.0 / r as f64).sum::<f64>() / pool_size as f64
}

/// Independent standard-normal embeddings for `n` ids, one image each.
pub fn random_embeddings(n: usize, dim: usize, seed: u64) -> Result<PairedEmbeddings, RetrievalError> {
    let mut rng = keyed_rng("retrieval/random-embeddings", &[seed, n as u64, dim as u64]);
    let mut draw = |rows| Array2::from_shape_simple_fn((rows, dim), || rng.sample::<f64, _>(StandardNormal));
    let mol = draw(n);
    let img = draw(n);
    PairedEmbeddings::aligned((0..n).map(|i| format!("id{i}")).collect(), mol, img)
}

pub fn report_csv(reports: &[RetrievalReport]) -> String {
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.hit_rate.keys().copied().collect())
        .unwrap_or_default();
    let mut out = String::from("direction,pool_size,queries");
    for k in &ks {
        let _ = write!(out, ",hr@{k}");
    }
    out.push_str(",mrr\n");
    for r in reports {
        let _ = write!(out, "{},{},{}", r.direction, r.pool_size, r.per_query_ranks.len());
        for k in &ks {
            let _ = write!(out, ",{:.6}", r.hit_rate.get(k).copied().unwrap_or(f64::NAN));
        }
        let _ = writeln!(out, ",{:.6}", r.mrr);
    }
    out
}

pub fn report_text(reports: &[RetrievalReport]) -> String {
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.hit_rate.keys().copied().collect())
        .unwrap_or_default();
    let mut out = format!("{:<10}", "direction");
    for k in &ks {
        let _ = write!(out, " {:>8}", format!("HR@{k}"));
    }
    let _ = writeln!(out, " {:>8}", "MRR");
    for r in reports {
        let _ = write!(out, "{:<10}", r.direction.as_str());
        for k in &ks {
            let _ = write!(out, " {:>8.3}", r.hit_rate.get(k).copied().unwrap_or(f64::NAN));
        }
        let _ = writeln!(out, " {:>8.3}", r.mrr);
    }
    out
}
