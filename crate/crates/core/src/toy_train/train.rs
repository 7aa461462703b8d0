use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::SyntheticDataset;
use super::model::{normalize_backward, normalize_rows, TwoTower};
use super::optim::{learning_rate, AdamW};
use super::ToyError;
use crate::losses::{LossConfig, LossError, LossKind, MultiviewBatch, Objective};
use crate::seeding::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub base_lr: f64,
    /// Compounds per step (the paper trains with 384).
    pub batch_size: usize,
    /// Views drawn per compound for EMM/IMM; CLIP always draws one.
    pub views: usize,
    /// Output width of both towers (the paper uses 1024).
    pub embed_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Imm,
            loss: LossConfig::default(),
            epochs: 200,
            warmup_epochs: 10,
            weight_decay: 0.05,
            base_lr: 1e-3,
            batch_size: 64,
            views: 3,
            embed_dim: 32,
            encoder_widths: vec![64, 64],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        self.loss.validate()?;
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(ToyError::InvalidConfig("need 0 <= warmup_epochs < epochs".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(ToyError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(ToyError::InvalidConfig("base_lr must be >= 0".into()));
        }
        if self.batch_size < 2 || self.views == 0 || self.embed_dim == 0 {
            return Err(ToyError::InvalidConfig(
                "batch_size must be >= 2, views and embed_dim >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Views per compound the loss actually sees.
    pub fn loss_views(&self) -> usize {
        match self.loss_kind {
            LossKind::Clip => 1,
            LossKind::Emm | LossKind::Imm => self.views,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TwoTower,
    pub curve: Vec<EpochRecord>,
}

/// Held-out compounds for evaluation: `(train, test)` index lists, sorted.
pub fn holdout_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng("toy/holdout", &[seed]));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let (mut test, mut train) = (order[..n_test].to_vec(), order[n_test..].to_vec());
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Pick `m` of a compound's views, taking each (source, batch) cell at most
/// once while unused cells remain, then any unused view, then repeats.
pub fn sample_compound_views(data: &SyntheticDataset, compound: usize, m: usize, rng: &mut impl Rng) -> Vec<usize> {
    let cells = &data.cells[compound];
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.shuffle(rng);
    let mut chosen = Vec::with_capacity(m);
    let mut used_cells = Vec::new();
    for &k in &order {
        let key = (cells[k].source, cells[k].batch);
        if chosen.len() < m && !used_cells.contains(&key) {
            used_cells.push(key);
            chosen.push(k);
        }
    }
    for &k in &order {
        if chosen.len() < m && !chosen.contains(&k) {
            chosen.push(k);
        }
    }
    while chosen.len() < m {
        chosen.push(order[rng.random_range(0..order.len())]);
    }
    chosen
}

/// Placeholder for image-space augmentations; synthetic feature vectors
/// have no meaningful flips or colour changes.
pub fn augment_views(_views: &mut Array2<f64>) {}

/// Batch objective and parameter gradients for `mol_x` (N × obs) and
/// `img_x` (N × M × obs).
pub fn loss_and_gradient(
    model: &TwoTower,
    mol_x: ArrayView2<'_, f64>,
    img_x: ArrayView3<'_, f64>,
    kind: LossKind,
    loss_cfg: &LossConfig,
) -> Result<(f64, TwoTower), ToyError> {
    let (n, m, _) = img_x.dim();
    let objective = Objective::new(kind, n, m, loss_cfg)?;
    let flat = img_x
        .to_shape((n * m, img_x.shape()[2]))
        .map_err(|e| ToyError::InvalidConfig(e.to_string()))?
        .to_owned();
    forward_backward(model, mol_x, flat.view(), m, &objective)
}

fn forward_backward(
    model: &TwoTower,
    mol_x: ArrayView2<'_, f64>,
    img_rows: ArrayView2<'_, f64>,
    m: usize,
    objective: &Objective,
) -> Result<(f64, TwoTower), ToyError> {
    let n = mol_x.nrows();
    let mol_trace = model.mol.forward(mol_x);
    let img_trace = model.img.forward(img_rows);
    let (mol_u, mol_norm) = normalize_rows(mol_trace.output());
    let (img_u, img_norm) = normalize_rows(img_trace.output());
    let d = mol_u.ncols();
    let batch = MultiviewBatch::new(
        mol_u.clone(),
        img_u
            .clone()
            .into_shape_with_order((n, m, d))
            .map_err(|e| ToyError::InvalidConfig(e.to_string()))?,
    )?;
    let result = objective.evaluate(&batch)?;
    let grad_img = result
        .grad_img
        .into_shape_with_order((n * m, d))
        .map_err(|e| ToyError::InvalidConfig(e.to_string()))?;
    let grads = TwoTower {
        mol: model
            .mol
            .backward(&mol_trace, normalize_backward(&mol_u, &mol_norm, &result.grad_mol)),
        img: model
            .img
            .backward(&img_trace, normalize_backward(&img_u, &img_norm, &grad_img)),
    };
    Ok((result.value, grads))
}

/// Train a fresh two-tower model on the compounds in `train_idx`.
pub fn train(data: &SyntheticDataset, train_idx: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome, ToyError> {
    let model = TwoTower::new(
        data.mol.ncols(),
        data.img.shape()[2],
        &cfg.encoder_widths,
        cfg.embed_dim,
        cfg.seed,
    );
    train_from(model, data, train_idx, cfg)
}

/// Continue training `model`; same seed and config give the same curve.
pub fn train_from(
    mut model: TwoTower,
    data: &SyntheticDataset,
    train_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ToyError> {
    cfg.validate()?;
    let m = cfg.loss_views();
    if cfg.loss_kind != LossKind::Clip && data.views() < m {
        return Err(ToyError::InvalidConfig(format!(
            "{} views per compound, loss needs {m}",
            data.views()
        )));
    }
    if train_idx.len() < cfg.batch_size {
        return Err(ToyError::InvalidConfig(format!(
            "{} training compounds, batch_size is {}",
            train_idx.len(),
            cfg.batch_size
        )));
    }
    let n = cfg.batch_size;
    let objective = Objective::new(cfg.loss_kind, n, m, &cfg.loss)?;
    let steps_per_epoch = train_idx.len() / n;
    let total = steps_per_epoch * cfg.epochs;
    let warmup = steps_per_epoch * cfg.warmup_epochs;
    let mut opt = AdamW::new(model.params().count(), cfg.weight_decay);
    let obs_img = data.img.shape()[2];
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut keyed_rng("toy/order", &[cfg.seed, epoch as u64]));
        let mut sum = 0.0;
        let mut lr = 0.0;
        for step in 0..steps_per_epoch {
            let ids = &order[step * n..(step + 1) * n];
            let mut rng = keyed_rng("toy/views", &[cfg.seed, epoch as u64, step as u64]);
            let mol_x = data.mol.select(Axis(0), ids);
            let mut img_rows = Array2::zeros((n * m, obs_img));
            for (i, &c) in ids.iter().enumerate() {
                for (k, v) in sample_compound_views(data, c, m, &mut rng).into_iter().enumerate() {
                    img_rows.row_mut(i * m + k).assign(&data.img.slice(s![c, v, ..]));
                }
            }
            augment_views(&mut img_rows);
            let (value, grads) =
                forward_backward(&model, mol_x.view(), img_rows.view(), m, &objective).map_err(|e| match e {
                    ToyError::Loss(LossError::NonFiniteLoss) | ToyError::Loss(LossError::NonFinite(_)) => {
                        ToyError::NonFinite {
                            epoch,
                            batch: step,
                            tau: cfg.loss.tau,
                        }
                    }
                    other => other,
                })?;
            lr = learning_rate(epoch * steps_per_epoch + step, total, warmup, cfg.base_lr);
            opt.step(&mut model, &grads, lr);
            sum += value;
        }
        let mean_loss = sum / steps_per_epoch as f64;
        log::debug!("epoch {epoch}: loss {mean_loss:.6}, lr {lr:.3e}");
        curve.push(EpochRecord {
            epoch: epoch + 1,
            mean_loss,
            lr,
        });
    }
    Ok(TrainOutcome { model, curve })
}

/// Image inputs of the given compounds, every view, as `(compound, view)` rows.
pub fn image_rows(data: &SyntheticDataset, compounds: &[usize]) -> Array2<f64> {
    let selected: Array3<f64> = data.img.select(Axis(0), compounds);
    let (n, v, d) = selected.dim();
    selected.into_shape_with_order((n * v, d)).expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_train::data::{generate, SyntheticConfig};

    fn small_data() -> SyntheticDataset {
        generate(&SyntheticConfig {
            n_compounds: 48,
            obs_dim_mol: 10,
            obs_dim_img: 12,
            latent_dim: 6,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn small_cfg(kind: LossKind) -> TrainConfig {
        TrainConfig {
            loss_kind: kind,
            epochs: 12,
            warmup_epochs: 2,
            batch_size: 8,
            embed_dim: 8,
            encoder_widths: vec![16],
            base_lr: 3e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn full_forward_gradient_matches_finite_differences() {
        let data = small_data();
        let model = TwoTower::new(10, 12, &[7, 5], 4, 3);
        let ids = [0, 1, 2, 3];
        let mol_x = data.mol.select(Axis(0), &ids);
        let img_x = data.img.select(Axis(0), &ids).slice(s![.., ..3, ..]).to_owned();
        for kind in LossKind::ALL {
            let views = if kind == LossKind::Clip { 1 } else { 3 };
            let img = img_x.slice(s![.., ..views, ..]).to_owned();
            let cfg = LossConfig::default();
            let (_, grads) = loss_and_gradient(&model, mol_x.view(), img.view(), kind, &cfg).unwrap();
            let value = |p: &TwoTower| loss_and_gradient(p, mol_x.view(), img.view(), kind, &cfg).unwrap().0;
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for (idx, a) in grads.params().copied().enumerate() {
                let mut plus = model.clone();
                *plus.params_mut().nth(idx).unwrap() += h;
                let mut minus = model.clone();
                *minus.params_mut().nth(idx).unwrap() -= h;
                let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
            assert!(worst < 1e-4, "{kind}: {worst}");
        }
    }

    #[test]
    fn training_lowers_the_loss_and_is_reproducible() {
        let data = small_data();
        let (train_idx, _) = holdout_split(data.len(), 0.2, 0);
        for kind in LossKind::ALL {
            let cfg = small_cfg(kind);
            let a = train(&data, &train_idx, &cfg).unwrap();
            assert!(a.curve.last().unwrap().mean_loss < a.curve[0].mean_loss, "{kind}");
            let b = train(&data, &train_idx, &cfg).unwrap();
            let bits = |o: &TrainOutcome| o.curve.iter().map(|r| r.mean_loss.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn zero_lr_without_decay_freezes_parameters() {
        let data = small_data();
        let (train_idx, _) = holdout_split(data.len(), 0.2, 0);
        let cfg = TrainConfig {
            base_lr: 0.0,
            weight_decay: 0.0,
            epochs: 3,
            warmup_epochs: 1,
            ..small_cfg(LossKind::Emm)
        };
        let init = TwoTower::new(10, 12, &cfg.encoder_widths, cfg.embed_dim, cfg.seed);
        let out = train(&data, &train_idx, &cfg).unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn nan_inputs_abort_with_diagnostics() {
        let mut data = small_data();
        data.mol.fill(f64::NAN);
        let (train_idx, _) = holdout_split(data.len(), 0.2, 0);
        let err = train(&data, &train_idx, &small_cfg(LossKind::Emm)).unwrap_err();
        assert!(matches!(err, ToyError::NonFinite { epoch: 0, batch: 0, .. }), "{err}");
    }

    #[test]
    fn sampler_prefers_distinct_cells() {
        let data = small_data();
        let mut rng = keyed_rng("test/sampler", &[0]);
        for c in 0..data.len() {
            let chosen = sample_compound_views(&data, c, 3, &mut rng);
            let mut unique = chosen.clone();
            unique.sort_unstable();
            unique.dedup();
            assert_eq!(unique.len(), 3);
            let distinct_cells = data.cells[c]
                .iter()
                .map(|x| (x.source, x.batch))
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            let chosen_cells = chosen
                .iter()
                .map(|&k| (data.cells[c][k].source, data.cells[c][k].batch))
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            assert_eq!(chosen_cells, distinct_cells.min(3));
        }
        let wide = sample_compound_views(&data, 0, 8, &mut rng);
        assert_eq!(wide.len(), 8);
    }

    #[test]
    fn holdout_is_a_partition() {
        let (train, test) = holdout_split(100, 0.2, 4);
        assert_eq!(test.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
