use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ToyError;
use crate::seeding::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_compounds: usize,
    /// Views recorded per compound; training draws `M` of them.
    pub views_per_compound: usize,
    pub latent_dim: usize,
    pub obs_dim_mol: usize,
    pub obs_dim_img: usize,
    /// Target classes; each compound's latent is drawn around one class center.
    pub n_classes: usize,
    /// Spread of class centers relative to the unit within-class spread.
    pub class_separation: f64,
    pub mol_noise_sigma: f64,
    pub view_noise_sigma: f64,
    /// Scale of the isotropic offset shared by all views of one (source,
    /// batch, plate) cell; source, batch and plate contribute with standard
    /// deviations 1, 1/2 and 1/4 times this value.
    pub batch_offset_sigma: f64,
    pub n_sources: usize,
    pub n_batches_per_source: usize,
    pub n_plates_per_batch: usize,
    /// Each compound has a home cell; a view is recorded in a uniformly drawn
    /// cell instead with this probability.
    pub cross_cell_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_compounds: 2000,
            views_per_compound: 6,
            latent_dim: 16,
            obs_dim_mol: 64,
            obs_dim_img: 64,
            n_classes: 9,
            class_separation: 1.0,
            mol_noise_sigma: 0.1,
            view_noise_sigma: 0.5,
            batch_offset_sigma: 0.0,
            n_sources: 5,
            n_batches_per_source: 2,
            n_plates_per_batch: 2,
            cross_cell_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let counts = [
            ("n_compounds", self.n_compounds),
            ("views_per_compound", self.views_per_compound),
            ("latent_dim", self.latent_dim),
            ("obs_dim_mol", self.obs_dim_mol),
            ("obs_dim_img", self.obs_dim_img),
            ("n_classes", self.n_classes),
            ("n_sources", self.n_sources),
            ("n_batches_per_source", self.n_batches_per_source),
            ("n_plates_per_batch", self.n_plates_per_batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ToyError::InvalidConfig(format!("{name} must be >= 1")));
        }
        let sigmas = [
            ("class_separation", self.class_separation),
            ("mol_noise_sigma", self.mol_noise_sigma),
            ("view_noise_sigma", self.view_noise_sigma),
            ("batch_offset_sigma", self.batch_offset_sigma),
            ("cross_cell_fraction", self.cross_cell_fraction),
        ];
        if let Some((name, _)) = sigmas.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(ToyError::InvalidConfig(format!("{name} must be finite and >= 0")));
        }
        if self.cross_cell_fraction > 1.0 {
            return Err(ToyError::InvalidConfig("cross_cell_fraction must be <= 1".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.n_sources * self.n_batches_per_source * self.n_plates_per_batch
    }
}

/// Plate coordinates of one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub source: usize,
    pub batch: usize,
    pub plate: usize,
}

impl Cell {
    pub fn names(&self) -> (String, String, String) {
        (
            format!("source_{}", self.source),
            format!("batch_{}", self.batch),
            format!("plate_{}", self.plate),
        )
    }
}

/// Paired molecule features and per-view image features.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// n × obs_dim_mol
    pub mol: Array2<f64>,
    /// n × views × obs_dim_img
    pub img: Array3<f64>,
    /// n × views
    pub cells: Vec<Vec<Cell>>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn views(&self) -> usize {
        self.img.shape()[1]
    }
}

/// Latent `z` per compound around a class center; `mol = A z + noise`, and
/// each view is `B z + noise + cell offset`.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset, ToyError> {
    cfg.validate()?;
    let mut rng = keyed_rng("toy/generate", &[cfg.seed]);
    let mut normal = move |shape: (usize, usize), scale: f64| {
        Array2::from_shape_simple_fn(shape, || scale * rng.sample::<f64, _>(StandardNormal))
    };
    let l = cfg.latent_dim;
    let proj_scale = 1.0 / (l as f64).sqrt();
    let a = normal((l, cfg.obs_dim_mol), proj_scale);
    let b = normal((l, cfg.obs_dim_img), proj_scale);
    let centers = normal((cfg.n_classes, l), cfg.class_separation);
    let mut offsets = |rows: usize, scale: f64| normal((rows, cfg.obs_dim_img), scale * cfg.batch_offset_sigma);
    let source_off = offsets(cfg.n_sources, 1.0);
    let batch_off = offsets(cfg.n_sources * cfg.n_batches_per_source, 0.5);
    let plate_off = offsets(cfg.cells(), 0.25);

    let n = cfg.n_compounds;
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.n_classes).collect();
    let mut z = normal((n, l), 1.0);
    for (i, &c) in labels.iter().enumerate() {
        z.row_mut(i).scaled_add(1.0, &centers.row(c));
    }
    let mol = z.dot(&a) + normal((n, cfg.obs_dim_mol), cfg.mol_noise_sigma);

    let v = cfg.views_per_compound;
    let clean = z.dot(&b);
    let noise = normal((n * v, cfg.obs_dim_img), cfg.view_noise_sigma);
    let mut cell_rng = keyed_rng("toy/cells", &[cfg.seed]);
    let mut img = Array3::zeros((n, v, cfg.obs_dim_img));
    let mut cells = Vec::with_capacity(n);
    let draw_cell = |rng: &mut rand_chacha::ChaCha8Rng| Cell {
        source: rng.random_range(0..cfg.n_sources),
        batch: rng.random_range(0..cfg.n_batches_per_source),
        plate: rng.random_range(0..cfg.n_plates_per_batch),
    };
    for i in 0..n {
        let home = draw_cell(&mut cell_rng);
        let mut row_cells = Vec::with_capacity(v);
        for k in 0..v {
            let cell = if cell_rng.random_bool(cfg.cross_cell_fraction) {
                draw_cell(&mut cell_rng)
            } else {
                home
            };
            let batch_idx = cell.source * cfg.n_batches_per_source + cell.batch;
            let plate_idx = batch_idx * cfg.n_plates_per_batch + cell.plate;
            let mut out = img.slice_mut(ndarray::s![i, k, ..]);
            out.assign(&clean.row(i));
            out += &noise.row(i * v + k);
            out += &source_off.row(cell.source);
            out += &batch_off.row(batch_idx);
            out += &plate_off.row(plate_idx);
            row_cells.push(cell);
        }
        cells.push(row_cells);
    }
    Ok(SyntheticDataset {
        mol,
        img,
        cells,
        labels,
        ids: (0..n).map(|i| format!("cpd{i:05}")).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_compounds: 60,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn noiseless_views_coincide() {
        let d = generate(&SyntheticConfig {
            view_noise_sigma: 0.0,
            batch_offset_sigma: 0.0,
            ..small()
        })
        .unwrap();
        for i in 0..d.len() {
            for k in 1..d.views() {
                assert_eq!(d.img.slice(ndarray::s![i, k, ..]), d.img.slice(ndarray::s![i, 0, ..]));
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SyntheticConfig { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap().mol, generate(&other).unwrap().mol);
    }

    #[test]
    fn offsets_separate_sources() {
        let d = generate(&SyntheticConfig {
            n_compounds: 300,
            batch_offset_sigma: 3.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let (mut cross, mut same) = ((0.0, 0), (0.0, 0));
        for i in 0..d.len() {
            for k in 0..d.views() {
                for l in k + 1..d.views() {
                    let diff = &d.img.slice(ndarray::s![i, k, ..]) - &d.img.slice(ndarray::s![i, l, ..]);
                    let dist = diff.dot(&diff).sqrt();
                    if d.cells[i][k].source == d.cells[i][l].source {
                        same = (same.0 + dist, same.1 + 1);
                    } else {
                        cross = (cross.0 + dist, cross.1 + 1);
                    }
                }
            }
        }
        assert!(cross.0 / cross.1 as f64 > same.0 / same.1 as f64);
    }

    #[test]
    fn zero_counts_are_rejected() {
        let cfg = SyntheticConfig {
            n_sources: 0,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(ToyError::InvalidConfig(_))));
    }
}
