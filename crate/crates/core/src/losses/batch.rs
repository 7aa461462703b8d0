use std::fmt;

use ndarray::{s, Array2, Array3, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LossError;

/// Position of one embedding vector inside a [`MultiviewBatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    /// Molecule embedding of sample `i`.
    Mol(usize),
    /// View `k` of the image embeddings of sample `i`.
    Img(usize, usize),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Mol(i) => write!(f, "mol[{i}]"),
            Slot::Img(i, k) => write!(f, "img[{i}][{k}]"),
        }
    }
}

/// `N` molecule embeddings, each paired with `M` image-view embeddings.
///
/// Shapes are `mol: N × d` and `img: N × M × d`. Construction checks shapes,
/// finiteness and `N ≥ 2`; it does not normalize (see [`normalize`]).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewBatch {
    mol: Array2<f64>,
    img: Array3<f64>,
}

impl MultiviewBatch {
    pub fn new(mol: Array2<f64>, img: Array3<f64>) -> Result<Self, LossError> {
        let (n, d) = mol.dim();
        let (n_img, m, d_img) = img.dim();
        if n != n_img || d != d_img {
            return Err(LossError::Shape(format!(
                "mol is {n}x{d} but img is {n_img}x{m}x{d_img}"
            )));
        }
        if m == 0 || d == 0 {
            return Err(LossError::Shape(format!(
                "views per sample and embedding dimension must be >= 1 (M={m}, d={d})"
            )));
        }
        if n < 2 {
            return Err(LossError::InsufficientBatch(n));
        }
        let batch = Self { mol, img };
        for slot in batch.slots() {
            if batch.vector(slot).iter().any(|v| !v.is_finite()) {
                return Err(LossError::NonFinite(slot));
            }
        }
        Ok(batch)
    }

    /// Build from flat row-major buffers.
    pub fn from_flat(n: usize, m: usize, d: usize, mol: Vec<f64>, img: Vec<f64>) -> Result<Self, LossError> {
        let mol = Array2::from_shape_vec((n, d), mol).map_err(|e| LossError::Shape(format!("mol buffer: {e}")))?;
        let img = Array3::from_shape_vec((n, m, d), img).map_err(|e| LossError::Shape(format!("img buffer: {e}")))?;
        Self::new(mol, img)
    }

    /// Gaussian batch projected onto the unit sphere, reproducible from `seed`.
    pub fn random_unit(n: usize, m: usize, d: usize, seed: u64) -> Result<Self, LossError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mol = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
        let img = Array3::from_shape_simple_fn((n, m, d), || StandardNormal.sample(&mut rng));
        normalize(&Self::new(mol, img)?)
    }

    pub fn n(&self) -> usize {
        self.mol.nrows()
    }

    pub fn views(&self) -> usize {
        self.img.dim().1
    }

    pub fn dim(&self) -> usize {
        self.mol.ncols()
    }

    pub fn mol(&self) -> &Array2<f64> {
        &self.mol
    }

    pub fn img(&self) -> &Array3<f64> {
        &self.img
    }

    pub fn into_parts(self) -> (Array2<f64>, Array3<f64>) {
        (self.mol, self.img)
    }

    pub fn vector(&self, slot: Slot) -> ArrayView1<'_, f64> {
        match slot {
            Slot::Mol(i) => self.mol.row(i),
            Slot::Img(i, k) => self.img.slice(s![i, k, ..]),
        }
    }

    pub(crate) fn coord_mut(&mut self, slot: Slot, c: usize) -> &mut f64 {
        match slot {
            Slot::Mol(i) => &mut self.mol[[i, c]],
            Slot::Img(i, k) => &mut self.img[[i, k, c]],
        }
    }

    /// Every slot, molecules first, then images in (sample, view) order.
    pub fn slots(&self) -> impl Iterator<Item = Slot> {
        let (n, m) = (self.n(), self.views());
        (0..n)
            .map(Slot::Mol)
            .chain((0..n).flat_map(move |i| (0..m).map(move |k| Slot::Img(i, k))))
    }

    /// Reorder samples so that new sample `r` is old sample `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, LossError> {
        if perm.len() != self.n() {
            return Err(LossError::Shape(format!(
                "permutation of length {} for {} samples",
                perm.len(),
                self.n()
            )));
        }
        Self::new(self.mol.select(Axis(0), perm), self.img.select(Axis(0), perm))
    }
}

/// Scale every molecule and image-view vector to unit L2 norm.
pub fn normalize(batch: &MultiviewBatch) -> Result<MultiviewBatch, LossError> {
    let mut out = batch.clone();
    for slot in batch.slots() {
        let norm = batch.vector(slot).dot(&batch.vector(slot)).sqrt();
        if norm == 0.0 {
            return Err(LossError::DegenerateVector(slot));
        }
        match slot {
            Slot::Mol(i) => out.mol.row_mut(i).mapv_inplace(|v| v / norm),
            Slot::Img(i, k) => out.img.slice_mut(s![i, k, ..]).mapv_inplace(|v| v / norm),
        }
    }
    Ok(out)
}
