//! C ABI over the `hcs-contrast` losses and retrieval evaluation.
//!
//! Batches and embedding tables live behind opaque handles created and freed
//! by this library. Every fallible call returns an [`HcsStatus`]; on failure
//! [`hcs_last_error`] describes the most recent error on the calling thread.
//! Arrays are row-major `double` buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hcs_contrast::losses::{self, grad_check, LossConfig, LossError, LossKind, MultiviewBatch, PairSetVariant};
use hcs_contrast::retrieval::{self, Direction, PairedEmbeddings, RetrievalConfig, RetrievalError};
use ndarray::{Array2, Array3};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numeric = 3,
    Io = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcsLossKind {
    Clip = 0,
    Emm = 1,
    Imm = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcsPairSet {
    OrderedDistinct = 0,
    UnorderedDistinct = 1,
    AllPairs = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcsDirection {
    ImgToMol = 0,
    MolToImg = 1,
}

/// Loss hyperparameters; start from [`hcs_loss_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HcsLossConfig {
    pub tau: f64,
    pub gamma: f64,
    pub pair_set: HcsPairSet,
    pub denominator_includes_positives: bool,
    pub symmetric_clip: bool,
}

/// Molecule vectors with `M` image views each.
pub struct HcsBatch(MultiviewBatch);

/// Paired molecule and image embeddings for retrieval.
pub struct HcsEmbeddings(PairedEmbeddings);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

struct Fail(HcsStatus, String);

impl From<LossError> for Fail {
    fn from(e: LossError) -> Self {
        let status = match e {
            LossError::NonFinite(_) | LossError::NonFiniteLoss => HcsStatus::Numeric,
            _ => HcsStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

impl From<RetrievalError> for Fail {
    fn from(e: RetrievalError) -> Self {
        let status = match e {
            RetrievalError::Table { .. } => HcsStatus::Io,
            _ => HcsStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(HcsStatus::NullPointer, format!("{name} is null"))
}

fn invalid(message: impl Into<String>) -> Fail {
    Fail(HcsStatus::InvalidArgument, message.into())
}

/// Run `body`, recording its error and converting panics.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> HcsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HcsStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HcsStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn element_count(dims: &[usize]) -> Result<usize, Fail> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| invalid("array size overflows"))
}

impl From<HcsLossKind> for LossKind {
    fn from(k: HcsLossKind) -> Self {
        match k {
            HcsLossKind::Clip => LossKind::Clip,
            HcsLossKind::Emm => LossKind::Emm,
            HcsLossKind::Imm => LossKind::Imm,
        }
    }
}

impl From<HcsDirection> for Direction {
    fn from(d: HcsDirection) -> Self {
        match d {
            HcsDirection::ImgToMol => Direction::Img2Mol,
            HcsDirection::MolToImg => Direction::Mol2Img,
        }
    }
}

impl From<&HcsLossConfig> for LossConfig {
    fn from(c: &HcsLossConfig) -> Self {
        LossConfig {
            tau: c.tau,
            gamma: c.gamma,
            pair_set_variant: match c.pair_set {
                HcsPairSet::OrderedDistinct => PairSetVariant::OrderedDistinct,
                HcsPairSet::UnorderedDistinct => PairSetVariant::UnorderedDistinct,
                HcsPairSet::AllPairs => PairSetVariant::AllPairs,
            },
            denominator_includes_positives: c.denominator_includes_positives,
            symmetric_clip: c.symmetric_clip,
        }
    }
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn hcs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Default loss settings: `tau = 0.07`, `gamma = 0.5`, ordered distinct view
/// pairs, positives excluded from the EMM/IMM denominators, symmetric CLIP.
#[no_mangle]
pub extern "C" fn hcs_loss_config_default() -> HcsLossConfig {
    let d = LossConfig::default();
    HcsLossConfig {
        tau: d.tau,
        gamma: d.gamma,
        pair_set: HcsPairSet::OrderedDistinct,
        denominator_includes_positives: d.denominator_includes_positives,
        symmetric_clip: d.symmetric_clip,
    }
}

/// Copy an `n × d` molecule array and an `n × m × d` image array into a new
/// batch.
///
/// # Safety
/// `mol` must hold `n·d` doubles, `img` `n·m·d` doubles, and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hcs_batch_new(
    n: usize,
    m: usize,
    d: usize,
    mol: *const f64,
    img: *const f64,
    out: *mut *mut HcsBatch,
) -> HcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mol = slice(mol, element_count(&[n, d])?, "mol")?;
        let img = slice(img, element_count(&[n, m, d])?, "img")?;
        let mol = Array2::from_shape_vec((n, d), mol.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let img = Array3::from_shape_vec((n, m, d), img.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let batch = MultiviewBatch::new(mol, img)?;
        *out = Box::into_raw(Box::new(HcsBatch(batch)));
        Ok(())
    })
}

/// Seeded batch of random unit vectors.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcs_batch_random_unit(
    n: usize,
    m: usize,
    d: usize,
    seed: u64,
    out: *mut *mut HcsBatch,
) -> HcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let batch = MultiviewBatch::random_unit(n, m, d, seed)?;
        *out = Box::into_raw(Box::new(HcsBatch(batch)));
        Ok(())
    })
}

/// Release a batch; null is ignored.
///
/// # Safety
/// `batch` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hcs_batch_free(batch: *mut HcsBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

/// Loss value and, when the output pointers are non-null, its gradients
/// (`n·d` and `n·m·d` doubles, same layout as the inputs).
///
/// # Safety
/// `batch` and `cfg` must be valid; `value` writable; gradient buffers null
/// or writable for their full size.
#[no_mangle]
pub unsafe extern "C" fn hcs_loss_evaluate(
    kind: HcsLossKind,
    batch: *const HcsBatch,
    cfg: *const HcsLossConfig,
    value: *mut f64,
    grad_mol: *mut f64,
    grad_img: *mut f64,
) -> HcsStatus {
    guard(|| {
        let batch = &batch.as_ref().ok_or_else(|| null("batch"))?.0;
        let cfg = LossConfig::from(cfg.as_ref().ok_or_else(|| null("cfg"))?);
        if value.is_null() {
            return Err(null("value"));
        }
        let result = losses::loss(kind.into(), batch, &cfg)?;
        *value = result.value;
        if !grad_mol.is_null() {
            let src = result.grad_mol.as_standard_layout();
            ptr::copy_nonoverlapping(src.as_ptr(), grad_mol, src.len());
        }
        if !grad_img.is_null() {
            let src = result.grad_img.as_standard_layout();
            ptr::copy_nonoverlapping(src.as_ptr(), grad_img, src.len());
        }
        Ok(())
    })
}

/// Largest relative error between the analytic gradient and central
/// differences with step `eps`.
///
/// # Safety
/// `batch` and `cfg` must be valid and `max_rel_error` writable.
#[no_mangle]
pub unsafe extern "C" fn hcs_grad_check(
    kind: HcsLossKind,
    batch: *const HcsBatch,
    cfg: *const HcsLossConfig,
    eps: f64,
    max_rel_error: *mut f64,
) -> HcsStatus {
    guard(|| {
        let batch = &batch.as_ref().ok_or_else(|| null("batch"))?.0;
        let cfg = LossConfig::from(cfg.as_ref().ok_or_else(|| null("cfg"))?);
        if max_rel_error.is_null() {
            return Err(null("max_rel_error"));
        }
        *max_rel_error = grad_check(kind.into(), batch, &cfg, eps)?.max_rel_error;
        Ok(())
    })
}

/// Build an embedding table from `n_ids` molecule rows and `n_img` image rows
/// of width `d`; `img_owner[r]` is the molecule row image `r` belongs to.
/// Rows are normalized to unit length. Ids are `"0"`, `"1"`, ...
///
/// # Safety
/// `mol` must hold `n_ids·d` doubles, `img` `n_img·d` doubles, `img_owner`
/// `n_img` entries, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcs_embeddings_new(
    n_ids: usize,
    n_img: usize,
    d: usize,
    mol: *const f64,
    img: *const f64,
    img_owner: *const usize,
    out: *mut *mut HcsEmbeddings,
) -> HcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mol = slice(mol, element_count(&[n_ids, d])?, "mol")?;
        let img = slice(img, element_count(&[n_img, d])?, "img")?;
        let owners = slice(img_owner, n_img, "img_owner")?;
        let mol = Array2::from_shape_vec((n_ids, d), mol.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let img = Array2::from_shape_vec((n_img, d), img.to_vec()).map_err(|e| invalid(e.to_string()))?;
        if let Some(&bad) = owners.iter().find(|&&o| o >= n_ids) {
            return Err(invalid(format!("img_owner {bad} out of range for {n_ids} ids")));
        }
        let ids = (0..n_ids).map(|i| i.to_string()).collect();
        let table = PairedEmbeddings::new(ids, mol, img, owners.to_vec())?;
        *out = Box::into_raw(Box::new(HcsEmbeddings(table)));
        Ok(())
    })
}

/// Read an `id,modality,e0,...` CSV table.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hcs_embeddings_read_csv(path: *const c_char, out: *mut *mut HcsEmbeddings) -> HcsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let table = PairedEmbeddings::read_csv(Path::new(path))?;
        *out = Box::into_raw(Box::new(HcsEmbeddings(table)));
        Ok(())
    })
}

/// Release an embedding table; null is ignored.
///
/// # Safety
/// `table` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hcs_embeddings_free(table: *mut HcsEmbeddings) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// 1:`pool_size` retrieval. Writes one hit rate per entry of `ks` into
/// `hit_rates` and the mean reciprocal rank into `mrr`.
///
/// # Safety
/// `table` must be valid, `ks` and `hit_rates` must hold `n_ks` entries, and
/// `mrr` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcs_retrieval_evaluate(
    table: *const HcsEmbeddings,
    pool_size: usize,
    ks: *const usize,
    n_ks: usize,
    direction: HcsDirection,
    seed: u64,
    hit_rates: *mut f64,
    mrr: *mut f64,
) -> HcsStatus {
    guard(|| {
        let table = &table.as_ref().ok_or_else(|| null("table"))?.0;
        let ks = slice(ks, n_ks, "ks")?.to_vec();
        if hit_rates.is_null() && n_ks > 0 {
            return Err(null("hit_rates"));
        }
        if mrr.is_null() {
            return Err(null("mrr"));
        }
        let cfg = RetrievalConfig {
            pool_size,
            ks: ks.clone(),
            direction: direction.into(),
            trials: 1,
            seed,
        };
        let report = retrieval::evaluate(table, &cfg)?;
        for (i, k) in ks.iter().enumerate() {
            *hit_rates.add(i) = report.hit_rate[k];
        }
        *mrr = report.mrr;
        Ok(())
    })
}
