//! Contrastive objectives over molecules paired with several image views.
//!
//! Three objectives share one representation: a weighted sum of
//! log-sum-exp reductions over temperature-scaled dot products,
//!
//! ```text
//! L = Σ_g  w_g · log Σ_{(a,b) ∈ g} exp(⟨u_a, u_b⟩ / τ)
//! ```
//!
//! where each group `g` lists the vector pairs entering one numerator
//! (negative weight) or denominator (positive weight). The forward value,
//! the analytic gradient and the finite-difference check all walk the same
//! group list, so a new objective only has to describe its groups.
//!
//! * [`clip_loss`]: symmetric InfoNCE with one view per sample and in-batch
//!   negatives.
//! * [`emm_loss`]: molecule-anchored loss over `M` views. By default the
//!   denominator sums over the other samples only (`j ≠ i`); set
//!   [`LossConfig::denominator_includes_positives`] for the usual InfoNCE
//!   denominator.
//! * [`imm_loss`]: the EMM loss plus `γ` times an image-to-image term over the
//!   view pairs selected by [`PairSetVariant`].
//!
//! Losses use the vectors exactly as given. Call [`normalize`] first to get
//! cosine similarities.

mod batch;
mod grad_check;
mod objective;
mod pairs;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{normalize, MultiviewBatch, Slot};
pub use grad_check::{grad_check, GradCheckReport, MAX_STEP, MIN_STEP};
pub use pairs::{pair_set, PairSetVariant};

pub(crate) use objective::Objective;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("insufficient batch: need at least 2 samples, got {0}")]
    InsufficientBatch(usize),
    #[error("degenerate input: {0} has zero norm")]
    DegenerateVector(Slot),
    #[error("non-finite input in {0}")]
    NonFinite(Slot),
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("clip loss takes exactly one view per sample, got {0}")]
    ClipViews(usize),
    #[error("intra term undefined: imm with gamma > 0 needs at least 2 views, got {0}")]
    IntraTermUndefined(usize),
    #[error("empty pair set: {variant} needs at least 2 views, got {views}")]
    EmptyPairSet { variant: PairSetVariant, views: usize },
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("finite-difference step {0} outside [{MIN_STEP:e}, {MAX_STEP:e}]")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Clip,
    Emm,
    Imm,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Clip, LossKind::Emm, LossKind::Imm];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Clip => "clip",
            LossKind::Emm => "emm",
            LossKind::Imm => "imm",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "clip" => Ok(LossKind::Clip),
            "emm" => Ok(LossKind::Emm),
            "imm" => Ok(LossKind::Imm),
            other => Err(format!("unknown loss `{other}` (expected clip, emm or imm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Softmax temperature.
    pub tau: f64,
    /// Weight of the intra-image term of the IMM loss.
    pub gamma: f64,
    pub pair_set_variant: PairSetVariant,
    /// Add the `j = i` terms to the EMM/IMM denominators.
    pub denominator_includes_positives: bool,
    /// Average the molecule→image and image→molecule CLIP directions; when
    /// false only molecule→image is used.
    pub symmetric_clip: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            gamma: 0.5,
            pair_set_variant: PairSetVariant::OrderedDistinct,
            denominator_includes_positives: false,
            symmetric_clip: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to every input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_mol: Array2<f64>,
    pub grad_img: Array3<f64>,
}

pub fn clip_loss(batch: &MultiviewBatch, cfg: &LossConfig) -> Result<LossResult, LossError> {
    loss(LossKind::Clip, batch, cfg)
}

pub fn emm_loss(batch: &MultiviewBatch, cfg: &LossConfig) -> Result<LossResult, LossError> {
    loss(LossKind::Emm, batch, cfg)
}

pub fn imm_loss(batch: &MultiviewBatch, cfg: &LossConfig) -> Result<LossResult, LossError> {
    loss(LossKind::Imm, batch, cfg)
}

pub fn loss(kind: LossKind, batch: &MultiviewBatch, cfg: &LossConfig) -> Result<LossResult, LossError> {
    Objective::new(kind, batch.n(), batch.views(), cfg)?.evaluate(batch)
}

/// Loss value only, skipping the gradient.
pub fn loss_value(kind: LossKind, batch: &MultiviewBatch, cfg: &LossConfig) -> Result<f64, LossError> {
    Objective::new(kind, batch.n(), batch.views(), cfg)?.value(batch)
}
