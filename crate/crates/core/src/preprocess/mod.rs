//! Reduction of 16-bit multi-channel microscopy sites to 8-bit PNG planes.
//!
//! Each selected field of view goes through four steps:
//!
//! 1. [`rescale_16_to_8`]: map the 1st..99th nearest-rank percentile range of
//!    each channel onto `0..=255` (hot pixels and other artefacts saturate).
//! 2. [`center_crop_resize`]: crop the largest centered square and resize it
//!    bilinearly to `target_size` (768 by default).
//! 3. [`encode_channels`]: write one lossless grayscale PNG per channel.
//! 4. [`sample_views`]: only a seeded subset of views is converted per well,
//!    6 for treatment wells and 3 for control wells.
//!
//! [`run_pipeline`] walks an input tree laid out as
//! `source/batch/plate/well/v{view}/ch{0..4}.tif` (plus an optional
//! `platemap.csv` per plate with `well,compound_id,is_control` columns),
//! converts in parallel and writes `manifest.csv` and `manifest.json` next to
//! the PNG files. Output is byte-identical for any worker count.

mod codec;
pub mod fixture;
mod pipeline;
mod rescale;
mod resize;
mod sampling;
mod stats;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{decode_png, encode_channels, encode_png, read_png, read_tiff_u16, tiff_dimensions, write_tiff_u16};
pub use pipeline::{output_file_name, run_pipeline, ManifestHeader, RunSummary, MANIFEST_CSV, MANIFEST_JSON};
pub use rescale::{nearest_rank_percentile, rescale_16_to_8, Rescaled};
pub use resize::{center_crop_resize, Resized};
pub use sampling::{sample_views, well_rng};
pub use stats::{report_csv, report_text, stage_rows, CompressionStats, StageRow};

/// Channels per site.
pub const CHANNELS: usize = 5;

pub const PIPELINE_VERSION: &str = concat!("hcs-contrast-preprocess/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("empty plane")]
    EmptyPlane,
    #[error("plane buffer holds {len} pixels, expected {width}x{height}")]
    ShapeMismatch { width: usize, height: usize, len: usize },
    #[error("invalid percentiles: need 0 <= low < high <= 100, got {low} and {high}")]
    InvalidPercentiles { low: f64, high: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Codec { path: PathBuf, message: String },
    #[error("input directory {0} does not exist")]
    MissingInput(PathBuf),
    #[error("invalid preprocess config: {0}")]
    InvalidConfig(String),
}

impl PreprocessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn codec(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Codec {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    pixels: Vec<T>,
}

pub type RawPlane = Plane<u16>;
pub type GrayPlane = Plane<u8>;

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, pixels: Vec<T>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::EmptyPlane);
        }
        if pixels.len() != width * height {
            return Err(PreprocessError::ShapeMismatch {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self, PreprocessError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self, PreprocessError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub seed: u64,
    pub treatment_views: usize,
    pub control_views: usize,
    pub target_size: usize,
    pub p_low: f64,
    pub p_high: f64,
    /// Sources dropped before sampling (protocol outliers).
    pub excluded_sources: Vec<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            treatment_views: 6,
            control_views: 3,
            target_size: 768,
            p_low: 1.0,
            p_high: 99.0,
            excluded_sources: Vec::new(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(0.0..=100.0).contains(&self.p_low) || !(0.0..=100.0).contains(&self.p_high) || self.p_low >= self.p_high {
            return Err(PreprocessError::InvalidPercentiles {
                low: self.p_low,
                high: self.p_high,
            });
        }
        if self.target_size == 0 {
            return Err(PreprocessError::InvalidConfig("target_size must be >= 1".into()));
        }
        if self.treatment_views == 0 || self.control_views == 0 {
            return Err(PreprocessError::InvalidConfig(
                "treatment_views and control_views must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Provenance of one well and the views kept from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WellRecord {
    pub source: String,
    pub batch: String,
    pub plate: String,
    pub well: String,
    pub compound_id: String,
    pub is_control: bool,
    /// View indices found on disk, ascending.
    pub available_views: Vec<u32>,
    /// Sorted subset of `available_views`.
    pub selected_views: Vec<u32>,
    /// Output file names, one entry of five channels per selected view.
    pub file_paths: Vec<[String; CHANNELS]>,
    /// `(view, channel)` planes whose percentile range collapsed.
    pub degenerate: Vec<(u32, usize)>,
}

impl WellRecord {
    pub fn new(
        source: &str,
        batch: &str,
        plate: &str,
        well: &str,
        compound_id: &str,
        is_control: bool,
        available_views: Vec<u32>,
    ) -> Self {
        Self {
            source: source.into(),
            batch: batch.into(),
            plate: plate.into(),
            well: well.into(),
            compound_id: compound_id.into(),
            is_control,
            available_views,
            selected_views: Vec::new(),
            file_paths: Vec::new(),
            degenerate: Vec::new(),
        }
    }
}

/// An input the pipeline could not use; the run carries on without it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pipeline_version: String,
    pub seed: u64,
    pub config: PreprocessConfig,
    pub stats: CompressionStats,
    pub records: Vec<WellRecord>,
    pub skipped: Vec<SkippedEntry>,
}

impl Manifest {
    pub fn file_count(&self) -> usize {
        self.records.iter().map(|r| r.file_paths.len() * CHANNELS).sum()
    }
}
