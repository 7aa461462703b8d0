//! Synthetic 16-bit TIFF trees in the layout the pipeline reads.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{well_rng, write_tiff_u16, PreprocessError, RawPlane, CHANNELS};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureWell {
    pub source: String,
    pub batch: String,
    pub plate: String,
    pub well: String,
    pub compound_id: String,
    pub is_control: bool,
    pub views: u32,
    pub width: usize,
    pub height: usize,
}

impl FixtureWell {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source: &str,
        batch: &str,
        plate: &str,
        well: &str,
        compound_id: &str,
        is_control: bool,
        views: u32,
        size: (usize, usize),
    ) -> Self {
        Self {
            source: source.into(),
            batch: batch.into(),
            plate: plate.into(),
            well: well.into(),
            compound_id: compound_id.into(),
            is_control,
            views,
            width: size.0,
            height: size.1,
        }
    }
}

/// Two sources with two wells each: a 9-view treatment, 9-view controls and a
/// 6-view treatment. With 6 treatment / 3 control views kept, 33 of 18 views
/// survive sampling.
pub fn mixed_views_fixture(width: usize, height: usize) -> Vec<FixtureWell> {
    let size = (width, height);
    vec![
        FixtureWell::new("source_1", "batch_1", "plate_1", "A01", "cpd_1", false, 9, size),
        FixtureWell::new("source_1", "batch_1", "plate_1", "A02", "dmso", true, 9, size),
        FixtureWell::new("source_2", "batch_1", "plate_1", "A01", "dmso", true, 9, size),
        FixtureWell::new("source_2", "batch_1", "plate_1", "A02", "cpd_2", false, 6, size),
    ]
}

/// One treatment well with six 1000×1000 views.
pub fn full_size_fixture() -> Vec<FixtureWell> {
    vec![FixtureWell::new(
        "source_1",
        "batch_1",
        "plate_1",
        "B02",
        "cpd_1",
        false,
        6,
        (1000, 1000),
    )]
}

/// Write `wells` under `root` and a `platemap.csv` per plate; returns the
/// number of TIFF files written.
pub fn write_fixture(root: &Path, wells: &[FixtureWell], seed: u64) -> Result<usize, PreprocessError> {
    let mut plates: BTreeMap<(String, String, String), Vec<&FixtureWell>> = BTreeMap::new();
    for w in wells {
        plates
            .entry((w.source.clone(), w.batch.clone(), w.plate.clone()))
            .or_default()
            .push(w);
    }
    let mut written = 0;
    for ((source, batch, plate), members) in plates {
        let plate_dir = root.join(&source).join(&batch).join(&plate);
        fs::create_dir_all(&plate_dir).map_err(|e| PreprocessError::io(&plate_dir, e))?;
        let mut map = String::from("well,compound_id,is_control\n");
        for w in &members {
            map.push_str(&format!("{},{},{}\n", w.well, w.compound_id, w.is_control));
            let mut rng = well_rng(seed, &w.source, &w.batch, &w.plate, &w.well);
            for view in 1..=w.views {
                let dir = plate_dir.join(&w.well).join(format!("v{view}"));
                fs::create_dir_all(&dir).map_err(|e| PreprocessError::io(&dir, e))?;
                for c in 0..CHANNELS {
                    let plane = synthetic_plane(w.width, w.height, c, &mut rng)?;
                    write_tiff_u16(&dir.join(format!("ch{c}.tif")), &plane)?;
                    written += 1;
                }
            }
        }
        let path = plate_dir.join("platemap.csv");
        fs::write(&path, map).map_err(|e| PreprocessError::io(&path, e))?;
    }
    Ok(written)
}

/// Smooth background, shot noise and a few bright cells.
pub fn synthetic_plane(
    width: usize,
    height: usize,
    channel: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RawPlane, PreprocessError> {
    let mut local = ChaCha8Rng::seed_from_u64(rng.random());
    let noise = Normal::new(0.0, 40.0).expect("positive sigma");
    let base = 400.0 + 150.0 * channel as f64;
    let cells: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                local.random_range(0.0..width as f64),
                local.random_range(0.0..height as f64),
                local.random_range(2.0..(width.min(height) as f64 / 12.0).max(3.0)),
            )
        })
        .collect();
    let (fw, fh) = (width as f64, height as f64);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = base + 200.0 * ((xf / fw) * 3.1).sin() * ((yf / fh) * 2.3).cos();
            for &(cx, cy, r) in &cells {
                let d2 = ((xf - cx).powi(2) + (yf - cy).powi(2)) / (r * r);
                if d2 < 9.0 {
                    v += 6000.0 * (-d2).exp();
                }
            }
            v += noise.sample(&mut local);
            pixels.push(v.round().clamp(0.0, 65535.0) as u16);
        }
    }
    RawPlane::new(width, height, pixels)
}
