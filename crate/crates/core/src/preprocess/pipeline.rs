use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::write_atomic;
use super::{
    center_crop_resize, encode_png, nearest_rank_percentile, read_png, read_tiff_u16, rescale_16_to_8, sample_views,
    tiff_dimensions, CompressionStats, Manifest, PreprocessConfig, PreprocessError, RawPlane, SkippedEntry, WellRecord,
    CHANNELS, PIPELINE_VERSION,
};

pub const MANIFEST_CSV: &str = "manifest.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
const PLATEMAP: &str = "platemap.csv";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    /// Views converted in this run.
    pub converted: usize,
    /// Views whose outputs were already valid and left untouched.
    pub reused: usize,
}

impl RunSummary {
    pub fn is_partial(&self) -> bool {
        !self.manifest.skipped.is_empty()
    }
}

/// `{source}_{batch}_{plate}_{well}_v{view}_ch{channel}.png`
pub fn output_file_name(source: &str, batch: &str, plate: &str, well: &str, view: u32, channel: usize) -> String {
    format!("{source}_{batch}_{plate}_{well}_v{view}_ch{channel}.png")
}

/// JSON half of the manifest; the CSV holds one row per output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub pipeline_version: String,
    pub seed: u64,
    pub config: PreprocessConfig,
    pub stats: CompressionStats,
    pub wells: usize,
    pub files: usize,
    pub skipped: Vec<SkippedEntry>,
}

impl ManifestHeader {
    pub fn read(path: &Path) -> Result<Self, PreprocessError> {
        let text = fs::read_to_string(path).map_err(|e| PreprocessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PreprocessError::codec(path, e))
    }
}

#[derive(Debug, Clone)]
struct ViewInput {
    view: u32,
    channels: [PathBuf; CHANNELS],
    pixels: u64,
}

#[derive(Debug, Clone)]
struct WellInput {
    record: WellRecord,
    views: Vec<ViewInput>,
}

struct Task<'a> {
    well: usize,
    input: &'a ViewInput,
    names: [String; CHANNELS],
}

struct ViewOutput {
    sizes: [u64; CHANNELS],
    degenerate: [bool; CHANNELS],
    reused: bool,
}

pub fn run_pipeline(
    input_root: &Path,
    output_root: &Path,
    cfg: &PreprocessConfig,
    workers: usize,
) -> Result<RunSummary, PreprocessError> {
    cfg.validate()?;
    if !input_root.is_dir() {
        return Err(PreprocessError::MissingInput(input_root.to_path_buf()));
    }
    fs::create_dir_all(output_root).map_err(|e| PreprocessError::io(output_root, e))?;

    let mut skipped = Vec::new();
    let mut wells = discover(input_root, cfg, &mut skipped)?;
    for well in &mut wells {
        let record = std::mem::replace(&mut well.record, WellRecord::new("", "", "", "", "", false, vec![]));
        well.record = sample_views(record, cfg.seed, cfg.treatment_views, cfg.control_views);
    }

    let tasks: Vec<Task<'_>> = wells
        .iter()
        .enumerate()
        .flat_map(|(w, well)| {
            let r = &well.record;
            well.views
                .iter()
                .filter(|v| r.selected_views.contains(&v.view))
                .map(move |input| Task {
                    well: w,
                    input,
                    names: std::array::from_fn(|c| {
                        output_file_name(&r.source, &r.batch, &r.plate, &r.well, input.view, c)
                    }),
                })
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PreprocessError::InvalidConfig(format!("worker pool: {e}")))?;
    // Indexed collect keeps task order, so the manifest does not depend on scheduling.
    let outcomes: Vec<Result<ViewOutput, SkippedEntry>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| convert_view(task, output_root, cfg))
            .collect()
    });

    let mut records: Vec<WellRecord> = wells.iter().map(|w| w.record.clone()).collect();
    for r in &mut records {
        r.selected_views.clear();
    }
    let (mut bytes_in, mut bytes_8bit, mut bytes_sampled, mut bytes_resized, mut bytes_out) =
        (0u64, 0u64, 0u64, 0u64, 0u64);
    for well in &wells {
        for v in &well.views {
            bytes_in += 2 * v.pixels;
            bytes_8bit += v.pixels;
        }
    }
    let target_pixels = (cfg.target_size * cfg.target_size * CHANNELS) as u64;
    let (mut converted, mut reused) = (0, 0);
    for (task, outcome) in tasks.iter().zip(outcomes) {
        match outcome {
            Ok(out) => {
                if out.reused {
                    reused += 1;
                } else {
                    converted += 1;
                }
                bytes_sampled += task.input.pixels;
                bytes_resized += target_pixels;
                bytes_out += out.sizes.iter().sum::<u64>();
                let record = &mut records[task.well];
                record.selected_views.push(task.input.view);
                record.file_paths.push(task.names.clone());
                for (c, &flag) in out.degenerate.iter().enumerate() {
                    if flag {
                        record.degenerate.push((task.input.view, c));
                    }
                }
            }
            Err(entry) => skipped.push(entry),
        }
    }

    let manifest = Manifest {
        pipeline_version: PIPELINE_VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        stats: CompressionStats::from_stage_bytes(bytes_in, bytes_8bit, bytes_sampled, bytes_resized, bytes_out),
        records,
        skipped,
    };
    write_manifest(output_root, &manifest)?;
    log::info!(
        "{converted} converted, {reused} reused, {} skipped",
        manifest.skipped.len()
    );
    Ok(RunSummary {
        manifest,
        converted,
        reused,
    })
}

fn convert_view(task: &Task<'_>, output_root: &Path, cfg: &PreprocessConfig) -> Result<ViewOutput, SkippedEntry> {
    let skip = |path: &Path, err: PreprocessError| SkippedEntry {
        path: path.display().to_string(),
        reason: err.to_string(),
    };
    let outputs: Vec<PathBuf> = task.names.iter().map(|n| output_root.join(n)).collect();

    if let Some(sizes) = existing_outputs(&outputs, cfg.target_size) {
        let mut degenerate = [false; CHANNELS];
        for (c, path) in task.input.channels.iter().enumerate() {
            let raw = read_tiff_u16(path).map_err(|e| skip(path, e))?;
            degenerate[c] = percentiles_collapse(&raw, cfg);
        }
        return Ok(ViewOutput {
            sizes,
            degenerate,
            reused: true,
        });
    }

    let mut sizes = [0; CHANNELS];
    let mut degenerate = [false; CHANNELS];
    for (c, path) in task.input.channels.iter().enumerate() {
        let raw = read_tiff_u16(path).map_err(|e| skip(path, e))?;
        let rescaled = rescale_16_to_8(&raw, cfg.p_low, cfg.p_high).map_err(|e| skip(path, e))?;
        let resized = center_crop_resize(&rescaled.plane, cfg.target_size).map_err(|e| skip(path, e))?;
        if resized.upscaled {
            log::debug!("{}: upscaled to {}", path.display(), cfg.target_size);
        }
        let bytes = encode_png(&resized.plane).map_err(|e| skip(path, e))?;
        write_atomic(&outputs[c], &bytes).map_err(|e| skip(&outputs[c], e))?;
        sizes[c] = bytes.len() as u64;
        degenerate[c] = rescaled.degenerate;
    }
    Ok(ViewOutput {
        sizes,
        degenerate,
        reused: false,
    })
}

fn percentiles_collapse(raw: &RawPlane, cfg: &PreprocessConfig) -> bool {
    let mut histogram = Box::new([0u64; 65536]);
    for &v in raw.pixels() {
        histogram[v as usize] += 1;
    }
    let n = raw.pixels().len() as u64;
    nearest_rank_percentile(&histogram, n, cfg.p_high) <= nearest_rank_percentile(&histogram, n, cfg.p_low)
}

/// Sizes of the five outputs when all decode as `target × target` 8-bit PNGs.
fn existing_outputs(paths: &[PathBuf], target: usize) -> Option<[u64; CHANNELS]> {
    let mut sizes = [0; CHANNELS];
    for (c, path) in paths.iter().enumerate() {
        let plane = read_png(path).ok()?;
        if plane.width() != target || plane.height() != target {
            return None;
        }
        sizes[c] = fs::metadata(path).ok()?.len();
    }
    Some(sizes)
}

fn sorted_subdirs(path: &Path) -> Result<Vec<(String, PathBuf)>, PreprocessError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| PreprocessError::io(path, e))? {
        let entry = entry.map_err(|e| PreprocessError::io(path, e))?;
        if entry.path().is_dir() {
            dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn channel_file(view_dir: &Path, channel: usize) -> Option<PathBuf> {
    ["tif", "tiff"]
        .iter()
        .map(|ext| view_dir.join(format!("ch{channel}.{ext}")))
        .find(|p| p.is_file())
}

fn view_index(name: &str) -> Option<u32> {
    name.strip_prefix('v')?.parse().ok()
}

/// `well → (compound_id, is_control)` from a plate's `platemap.csv`.
fn read_platemap(plate_dir: &Path, skipped: &mut Vec<SkippedEntry>) -> BTreeMap<String, (String, bool)> {
    let path = plate_dir.join(PLATEMAP);
    let mut map = BTreeMap::new();
    if !path.is_file() {
        return map;
    }
    let parsed: Result<Vec<(String, String, String)>, csv::Error> =
        csv::Reader::from_path(&path).and_then(|mut r| r.deserialize().collect());
    match parsed {
        Ok(rows) => {
            for (well, compound, control) in rows {
                let is_control = matches!(control.trim(), "1" | "true" | "True" | "yes");
                map.insert(well, (compound, is_control));
            }
        }
        Err(e) => skipped.push(SkippedEntry {
            path: path.display().to_string(),
            reason: format!("unreadable plate map: {e}"),
        }),
    }
    map
}

fn discover(
    root: &Path,
    cfg: &PreprocessConfig,
    skipped: &mut Vec<SkippedEntry>,
) -> Result<Vec<WellInput>, PreprocessError> {
    let mut wells = Vec::new();
    for (source, source_dir) in sorted_subdirs(root)? {
        if cfg.excluded_sources.contains(&source) {
            log::info!("excluding source {source}");
            continue;
        }
        for (batch, batch_dir) in sorted_subdirs(&source_dir)? {
            for (plate, plate_dir) in sorted_subdirs(&batch_dir)? {
                let platemap = read_platemap(&plate_dir, skipped);
                for (well, well_dir) in sorted_subdirs(&plate_dir)? {
                    let views = discover_views(&well_dir, skipped)?;
                    if views.is_empty() {
                        skipped.push(SkippedEntry {
                            path: well_dir.display().to_string(),
                            reason: "no readable views".into(),
                        });
                        continue;
                    }
                    let (compound, is_control) = platemap.get(&well).cloned().unwrap_or_else(|| (well.clone(), false));
                    let record = WellRecord::new(
                        &source,
                        &batch,
                        &plate,
                        &well,
                        &compound,
                        is_control,
                        views.iter().map(|v| v.view).collect(),
                    );
                    wells.push(WellInput { record, views });
                }
            }
        }
    }
    Ok(wells)
}

fn discover_views(well_dir: &Path, skipped: &mut Vec<SkippedEntry>) -> Result<Vec<ViewInput>, PreprocessError> {
    let mut views = Vec::new();
    for (name, dir) in sorted_subdirs(well_dir)? {
        let Some(view) = view_index(&name) else {
            continue;
        };
        let found: Vec<Option<PathBuf>> = (0..CHANNELS).map(|c| channel_file(&dir, c)).collect();
        if let Some(missing) = found.iter().position(Option::is_none) {
            skipped.push(SkippedEntry {
                path: dir.display().to_string(),
                reason: format!("missing channel file ch{missing}"),
            });
            continue;
        }
        let channels: [PathBuf; CHANNELS] = std::array::from_fn(|c| found[c].clone().expect("checked above"));
        match tiff_dimensions(&channels[0]) {
            Ok((w, h)) => views.push(ViewInput {
                view,
                channels,
                pixels: (w * h * CHANNELS) as u64,
            }),
            Err(e) => skipped.push(SkippedEntry {
                path: channels[0].display().to_string(),
                reason: e.to_string(),
            }),
        }
    }
    views.sort_by_key(|v| v.view);
    Ok(views)
}

fn write_manifest(output_root: &Path, manifest: &Manifest) -> Result<(), PreprocessError> {
    let csv_path = output_root.join(MANIFEST_CSV);
    let mut writer = csv::Writer::from_writer(Vec::new());
    let header = [
        "source",
        "batch",
        "plate",
        "well",
        "compound_id",
        "is_control",
        "view",
        "channel",
        "file",
        "degenerate",
    ];
    let csv_err = |e: csv::Error| PreprocessError::codec(&csv_path, e);
    writer.write_record(header).map_err(csv_err)?;
    for r in &manifest.records {
        for (view, names) in r.selected_views.iter().zip(&r.file_paths) {
            for (c, name) in names.iter().enumerate() {
                let degenerate = r.degenerate.contains(&(*view, c));
                writer
                    .write_record([
                        r.source.as_str(),
                        &r.batch,
                        &r.plate,
                        &r.well,
                        &r.compound_id,
                        if r.is_control { "true" } else { "false" },
                        &view.to_string(),
                        &c.to_string(),
                        name,
                        if degenerate { "true" } else { "false" },
                    ])
                    .map_err(csv_err)?;
            }
        }
    }
    let bytes = writer.into_inner().map_err(|e| PreprocessError::codec(&csv_path, e))?;
    fs::write(&csv_path, bytes).map_err(|e| PreprocessError::io(&csv_path, e))?;

    let header = ManifestHeader {
        pipeline_version: manifest.pipeline_version.clone(),
        seed: manifest.seed,
        config: manifest.config.clone(),
        stats: manifest.stats.clone(),
        wells: manifest.records.len(),
        files: manifest.file_count(),
        skipped: manifest.skipped.clone(),
    };
    let json_path = output_root.join(MANIFEST_JSON);
    let mut text = serde_json::to_string_pretty(&header).map_err(|e| PreprocessError::codec(&json_path, e))?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| PreprocessError::io(&json_path, e))
}
