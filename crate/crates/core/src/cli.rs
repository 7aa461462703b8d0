//! Command-line front end: one subcommand per stage.
//!
//! Each subcommand resolves its config as defaults, then the `--config` file
//! (JSON or TOML, unknown keys rejected), then flags; prints the hash of the
//! resolved config; and maps failures onto a fixed set of exit codes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::batch_effect::{
    self, evaluate_batch_effect, BatchEffectError, LabeledEmbeddings, Probe, ProbeConfig, SplitMode, SplitSpec,
};
use crate::config::{canonical_json, config_hash, load_or_default, ConfigError};
use crate::losses::{grad_check, GradCheckReport, LossConfig, LossError, LossKind, MultiviewBatch, PairSetVariant};
use crate::preprocess::{self, fixture, run_pipeline, PreprocessConfig, PreprocessError};
use crate::retrieval::{
    self, random_hit_rate, random_mrr, Direction, PairedEmbeddings, RetrievalConfig, RetrievalError, RetrievalReport,
};
use crate::toy_train::{run_toy, ToyError, ToyRunConfig};

/// Largest relative gradient error `loss-check` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// The run finished but some inputs were skipped.
    Partial,
    /// Bad config, flags or input files.
    InputError,
    /// Non-finite values or a failed numerical check.
    NumericFailure,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::Partial => 1,
            Status::InputError => 2,
            Status::NumericFailure => 3,
        }
    }
}

/// A failed run: the status to exit with and the message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    fn input(message: impl fmt::Display) -> Self {
        Self {
            status: Status::InputError,
            message: message.to_string(),
        }
    }

    fn numeric(message: impl fmt::Display) -> Self {
        Self {
            status: Status::NumericFailure,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::input(e)
    }
}

impl From<PreprocessError> for Failure {
    fn from(e: PreprocessError) -> Self {
        Failure::input(e)
    }
}

impl From<LossError> for Failure {
    fn from(e: LossError) -> Self {
        match e {
            LossError::NonFinite(_) | LossError::NonFiniteLoss => Failure::numeric(e),
            _ => Failure::input(e),
        }
    }
}

impl From<RetrievalError> for Failure {
    fn from(e: RetrievalError) -> Self {
        Failure::input(e)
    }
}

impl From<BatchEffectError> for Failure {
    fn from(e: BatchEffectError) -> Self {
        match e {
            BatchEffectError::RatioUndefined => Failure::numeric(e),
            _ => Failure::input(e),
        }
    }
}

impl From<ToyError> for Failure {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::NonFinite { .. } => Failure::numeric(e),
            ToyError::Loss(inner) => inner.into(),
            ToyError::Retrieval(inner) => inner.into(),
            ToyError::BatchEffect(inner) => inner.into(),
            _ => Failure::input(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hcs-contrast",
    version,
    about = "Multiview contrastive learning for high-content screens"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reduce a 16-bit TIFF tree to sampled 8-bit PNG planes with a manifest.
    Preprocess(PreprocessArgs),
    /// Compare analytic loss gradients against central finite differences.
    LossCheck(LossCheckArgs),
    /// Train two small encoders on synthetic data and evaluate them.
    TrainToy(TrainToyArgs),
    /// Cross-modal 1:N retrieval on an embedding table.
    EvalRetrieval(EvalRetrievalArgs),
    /// Batch-effect generalisation of a probe across held-out groups.
    EvalBatchEffect(EvalBatchEffectArgs),
    /// Write a small synthetic TIFF tree for `preprocess`.
    MakeFixture(MakeFixtureArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    pub input_root: PathBuf,
    pub output_root: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; the output does not depend on it.
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Source to drop; repeat for several.
    #[arg(long = "exclude-source")]
    pub exclude_source: Vec<String>,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Samples per batch.
    #[arg(long)]
    pub n: Option<usize>,
    /// Views per sample; defaults to 1 for clip and 3 otherwise.
    #[arg(long)]
    pub m: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Finite-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_pair_set)]
    pub pair_set: Option<PairSetVariant>,
    /// Keep the positive pairs in the EMM/IMM denominators.
    #[arg(long)]
    pub include_positives: bool,
    /// Check every loss variant over a grid of batch shapes and temperatures.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Seed for data, initialisation, sampling and evaluation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Directory for curves, embeddings and reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    /// `id,modality,e0,...` table.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// img2mol, mol2img or both.
    #[arg(long)]
    pub direction: Option<DirectionChoice>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail unless every metric is within three standard errors of chance.
    #[arg(long)]
    pub assert_random_baseline: bool,
}

#[derive(Debug, Args)]
pub struct EvalBatchEffectArgs {
    /// `id,label,source,batch,plate,e0,...` table.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub probe: Option<Probe>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grouped split modes to evaluate (random is always included).
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<SplitMode>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeFixtureArgs {
    pub output_root: PathBuf,
    /// Edge length of the square test images.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    /// One well of six 1000×1000 views instead of the mixed 6 to 9 view set.
    #[arg(long)]
    pub full_size: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_pair_set(s: &str) -> Result<PairSetVariant, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown pair set `{s}` (expected ordered_distinct, unordered_distinct or all_pairs)"))
}

/// Retrieval direction choice for the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionChoice {
    Img2Mol,
    Mol2Img,
    Both,
}

impl DirectionChoice {
    pub fn directions(self) -> Vec<Direction> {
        match self {
            DirectionChoice::Img2Mol => vec![Direction::Img2Mol],
            DirectionChoice::Mol2Img => vec![Direction::Mol2Img],
            DirectionChoice::Both => Direction::ALL.to_vec(),
        }
    }
}

impl std::str::FromStr for DirectionChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "img2mol" => Ok(DirectionChoice::Img2Mol),
            "mol2img" => Ok(DirectionChoice::Mol2Img),
            "both" => Ok(DirectionChoice::Both),
            other => Err(format!(
                "unknown direction `{other}` (expected img2mol, mol2img or both)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossCheckConfig {
    pub loss: LossKind,
    pub n: usize,
    /// `None` picks 1 view for clip and 3 otherwise.
    pub m: Option<usize>,
    pub d: usize,
    pub eps: f64,
    pub seed: u64,
    pub loss_config: LossConfig,
}

impl Default for LossCheckConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Imm,
            n: 4,
            m: None,
            d: 8,
            eps: 1e-6,
            seed: 0,
            loss_config: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRetrievalConfig {
    pub pool_size: usize,
    pub ks: Vec<usize>,
    pub direction: DirectionChoice,
    pub trials: usize,
    pub seed: u64,
}

impl Default for EvalRetrievalConfig {
    fn default() -> Self {
        let base = RetrievalConfig::default();
        Self {
            pool_size: base.pool_size,
            ks: base.ks,
            direction: DirectionChoice::Both,
            trials: base.trials,
            seed: base.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBatchEffectConfig {
    pub probe: Probe,
    pub split: SplitSpec,
    pub probe_config: ProbeConfig,
    pub modes: Vec<SplitMode>,
}

impl Default for EvalBatchEffectConfig {
    fn default() -> Self {
        Self {
            probe: Probe::Logreg,
            split: SplitSpec::default(),
            probe_config: ProbeConfig::default(),
            modes: SplitMode::ALL.to_vec(),
        }
    }
}

/// Run one parsed command line.
pub fn run(cli: Cli) -> Result<Status, Failure> {
    match cli.command {
        Command::Preprocess(args) => preprocess_cmd(args),
        Command::LossCheck(args) => loss_check_cmd(args),
        Command::TrainToy(args) => train_toy_cmd(args),
        Command::EvalRetrieval(args) => eval_retrieval_cmd(args),
        Command::EvalBatchEffect(args) => eval_batch_effect_cmd(args),
        Command::MakeFixture(args) => make_fixture_cmd(args),
    }
}

fn announce<T: Serialize>(cfg: &T) {
    log::info!("resolved config: {}", canonical_json(cfg));
    println!("config hash: {}", config_hash(cfg));
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn preprocess_cmd(args: PreprocessArgs) -> Result<Status, Failure> {
    let mut cfg: PreprocessConfig = load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.excluded_sources.extend(args.exclude_source);
    if args.workers == 0 {
        return Err(Failure::input("--workers must be >= 1"));
    }
    announce(&cfg);
    let summary = run_pipeline(&args.input_root, &args.output_root, &cfg, args.workers)?;
    log::info!("{} converted, {} reused", summary.converted, summary.reused);
    for skip in &summary.manifest.skipped {
        log::warn!("skipped {}: {}", skip.path, skip.reason);
    }
    print!("{}", preprocess::report_text(&summary.manifest.stats));
    write_file(
        &args.output_root.join("compression_report.csv"),
        &preprocess::report_csv(&summary.manifest.stats),
    )?;
    println!(
        "{} wells, {} files, {} converted, {} reused, {} skipped",
        summary.manifest.records.len(),
        summary.manifest.file_count(),
        summary.converted,
        summary.reused,
        summary.manifest.skipped.len()
    );
    Ok(if summary.is_partial() {
        Status::Partial
    } else {
        Status::Success
    })
}

/// One row of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCheckRow {
    pub kind: LossKind,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub cfg: LossConfig,
    pub report: GradCheckReport,
}

impl fmt::Display for LossCheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.cfg;
        write!(
            f,
            "{} n={} m={} d={} tau={} gamma={} pairs={} positives={}: max rel error {:.3e} at {}[{}] ({:.6e} vs {:.6e})",
            self.kind,
            self.n,
            self.m,
            self.d,
            c.tau,
            c.gamma,
            serde_json::to_value(c.pair_set_variant).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            c.denominator_includes_positives,
            self.report.max_rel_error,
            self.report.worst_slot,
            self.report.worst_coord,
            self.report.analytic,
            self.report.numeric,
        )
    }
}

/// Gradient check of one configuration on a seeded random unit batch.
pub fn check_one(
    kind: LossKind,
    n: usize,
    m: usize,
    d: usize,
    cfg: &LossConfig,
    eps: f64,
    seed: u64,
) -> Result<LossCheckRow, LossError> {
    let batch = MultiviewBatch::random_unit(n, m, d, seed)?;
    let report = grad_check(kind, &batch, cfg, eps)?;
    Ok(LossCheckRow {
        kind,
        n,
        m,
        d,
        cfg: *cfg,
        report,
    })
}

/// Every clip, emm and imm variant over `n ∈ {2,4,8}`, `m ∈ {1,2,3}` and
/// `τ ∈ {0.07, 0.01}` at `d = 8`. Configurations without an intra term
/// (imm with `γ > 0` and one view) and clip with several views are left out.
pub fn loss_check_grid(eps: f64, seed: u64) -> Result<Vec<LossCheckRow>, LossError> {
    let mut configs = Vec::new();
    for tau in [0.07, 0.01] {
        let base = LossConfig {
            tau,
            ..LossConfig::default()
        };
        configs.push((LossKind::Clip, base));
        for positives in [false, true] {
            configs.push((
                LossKind::Emm,
                LossConfig {
                    denominator_includes_positives: positives,
                    ..base
                },
            ));
        }
        for gamma in [0.0, 0.5] {
            for variant in [
                PairSetVariant::OrderedDistinct,
                PairSetVariant::UnorderedDistinct,
                PairSetVariant::AllPairs,
            ] {
                configs.push((
                    LossKind::Imm,
                    LossConfig {
                        gamma,
                        pair_set_variant: variant,
                        ..base
                    },
                ));
            }
        }
    }
    let mut rows = Vec::new();
    for (kind, cfg) in configs {
        for n in [2, 4, 8] {
            for m in 1..=3 {
                if (kind == LossKind::Clip && m != 1) || (kind == LossKind::Imm && cfg.gamma > 0.0 && m < 2) {
                    continue;
                }
                rows.push(check_one(kind, n, m, 8, &cfg, eps, seed)?);
            }
        }
    }
    Ok(rows)
}

fn loss_check_cmd(args: LossCheckArgs) -> Result<Status, Failure> {
    let mut cfg: LossCheckConfig = load_or_default(args.config.as_deref())?;
    if let Some(v) = args.loss {
        cfg.loss = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.m {
        cfg.m = Some(v);
    }
    if let Some(v) = args.d {
        cfg.d = v;
    }
    if let Some(v) = args.tau {
        cfg.loss_config.tau = v;
    }
    if let Some(v) = args.gamma {
        cfg.loss_config.gamma = v;
    }
    if let Some(v) = args.eps {
        cfg.eps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.pair_set {
        cfg.loss_config.pair_set_variant = v;
    }
    if args.include_positives {
        cfg.loss_config.denominator_includes_positives = true;
    }
    cfg.m = Some(cfg.m.unwrap_or(if cfg.loss == LossKind::Clip { 1 } else { 3 }));
    announce(&cfg);

    let rows = if args.sweep {
        loss_check_grid(cfg.eps, cfg.seed)?
    } else {
        vec![check_one(
            cfg.loss,
            cfg.n,
            cfg.m.unwrap_or(1),
            cfg.d,
            &cfg.loss_config,
            cfg.eps,
            cfg.seed,
        )?]
    };
    let mut worst: f64 = 0.0;
    for row in &rows {
        println!("{row}");
        worst = worst.max(row.report.max_rel_error);
    }
    let pass = worst < GRAD_TOLERANCE;
    println!(
        "{} configurations, max relative error {worst:.3e}: {}",
        rows.len(),
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(Status::Success)
    } else {
        Err(Failure::numeric(format!(
            "max relative gradient error {worst:.3e} exceeds {GRAD_TOLERANCE:e}"
        )))
    }
}

fn train_toy_cmd(args: TrainToyArgs) -> Result<Status, Failure> {
    let mut cfg: ToyRunConfig = load_or_default(args.config.as_deref())?;
    if let Some(kind) = args.loss {
        cfg.train.loss_kind = kind;
    }
    if let Some(seed) = args.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
        cfg.retrieval.seed = seed;
        cfg.split.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    announce(&cfg);
    let report = run_toy(&cfg, args.out.as_deref())?;
    if let (Some(first), Some(last)) = (report.curve.first(), report.curve.last()) {
        println!(
            "{} epochs, loss {:.4} -> {:.4} ({:.1} s)",
            report.curve.len(),
            first.mean_loss,
            last.mean_loss,
            report.wall_seconds
        );
    }
    print!("{}", retrieval::report_text(&report.retrieval));
    match &report.batch_effect {
        Some(be) => {
            print!("{}", batch_effect::report_text(std::slice::from_ref(be)));
            Ok(Status::Success)
        }
        None => Ok(Status::Partial),
    }
}

/// Whether every metric lies within three standard errors of its chance
/// value; returns the offending metrics otherwise.
pub fn check_random_baseline(report: &RetrievalReport) -> Result<(), Vec<String>> {
    let q = report.per_query_ranks.len().max(1) as f64;
    let pool = report.pool_size;
    let mut bad = Vec::new();
    for (&k, &hr) in &report.hit_rate {
        let p = random_hit_rate(k, pool);
        let se = (p * (1.0 - p) / q).sqrt();
        if (hr - p).abs() > 3.0 * se {
            bad.push(format!(
                "{} hr@{k} = {hr:.4}, chance {p:.4} ± {:.4}",
                report.direction,
                3.0 * se
            ));
        }
    }
    let mean = random_mrr(pool);
    let second = (1..=pool).map(|r| 1.0 / (r * r) as f64).sum::<f64>() / pool as f64;
    let se = ((second - mean * mean) / q).sqrt();
    if (report.mrr - mean).abs() > 3.0 * se {
        bad.push(format!(
            "{} mrr = {:.4}, chance {mean:.4} ± {:.4}",
            report.direction,
            report.mrr,
            3.0 * se
        ));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad)
    }
}

fn eval_retrieval_cmd(args: EvalRetrievalArgs) -> Result<Status, Failure> {
    let mut cfg: EvalRetrievalConfig = load_or_default(args.config.as_deref())?;
    if let Some(v) = args.pool_size {
        cfg.pool_size = v;
    }
    if let Some(v) = args.ks {
        cfg.ks = v;
    }
    if let Some(v) = args.direction {
        cfg.direction = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    announce(&cfg);
    let data = PairedEmbeddings::read_csv(&args.embeddings)?;
    let mut reports = Vec::new();
    for direction in cfg.direction.directions() {
        let rc = RetrievalConfig {
            pool_size: cfg.pool_size,
            ks: cfg.ks.clone(),
            direction,
            trials: cfg.trials,
            seed: cfg.seed,
        };
        reports.push(retrieval::evaluate(&data, &rc)?);
    }
    print!("{}", retrieval::report_text(&reports));
    if let Some(out) = &args.out {
        write_file(&out.join("retrieval_report.csv"), &retrieval::report_csv(&reports))?;
        write_file(&out.join("retrieval_report.txt"), &retrieval::report_text(&reports))?;
    }
    if args.assert_random_baseline {
        let bad: Vec<String> = reports
            .iter()
            .filter_map(|r| check_random_baseline(r).err())
            .flatten()
            .collect();
        if !bad.is_empty() {
            return Err(Failure::numeric(format!(
                "outside the random baseline: {}",
                bad.join("; ")
            )));
        }
        println!("random baseline: PASS");
    }
    Ok(Status::Success)
}

fn eval_batch_effect_cmd(args: EvalBatchEffectArgs) -> Result<Status, Failure> {
    let mut cfg: EvalBatchEffectConfig = load_or_default(args.config.as_deref())?;
    if let Some(v) = args.probe {
        cfg.probe = v;
    }
    if let Some(v) = args.repetitions {
        cfg.split.repetitions = v;
    }
    if let Some(v) = args.test_fraction {
        cfg.split.test_fraction = v;
    }
    if let Some(v) = args.seed {
        cfg.split.seed = v;
    }
    if let Some(v) = args.modes {
        cfg.modes = v;
    }
    announce(&cfg);
    let data = LabeledEmbeddings::read_csv(&args.embeddings)?;
    let report = evaluate_batch_effect(&data, &cfg.split, cfg.probe, &cfg.probe_config, &cfg.modes)?;
    let reports = std::slice::from_ref(&report);
    print!("{}", batch_effect::report_text(reports));
    if let Some(out) = &args.out {
        write_file(&out.join("batch_effect_report.csv"), &batch_effect::report_csv(reports))?;
        write_file(&out.join("batch_effect_detail.csv"), &batch_effect::detail_csv(reports))?;
        write_file(
            &out.join("batch_effect_report.txt"),
            &batch_effect::report_text(reports),
        )?;
    }
    Ok(Status::Success)
}

fn make_fixture_cmd(args: MakeFixtureArgs) -> Result<Status, Failure> {
    let wells = if args.full_size {
        fixture::full_size_fixture()
    } else {
        if args.size == 0 {
            return Err(Failure::input("--size must be >= 1"));
        }
        fixture::mixed_views_fixture(args.size, args.size)
    };
    let files = fixture::write_fixture(&args.output_root, &wells, args.seed)?;
    println!(
        "wrote {files} TIFF planes for {} wells to {}",
        wells.len(),
        args.output_root.display()
    );
    Ok(Status::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("hcs-contrast").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_parse() {
        match parse(&[
            "eval-retrieval",
            "--embeddings",
            "e.csv",
            "--ks",
            "1,5",
            "--direction",
            "both",
        ])
        .command
        {
            Command::EvalRetrieval(a) => {
                assert_eq!(a.ks, Some(vec![1, 5]));
                assert_eq!(a.direction, Some(DirectionChoice::Both));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse(&["loss-check", "--loss", "emm", "--pair-set", "all_pairs"]).command {
            Command::LossCheck(a) => {
                assert_eq!(a.loss, Some(LossKind::Emm));
                assert_eq!(a.pair_set, Some(PairSetVariant::AllPairs));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Cli::try_parse_from(["hcs-contrast", "loss-check", "--loss", "simclr"]).is_err());
    }

    #[test]
    fn imm_single_view_is_an_input_error() {
        let err = run(parse(&["loss-check", "--loss", "imm", "--m", "1"])).unwrap_err();
        assert_eq!(err.status, Status::InputError);
        assert!(err.message.contains("intra term undefined"), "{}", err.message);
    }

    #[test]
    fn grid_covers_every_variant() {
        let rows = loss_check_grid(1e-6, 0).unwrap();
        // Per τ: clip 3, emm 2×9, imm γ=0 3×9, imm γ=0.5 3×6.
        assert_eq!(rows.len(), 2 * (3 + 18 + 27 + 18));
        assert!(rows.iter().all(|r| r.report.max_rel_error < GRAD_TOLERANCE));
    }

    #[test]
    fn random_baseline_check_flags_oracle() {
        let mut data = retrieval::random_embeddings(300, 8, 0).unwrap();
        let cfg = RetrievalConfig::default();
        assert!(check_random_baseline(&retrieval::evaluate(&data, &cfg).unwrap()).is_ok());
        data = PairedEmbeddings::aligned(data.ids().to_vec(), data.mol().clone(), data.mol().clone()).unwrap();
        assert!(check_random_baseline(&retrieval::evaluate(&data, &cfg).unwrap()).is_err());
    }

    #[test]
    fn exit_codes_are_stable() {
        let codes: Vec<u8> = [
            Status::Success,
            Status::Partial,
            Status::InputError,
            Status::NumericFailure,
        ]
        .iter()
        .map(|s| s.code())
        .collect();
        assert_eq!(codes, [0, 1, 2, 3]);
    }
}
