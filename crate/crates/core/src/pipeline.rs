//! Directory-level workflows: ingesting raw fixtures into a sample set and
//! the end-to-end synth, train, calibrate, benchmark run.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::events::{parse_goals, parse_passes};
use crate::data::normalize::normalize_and_clean;
use crate::data::sample_file::{write_dataset, Manifest};
use crate::data::samples::{build_samples, BuildStats, PassSample};
use crate::data::smooth::smooth_velocities;
use crate::data::split::{split_by_match, DatasetSplit};
use crate::data::tracking::parse_tracking;
use crate::data::DataError;
use crate::epv::benchmark::{evaluate_benchmark, BenchmarkError};
use crate::epv::models::{checkpoint_file, BundleError, ModelBundle};
use crate::epv::pairs::separable_pairs;
use crate::model::{save_checkpoint, read_checkpoint, CheckpointError, ModelError, ModelKind, ModelSpec, PassNet};
use crate::synth::{write_fixture, SynthConfig, GOALS_FILE, PASSES_FILE, TRACKING_SUFFIX};
use crate::train::report::{calibrate, ReportError};
use crate::train::{select_epoch, CalibrationReport, EpochRecord, TrainConfig, TrainError, TrainOutcome};

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Empty(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub samples: Vec<PassSample>,
    pub split: DatasetSplit,
    pub build: BuildStats,
    /// Skipped tracking lines across all matches.
    pub skipped_lines: usize,
    pub removed_players: usize,
}

/// Where the raw inputs of one ingest live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestInputs {
    /// Directory holding the `*.tracking.jsonl` files.
    pub tracking: PathBuf,
    pub passes: PathBuf,
    pub goals: PathBuf,
}

impl IngestInputs {
    /// The fixture layout: everything side by side in one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            tracking: dir.to_path_buf(),
            passes: dir.join(PASSES_FILE),
            goals: dir.join(GOALS_FILE),
        }
    }
}

/// Ingests a fixture directory laid out as [`IngestInputs::in_dir`].
pub fn ingest(dir: &Path, ratios: [f64; 3], seed: u64) -> Result<IngestOutput, PipelineError> {
    ingest_inputs(&IngestInputs::in_dir(dir), ratios, seed)
}

/// Reads every `*.tracking.jsonl` (sorted by name) with the shared pass and
/// goal CSVs and turns them into split pass samples.
pub fn ingest_inputs(inputs: &IngestInputs, ratios: [f64; 3], seed: u64) -> Result<IngestOutput, PipelineError> {
    let passes_path = &inputs.passes;
    let passes = parse_passes(fs::File::open(passes_path).map_err(io_err(passes_path))?)?;
    let goals_path = &inputs.goals;
    let goals = parse_goals(fs::File::open(goals_path).map_err(io_err(goals_path))?)?;
    let dir = inputs.tracking.as_path();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(TRACKING_SUFFIX))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Empty(format!("no *{TRACKING_SUFFIX} files in {}", dir.display())));
    }
    let mut samples = Vec::new();
    let mut build = BuildStats::default();
    let mut skipped_lines = 0;
    let mut removed_players = 0;
    let mut ids = Vec::new();
    for f in &files {
        let parsed = parse_tracking(BufReader::new(fs::File::open(f).map_err(io_err(f))?))?;
        skipped_lines += parsed.issues.len();
        let header = parsed.require_header()?.clone();
        let mut frames = parsed.frames;
        smooth_velocities(&mut frames);
        let own: Vec<_> = passes.iter().filter(|p| p.match_id == header.match_id).cloned().collect();
        let norm = normalize_and_clean(&header, &frames, &own)?;
        removed_players += norm.removed_players;
        let (s, stats) = build_samples(&norm, &goals);
        build.passes += stats.passes;
        build.samples += stats.samples;
        build.unaligned += stats.unaligned;
        build.no_attackers += stats.no_attackers;
        samples.extend(s);
        ids.push(header.match_id);
    }
    let mut split = split_by_match(&ids, ratios, seed)?;
    split.annotate(&samples);
    Ok(IngestOutput {
        samples,
        split,
        build,
        skipped_lines,
        removed_players,
    })
}

pub fn ingest_to_dir(input: &Path, out: &Path, ratios: [f64; 3], seed: u64) -> Result<Manifest, PipelineError> {
    ingest_inputs_to_dir(&IngestInputs::in_dir(input), out, ratios, seed)
}

pub fn ingest_inputs_to_dir(
    inputs: &IngestInputs,
    out: &Path,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Manifest, PipelineError> {
    let r = ingest_inputs(inputs, ratios, seed)?;
    Ok(write_dataset(out, &r.samples, r.split, r.build, seed)?)
}

/// The training and validation populations of one model, capped in size.
pub fn model_sets<'a>(
    kind: ModelKind,
    samples: &'a [PassSample],
    split: &DatasetSplit,
    max_train: Option<usize>,
    max_val: Option<usize>,
) -> (Vec<&'a PassSample>, Vec<&'a PassSample>) {
    let pick = |part, cap: Option<usize>| -> Vec<&'a PassSample> {
        split
            .select(part, samples)
            .into_iter()
            .filter(|s| kind.accepts(s))
            .take(cap.unwrap_or(usize::MAX))
            .collect()
    };
    (pick(&split.train, max_train), pick(&split.validation, max_val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kind: ModelKind,
    pub train_samples: usize,
    pub val_samples: usize,
    pub initial_loss: f64,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch kept.
    pub selected_epoch: usize,
    pub calibration: Option<CalibrationReport>,
}

/// Trains one model, keeps the selected epoch and calibrates it.
pub fn fit_model(
    kind: ModelKind,
    train_set: &[&PassSample],
    val_set: &[&PassSample],
    cfg: &TrainConfig,
    init: Option<PassNet<f32>>,
) -> Result<(PassNet<f32>, TrainOutcome, ModelSummary), PipelineError> {
    let mut net = match init {
        Some(n) => n,
        None => PassNet::new(ModelSpec::new(kind.head()), cfg.seed.wrapping_add(kind as u64))?,
    };
    net.meta.insert("model".into(), kind.name().into());
    net.meta.insert("seed".into(), cfg.seed.to_string());
    let outcome = crate::train::train(kind, &mut net, train_set, val_set, cfg)?;
    let idx = select_epoch(&outcome.history, cfg.selection).expect("train ran at least one epoch");
    let mut best = read_checkpoint(&outcome.checkpoints[idx][..])?;
    let calibration = calibrate(&mut best, val_set, cfg.eval_batch_size)?;
    let summary = ModelSummary {
        kind,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        initial_loss: outcome.initial_loss,
        history: outcome.history.clone(),
        selected_epoch: idx + 1,
        calibration,
    };
    Ok((best, outcome, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub ratios: [f64; 3],
    pub train: TrainConfig,
    pub max_train: Option<usize>,
    pub max_val: Option<usize>,
    pub pairs: usize,
}

impl RunConfig {
    /// A run small enough to finish in about a minute on one core.
    pub fn smoke(seed: u64) -> Self {
        Self {
            seed,
            synth: SynthConfig {
                seed,
                matches: 4,
                period_seconds: 60.0,
                ..SynthConfig::default()
            },
            ratios: [0.5, 0.25, 0.25],
            train: TrainConfig {
                batch_size: 8,
                base_lr: 1e-4,
                max_lr: 1e-3,
                max_epochs: 3,
                min_epochs: 3,
                seed,
                eval_batch_size: 8,
                ..TrainConfig::default()
            },
            max_train: Some(16),
            max_val: Some(8),
            pairs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset_sha256: String,
    pub samples: usize,
    pub models: Vec<ModelSummary>,
    pub benchmark_accuracy: f64,
    pub benchmark_accuracy_by_max: f64,
    pub benchmark_scored: usize,
    pub benchmark_abstained: usize,
}

pub const RUN_LAYOUT: [&str; 4] = ["raw", "data", "ckpts", "reports"];

/// Runs synth, ingest, training of all four models, calibration and the
/// benchmark under `out`, writing every artifact to disk.
pub fn run(out: &Path, cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    let [raw, data, ckpts, reports] = RUN_LAYOUT.map(|d| out.join(d));
    for d in [&raw, &data, &ckpts, &reports] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    write_fixture(&raw, &cfg.synth)?;
    let ingested = ingest(&raw, cfg.ratios, cfg.seed)?;
    let manifest = write_dataset(&data, &ingested.samples, ingested.split.clone(), ingested.build, cfg.seed)?;
    let mut models = Vec::new();
    for kind in ModelKind::ALL {
        let (tr, va) = model_sets(kind, &ingested.samples, &ingested.split, cfg.max_train, cfg.max_val);
        if tr.len() < 2 || va.is_empty() {
            return Err(PipelineError::Empty(format!(
                "{}: {} training and {} validation samples",
                kind.name(),
                tr.len(),
                va.len()
            )));
        }
        let (mut net, _, summary) = fit_model(kind, &tr, &va, &cfg.train, None)?;
        net.meta.insert("data_sha256".into(), manifest.sha256.clone());
        let path = checkpoint_file(&ckpts, kind);
        save_checkpoint(&net, &path)?;
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        let rp = reports.join(format!("{}.json", kind.name()));
        fs::write(&rp, json).map_err(io_err(&rp))?;
        models.push(summary);
    }
    let bundle = ModelBundle::load(&ckpts)?;
    let pairs = separable_pairs(cfg.seed, cfg.pairs);
    let report = evaluate_benchmark(&pairs.pairs, &bundle)?;
    let bp = reports.join("benchmark.csv");
    fs::write(&bp, report.to_csv()).map_err(io_err(&bp))?;
    let summary = RunSummary {
        dataset_sha256: manifest.sha256,
        samples: manifest.count,
        models,
        benchmark_accuracy: report.accuracy,
        benchmark_accuracy_by_max: report.accuracy_by_max,
        benchmark_scored: report.total,
        benchmark_abstained: report.abstained,
    };
    let sp = reports.join("summary.json");
    fs::write(&sp, serde_json::to_string_pretty(&summary).expect("summary serializes")).map_err(io_err(&sp))?;
    Ok(summary)
}
