//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pitch_epv::data::sample_file::read_dataset;
use pitch_epv::data::samples::PassSample;
use pitch_epv::epv::adapter::import_published;
use pitch_epv::epv::benchmark::{evaluate_benchmark, PairFile};
use pitch_epv::epv::pairs::separable_pairs;
use pitch_epv::epv::models::{checkpoint_file, HeuristicModel, ModelBundle, SurfaceModel};
use pitch_epv::epv::surface::report as surface_report;
use pitch_epv::model::{load_checkpoint, save_checkpoint, HeadKind, ModelKind, PassNet};
use pitch_epv::pipeline::{fit_model, ingest_inputs_to_dir, model_sets, run, IngestInputs, RunConfig};
use pitch_epv::state::GameState;
use pitch_epv::synth::{write_fixture, SynthConfig, GOALS_FILE};
use pitch_epv::train::eval::dest_outputs;
use pitch_epv::train::report::{calibrate, rows_to_csv, rows_to_markdown, value_model_rows, Subset};
use pitch_epv::train::TrainConfig;
use pitch_epv_service::ServiceConfig;

use super::{Command, ModelArg, ReportFormat, SplitArg};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            seed,
            matches,
            out,
            period_seconds,
        } => synth(seed, matches, period_seconds, &out),
        Command::Ingest {
            tracking,
            events,
            goals,
            out,
            seed,
            ratios,
        } => ingest(tracking, events, goals, &out, seed, &ratios),
        Command::Train {
            model,
            data,
            config,
            out,
            init,
            max_train,
            max_val,
        } => train(model.into(), &data, config.as_deref(), &out, init.as_deref(), max_train, max_val),
        Command::Calibrate { ckpt, data, out, batch } => calibrate_cmd(&ckpt, &data, out.as_deref(), batch),
        Command::Report {
            ckpt,
            data,
            format,
            split,
            batch,
        } => report(&ckpt, &data, format, split, batch),
        Command::Benchmark {
            pairs,
            ckpts,
            heuristic,
            out,
        } => benchmark(&pairs, ckpts.as_deref(), heuristic, &out),
        Command::Pairs { seed, count, out } => pairs(seed, count, &out),
        Command::Surfaces {
            state,
            ckpts,
            heuristic,
            out,
        } => surfaces(&state, ckpts.as_deref(), heuristic, &out),
        Command::Serve { config } => serve(&config),
        Command::Run { out, seed } => run_smoke(&out, seed),
    }
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Likelihood => ModelKind::Likelihood,
            ModelArg::Success => ModelKind::Success,
            ModelArg::ValueS => ModelKind::ValueSuccess,
            ModelArg::ValueU => ModelKind::ValueFailure,
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(seed: u64, matches: usize, period_seconds: f64, out: &Path) -> Result<()> {
    ensure!(matches >= 1, "--matches must be at least 1");
    ensure!(period_seconds > 0.0, "--period-seconds must be positive");
    let cfg = SynthConfig {
        seed,
        matches,
        period_seconds,
        ..SynthConfig::default()
    };
    let written = write_fixture(out, &cfg)?;
    let passes: usize = written.iter().map(|m| m.passes.len()).sum();
    println!("wrote {matches} matches ({passes} passes) to {}", out.display());
    Ok(())
}

fn ingest(tracking: PathBuf, events: PathBuf, goals: Option<PathBuf>, out: &Path, seed: u64, ratios: &[f64]) -> Result<()> {
    let ratios: [f64; 3] = ratios.try_into().context("--ratios takes exactly three values")?;
    let goals = goals.unwrap_or_else(|| events.with_file_name(GOALS_FILE));
    let inputs = IngestInputs {
        tracking,
        passes: events,
        goals,
    };
    let m = ingest_inputs_to_dir(&inputs, out, ratios, seed)?;
    println!(
        "{} samples ({:.1}% successful, {} unaligned passes) -> {} [sha256 {}]",
        m.count,
        m.success_pct,
        m.build.unaligned,
        out.display(),
        m.sha256
    );
    Ok(())
}

/// The model a checkpoint was trained as: its `model` tag, or the head when
/// that is unambiguous.
fn kind_of(net: &PassNet<f32>, path: &Path) -> Result<ModelKind> {
    if let Some(tag) = net.meta.get("model") {
        let kind = ModelKind::parse(tag).with_context(|| format!("{}: unknown model tag `{tag}`", path.display()))?;
        ensure!(kind.head() == net.spec().head, "{}: model tag `{tag}` does not match its head", path.display());
        return Ok(kind);
    }
    match net.spec().head {
        HeadKind::Likelihood => Ok(ModelKind::Likelihood),
        HeadKind::Success => Ok(ModelKind::Success),
        HeadKind::Value => bail!("{}: value checkpoint without a model tag", path.display()),
    }
}

fn train(
    kind: ModelKind,
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    init: Option<&Path>,
    max_train: Option<usize>,
    max_val: Option<usize>,
) -> Result<()> {
    let cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::parse(&text).with_context(|| format!("{}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    let (manifest, samples) = read_dataset(data)?;
    let (tr, va) = model_sets(kind, &samples, &manifest.split, max_train, max_val);
    ensure!(tr.len() >= 2, "{}: only {} training samples", kind.name(), tr.len());
    ensure!(!va.is_empty(), "{}: no validation samples", kind.name());
    let init = match init {
        Some(p) => {
            let net = load_checkpoint(p)?;
            ensure!(net.spec().head == kind.head(), "{}: not a {} checkpoint", p.display(), kind.head().name());
            Some(net)
        }
        None => None,
    };
    log::info!("training {} on {} samples, validating on {}", kind.name(), tr.len(), va.len());
    let (mut net, _, summary) = fit_model(kind, &tr, &va, &cfg, init)?;
    net.meta.insert("data_sha256".into(), manifest.sha256.clone());
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = checkpoint_file(out, kind);
    save_checkpoint(&net, &path)?;
    write_json(&out.join(format!("{}.json", kind.name())), &summary)?;
    let last = summary.history.last().expect("at least one epoch");
    println!(
        "{}: {} epochs, kept epoch {}, val loss {:.6}, temperature {} -> {}",
        kind.name(),
        summary.history.len(),
        summary.selected_epoch,
        last.val_loss,
        net.temperature,
        path.display()
    );
    Ok(())
}

/// Samples of `part` that `kind` models.
fn split_samples<'a>(
    kind: ModelKind,
    samples: &'a [PassSample],
    split: &pitch_epv::data::split::DatasetSplit,
    part: SplitArg,
) -> Vec<&'a PassSample> {
    let part = match part {
        SplitArg::Train => &split.train,
        SplitArg::Validation => &split.validation,
        SplitArg::Test => &split.test,
    };
    split.select(part, samples).into_iter().filter(|s| kind.accepts(s)).collect()
}

fn calibrate_cmd(ckpt: &Path, data: &Path, out: Option<&Path>, batch: usize) -> Result<()> {
    let mut net = load_checkpoint(ckpt)?;
    let kind = kind_of(&net, ckpt)?;
    let (manifest, samples) = read_dataset(data)?;
    let val = split_samples(kind, &samples, &manifest.split, SplitArg::Validation);
    ensure!(!val.is_empty(), "no validation samples for {}", kind.name());
    match calibrate(&mut net, &val, batch)? {
        Some(r) => println!("{}: temperature {} (ECE {:.6})", kind.name(), r.temperature, r.ece),
        None => println!("{}: not temperature-searched, stats refreshed", kind.name()),
    }
    let dest = out.unwrap_or(ckpt);
    save_checkpoint(&net, dest)?;
    println!("wrote {}", dest.display());
    Ok(())
}

fn report(ckpt: &Path, data: &Path, format: ReportFormat, split: SplitArg, batch: usize) -> Result<()> {
    let net = load_checkpoint(ckpt)?;
    let kind = kind_of(&net, ckpt)?;
    let (manifest, samples) = read_dataset(data)?;
    let set = split_samples(kind, &samples, &manifest.split, split);
    ensure!(!set.is_empty(), "no samples for {} in that split", kind.name());
    let text = match kind {
        ModelKind::ValueSuccess | ModelKind::ValueFailure => {
            let subset = if kind == ModelKind::ValueSuccess {
                Subset::Successful
            } else {
                Subset::Unsuccessful
            };
            let rows = value_model_rows(&net, subset, &set, batch)?;
            match format {
                ReportFormat::Csv => rows_to_csv(&rows),
                ReportFormat::Md => rows_to_markdown(&rows),
            }
        }
        ModelKind::Likelihood | ModelKind::Success => {
            let m = dest_outputs(&net, &set, batch)?.metrics_at(&set, net.temperature);
            let ece = m.ece.map(|e| format!("{e:.6}")).unwrap_or_default();
            let cells = [kind.name().to_string(), set.len().to_string(), format!("{:.6}", m.loss), ece];
            let header = ["model", "samples", "loss", "ece"];
            match format {
                ReportFormat::Csv => format!("{}\n{}\n", header.join(","), cells.join(",")),
                ReportFormat::Md => format!(
                    "| {} |\n|{}\n| {} |\n",
                    header.join(" | "),
                    "---|".repeat(header.len()),
                    cells.join(" | ")
                ),
            }
        }
    };
    print!("{text}");
    Ok(())
}

fn surface_model(ckpts: Option<&Path>, heuristic: bool) -> Result<Box<dyn SurfaceModel>> {
    if heuristic {
        return Ok(Box::new(HeuristicModel::default()));
    }
    let dir = ckpts.context("either --ckpts or --heuristic is required")?;
    Ok(Box::new(ModelBundle::load(dir)?))
}

fn load_pairs(path: &Path) -> Result<PairFile> {
    if path.extension().is_some_and(|e| e == "csv") {
        let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let file = import_published(f)?;
        for p in &file.pairs {
            p.validate(true)?;
        }
        Ok(file)
    } else {
        Ok(PairFile::load(path)?)
    }
}

fn benchmark(pairs: &Path, ckpts: Option<&Path>, heuristic: bool, out: &Path) -> Result<()> {
    let file = load_pairs(pairs)?;
    let model = surface_model(ckpts, heuristic)?;
    let r = evaluate_benchmark(&file.pairs, model.as_ref())?;
    fs::write(out, r.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} of {} scored pairs correct (accuracy {:.4}, by max {:.4}); {} abstained -> {}",
        r.correct,
        r.total,
        r.accuracy,
        r.accuracy_by_max,
        r.abstained,
        out.display()
    );
    Ok(())
}

fn pairs(seed: u64, count: usize, out: &Path) -> Result<()> {
    ensure!(count >= 1, "--count must be at least 1");
    let file = separable_pairs(seed, count);
    fs::write(out, file.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {count} pairs to {}", out.display());
    Ok(())
}

fn surfaces(state: &Path, ckpts: Option<&Path>, heuristic: bool, out: &Path) -> Result<()> {
    let text = fs::read_to_string(state).with_context(|| format!("reading {}", state.display()))?;
    let st: GameState = serde_json::from_str(&text).with_context(|| format!("parsing {}", state.display()))?;
    st.validate().with_context(|| format!("invalid state in {}", state.display()))?;
    let model = surface_model(ckpts, heuristic)?;
    let sets = model.surfaces(&[&st])?;
    let r = surface_report(sets.into_iter().next().context("model returned no surfaces")?)?;
    write_json(out, &r)?;
    match (&r.state_epv, &r.best_pass, &r.abstained) {
        (Some(e), Some(b), _) => println!(
            "state EPV {:.6} (max {:.6}); best pass at {:?} -> {}",
            e.mean,
            e.max_output,
            b.cell,
            out.display()
        ),
        (_, _, reason) => println!("abstained: {} -> {}", reason.as_deref().unwrap_or("unknown"), out.display()),
    }
    Ok(())
}

fn serve(config: &Path) -> Result<()> {
    let cfg = ServiceConfig::load(config)?.with_env();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(pitch_epv_service::serve(
        cfg,
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
        |addr| println!("listening on http://{addr}"),
    ))?;
    Ok(())
}

fn run_smoke(out: &Path, seed: u64) -> Result<()> {
    let s = run(out, &RunConfig::smoke(seed))?;
    println!(
        "{} samples; benchmark accuracy {:.4} over {} scored pairs, {} abstained; artifacts under {}",
        s.samples,
        s.benchmark_accuracy,
        s.benchmark_scored,
        s.benchmark_abstained,
        out.display()
    );
    Ok(())
}
