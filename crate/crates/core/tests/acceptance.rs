//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run alone with `cargo test -p pitch-epv --test acceptance`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use pitch_autograd::nn::Mode;
use pitch_autograd::suite::run_op_suite;
use pitch_autograd::Tensor;
use pitch_epv::data::active::{ActiveTime, VALUE_WINDOW_S};
use pitch_epv::data::events::{GoalEvent, PassEvent};
use pitch_epv::data::normalize::{mirror_frame, mirror_pass};
use pitch_epv::data::samples::value_label;
use pitch_epv::data::smooth::{sg_derivative, smooth_velocities, ORDER, WINDOW};
use pitch_epv::data::tracking::{TrackedPlayer, TrackingFrame};
use pitch_epv::data::Team;
use pitch_epv::epv::adapter::{export_published, import_published};
use pitch_epv::epv::benchmark::{evaluate_benchmark, PairFile};
use pitch_epv::epv::models::HeuristicModel;
use pitch_epv::epv::pairs::separable_pairs;
use pitch_epv::epv::surface::{compose, SurfaceSet, LIKELIHOOD_THRESHOLD};
use pitch_epv::model::gradcheck::{check_full_model, FullCheckConfig};
use pitch_epv::model::{count_params, HeadKind, ModelKind, ModelSpec, PassNet};
use pitch_epv::pipeline::{ingest, run, RunConfig};
use pitch_epv::synth::{write_fixture, SynthConfig};
use pitch_epv::train::calibrate::{
    ece, search_temperature, success_confidences, temperature_grid, value_confidences, CalibrationMode, DEFAULT_BINS,
};
use pitch_epv::train::{cyclic_lr, train, TrainConfig};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let entries = run_op_suite().map_err(|e| e.to_string())?;
    let mut worst = (0.0f64, 0.0f64);
    for e in &entries {
        ensure(e.passed(), format!("{} ({}): {:?}", e.name, e.precision, e.report))?;
        let slot = if e.precision == "f32" { &mut worst.0 } else { &mut worst.1 };
        *slot = slot.max(e.report.max_rel_error);
    }
    for head in [HeadKind::Likelihood, HeadKind::Success, HeadKind::Value] {
        let r = check_full_model(head, FullCheckConfig::default()).map_err(|e| e.to_string())?;
        for (p, rep, tol) in [("f64", &r.double, 1e-5), ("f32", &r.single, 1e-2)] {
            ensure(
                rep.checked > 0 && rep.max_rel_error < tol && rep.skipped_fraction() < 0.05,
                format!("10x12x12 {} net ({p}): {rep:?}", head.name()),
            )?;
            let slot = if p == "f32" { &mut worst.0 } else { &mut worst.1 };
            *slot = slot.max(rep.max_rel_error);
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "{} op checks + 3 reduced U-Nets; max rel err f32 {:.1e}, f64 {:.1e}; {elapsed:.1?}",
        entries.len(),
        worst.0,
        worst.1
    ))
}

fn architecture() -> Check {
    let mut parts = Vec::new();
    for (head, reference) in [(HeadKind::Likelihood, 372_359usize), (HeadKind::Success, 372_355), (HeadKind::Value, 373_201)] {
        let spec = ModelSpec::new(head);
        let net = PassNet::<f32>::new(spec.clone(), 1).map_err(|e| e.to_string())?;
        let counts = net.counts();
        ensure(counts == count_params(&spec), "analytic count disagrees with the parameter store")?;
        let dev = (counts.trainable as f64 - reference as f64) / reference as f64;
        ensure(dev.abs() <= 0.05, format!("{}: {} vs {reference} ({:+.2}%)", head.name(), counts.trainable, 100.0 * dev))?;
        // train-mode batch norm needs a batch of two
        let x = Tensor::from_fn(vec![2, 10, 104, 68], |i| ((i % 37) as f32) / 37.0);
        let t = net.trace(x, Mode::Train).map_err(|e| e.to_string())?;
        ensure(t.input == [2, 10, 104, 68], format!("input {:?}", t.input))?;
        ensure(t.bottleneck[2..] == [26, 17], format!("bottleneck {:?}", t.bottleneck))?;
        ensure(t.output == [2, head.out_channels(), 104, 68], format!("output {:?}", t.output))?;
        parts.push(format!("{} {} ({:+.2}%)", head.name(), counts.trainable, 100.0 * dev));
    }
    Ok(format!("104x68 in/out, 26x17 bottleneck; {}", parts.join(", ")))
}

fn definition_arithmetic() -> Check {
    let n = 6;
    let mut s = SurfaceSet {
        dims: (2, 3),
        likelihood: vec![0.2; n],
        success: vec![1.0; n],
        value_success: vec![[0.0199, 0.9649, 0.0152]; n],
        value_failure: vec![[0.3, 0.6, 0.1]; n],
    };
    s.likelihood[1] = LIKELIHOOD_THRESHOLD;
    s.likelihood[2] = 0.0;
    s.likelihood[3] = 0.000_999_9;
    let e = compose(&s).map_err(|e| e.to_string())?;
    let want = 0.0152f64 - 0.0199f64;
    ensure(e.v_s[0].to_bits() == want.to_bits(), format!("V_s = {}", e.v_s[0]))?;
    ensure((e.v_s[0] + 0.0047).abs() < 1e-15, format!("V_s = {}", e.v_s[0]))?;
    ensure(e.v[0].to_bits() == want.to_bits(), "S = 1 must give V = V_s")?;
    for i in 1..4 {
        ensure(e.output[i].to_bits() == 0, format!("cell {i} with L = {} gives {}", s.likelihood[i], e.output[i]))?;
    }
    ensure(e.output[0] == e.v[0], "retained cell must carry V")?;
    Ok(format!("V_s = {want} (0.0152 - 0.0199); L <= 0.001 gives +0.0 bits"))
}

/// Twenty predictions per bin at the bin centre `(2k + 1) / 20`, with exactly
/// that share of positive outcomes.
fn calibrated_success() -> (Vec<f64>, Vec<f64>) {
    let (mut logits, mut outcomes) = (Vec::new(), Vec::new());
    for k in 0..10 {
        let c = (2 * k + 1) as f64 / 20.0;
        for i in 0..20 {
            logits.push((c / (1.0 - c)).ln());
            outcomes.push(if i < (2 * k + 1) { 1.0 } else { 0.0 });
        }
    }
    (logits, outcomes)
}

fn calibrated_value() -> (Vec<[f64; 3]>, Vec<f64>) {
    // P_score - P_concede = 0.625 - 0.125; outcomes score 5 in 8 and concede 1 in 8
    let (mut logits, mut outcomes) = (Vec::new(), Vec::new());
    for i in 0..40 {
        logits.push([0.125f64.ln(), 0.25f64.ln(), 0.625f64.ln()]);
        outcomes.push(match i % 8 {
            0..=4 => 1.0,
            5 => 0.0,
            _ => [-1.0, 0.0][i % 2],
        });
    }
    (logits, outcomes)
}

fn calibration() -> Check {
    let grid = temperature_grid();
    let want: Vec<f64> = (1..=20).map(|k| k as f64 / 10.0).collect();
    ensure(grid == want, format!("grid {grid:?}"))?;

    let (logits, outcomes) = calibrated_success();
    let conf = success_confidences(&logits, 1.0);
    let e0 = ece(&conf, &outcomes, CalibrationMode::Success, DEFAULT_BINS).map_err(|e| e.to_string())?;
    ensure(e0.abs() <= 1e-12, format!("calibrated success ECE {e0:e}"))?;
    let ece_s = |z: &[f64], t: f64| ece(&success_confidences(z, t), &outcomes, CalibrationMode::Success, DEFAULT_BINS).unwrap();
    let (t, _) = search_temperature(&grid, |t| ece_s(&logits, t));
    ensure(t == 1.0, format!("calibrated success inputs picked T = {t}"))?;

    let (vlogits, voutcomes) = calibrated_value();
    let vconf = value_confidences(&vlogits, 1.0);
    let ev = ece(&vconf, &voutcomes, CalibrationMode::Value, DEFAULT_BINS).map_err(|e| e.to_string())?;
    ensure(ev.abs() <= 1e-12, format!("calibrated value ECE {ev:e}"))?;
    let ece_v = |z: &[[f64; 3]], t: f64| ece(&value_confidences(z, t), &voutcomes, CalibrationMode::Value, DEFAULT_BINS).unwrap();
    let (tv, _) = search_temperature(&grid, |t| ece_v(&vlogits, t));
    ensure(tv == 1.0, format!("calibrated value inputs picked T = {tv}"))?;

    let hot: Vec<f64> = logits.iter().map(|z| 1.1 * z).collect();
    let before = ece_s(&hot, 1.0);
    let (th, after) = search_temperature(&grid, |t| ece_s(&hot, t));
    ensure(after < before, format!("x1.1 success: ECE {before:e} -> {after:e} at T = {th}"))?;
    let vhot: Vec<[f64; 3]> = vlogits.iter().map(|z| z.map(|v| 1.1 * v)).collect();
    let vbefore = ece_v(&vhot, 1.0);
    let (tvh, vafter) = search_temperature(&grid, |t| ece_v(&vhot, t));
    ensure(vafter < vbefore, format!("x1.1 value: ECE {vbefore:e} -> {vafter:e} at T = {tvh}"))?;
    Ok(format!(
        "calibrated ECE {e0:.1e}/{ev:.1e}, T = 1.0; x1.1 logits: {before:.4} -> {after:.1e} (T = {th}), {vbefore:.4} -> {vafter:.1e} (T = {tvh})"
    ))
}

fn scheduler() -> Check {
    let cfg = TrainConfig::default();
    let l0 = cyclic_lr(0.0, &cfg);
    let l4 = cyclic_lr(4.0, &cfg);
    ensure((l0 - 1e-6).abs() < 1e-12 && (l4 - 1e-4).abs() < 1e-12, format!("lr(0) = {l0:e}, lr(4) = {l4:e}"))?;
    ensure(cyclic_lr(8.0, &cfg) == l0 && cyclic_lr(12.0, &cfg) == l4, "period is not 8 epochs")?;
    let mut worst = 0.0f64;
    for i in 0..=4000 {
        let e = i as f64 * 0.01;
        let phase = e % 8.0;
        let tri = if phase <= 4.0 { phase / 4.0 } else { (8.0 - phase) / 4.0 };
        let analytic = 1e-6 + (1e-4 - 1e-6) * tri;
        worst = worst.max((cyclic_lr(e, &cfg) - analytic).abs());
    }
    ensure(worst < 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("lr(0) = {l0:e}, lr(4) = {l4:e}, period 8; max deviation {worst:.1e} over 0..40 epochs"))
}

fn overfit() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig { seed: 11, matches: 4, period_seconds: 120.0, ..SynthConfig::default() };
    write_fixture(dir.path(), &synth).map_err(|e| e.to_string())?;
    let data = ingest(dir.path(), [1.0 / 3.0; 3], 0).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut parts = Vec::new();
    for kind in ModelKind::ALL {
        let set: Vec<_> = data.samples.iter().filter(|s| kind.accepts(s)).take(32).collect();
        ensure(set.len() == 32, format!("{}: only {} synthetic samples", kind.name(), set.len()))?;
        let cfg = TrainConfig {
            batch_size: 8,
            base_lr: 1e-4,
            max_lr: 1e-3,
            max_epochs: 200,
            min_epochs: 5,
            patience: 200,
            target_loss_fraction: Some(0.5),
            eval_batch_size: 16,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut net = PassNet::<f32>::new(ModelSpec::new(kind.head()), 7).map_err(|e| e.to_string())?;
        let out = train(kind, &mut net, &set, &set[..8], &cfg).map_err(|e| e.to_string())?;
        let losses: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        ensure(
            best <= 0.5 * out.initial_loss,
            format!("{}: initial {:.4}, best {best:.4} after {} epochs", kind.name(), out.initial_loss, losses.len()),
        )?;
        let head = &losses[..losses.len().min(5)];
        ensure(head.windows(2).all(|w| w[1] < w[0]), format!("{}: not strictly decreasing {head:?}", kind.name()))?;
        let halved_at = losses.iter().position(|&l| l <= 0.5 * out.initial_loss).map_or(0, |i| i + 1);
        parts.push(format!("{} {:.3}->{best:.3} @{halved_at}", kind.name(), out.initial_loss));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(600), format!("took {elapsed:.1?}"))?;
    Ok(format!("{}; {elapsed:.1?}", parts.join(", ")))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Check {
    let cfg = RunConfig::smoke(21);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run(a.path(), &cfg).map_err(|e| e.to_string())?;
    let rb = run(b.path(), &cfg).map_err(|e| e.to_string())?;
    ensure(ra == rb, "run summaries differ")?;
    let mut n = 0;
    for sub in ["data", "ckpts", "reports"] {
        let (fa, fb) = (dir_bytes(&a.path().join(sub)), dir_bytes(&b.path().join(sub)));
        ensure(!fa.is_empty(), format!("{sub}/ is empty"))?;
        for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
            ensure(na == nb && ba == bb, format!("{sub}/{na} differs"))?;
        }
        ensure(fa.len() == fb.len(), format!("{sub}/ file sets differ"))?;
        n += fa.len();
    }
    ensure(ra.models.iter().all(|m| m.history.len() == 3), "each model trains 3 epochs")?;
    Ok(format!(
        "{n} artifacts byte-identical across two seeded runs ({} samples, {} pairs scored, {} abstained)",
        ra.samples, ra.benchmark_scored, ra.benchmark_abstained
    ))
}

fn benchmark() -> Check {
    let oracle = HeuristicModel::default();
    let pairs = separable_pairs(5, 50);
    let report = evaluate_benchmark(&pairs.pairs, &oracle).map_err(|e| e.to_string())?;
    ensure(report.abstained == 0 && report.total == 50, format!("{} abstained", report.abstained))?;
    ensure(report.accuracy == 1.0, format!("oracle accuracy {}", report.accuracy))?;
    let inv = evaluate_benchmark(&pairs.inverted().pairs, &oracle).map_err(|e| e.to_string())?;
    ensure(inv.accuracy == 1.0 - report.accuracy, format!("inverted accuracy {}", inv.accuracy))?;

    // a set the oracle gets partly wrong: half the labels point at the weaker state
    let mut mixed = separable_pairs(6, 40);
    for p in mixed.pairs.iter_mut().step_by(2) {
        p.label = p.label.map(|l| l.flipped());
    }
    let m = evaluate_benchmark(&mixed.pairs, &oracle).map_err(|e| e.to_string())?;
    let mi = evaluate_benchmark(&mixed.inverted().pairs, &oracle).map_err(|e| e.to_string())?;
    ensure(m.correct + mi.correct == m.total, format!("{} + {} != {}", m.correct, mi.correct, m.total))?;
    ensure(mi.accuracy == 1.0 - m.accuracy, format!("{} vs 1 - {}", mi.accuracy, m.accuracy))?;

    let mut csv = Vec::new();
    export_published(&pairs, &mut csv).map_err(|e| e.to_string())?;
    let back: PairFile = import_published(&csv[..]).map_err(|e| e.to_string())?;
    ensure(back == pairs, "adapter round trip changed the pair file")?;
    let mut again = Vec::new();
    export_published(&back, &mut again).map_err(|e| e.to_string())?;
    ensure(again == csv, "re-export is not byte-identical")?;
    Ok(format!(
        "oracle 50/50, inverted {}/50; mixed {:.3} vs inverted {:.3}; adapter round trip exact ({} bytes)",
        inv.correct,
        m.accuracy,
        mi.accuracy,
        csv.len()
    ))
}

fn frame(t: f64, period: u8, in_play: bool, players: Vec<TrackedPlayer>) -> TrackingFrame {
    TrackingFrame { t, period, players, ball: [30.0, 20.0, 0.4], ball_in_play: in_play }
}

fn player(id: &str, team: Team, x: f64, y: f64) -> TrackedPlayer {
    TrackedPlayer { id: id.into(), team, x, y, vx: 0.0, vy: 0.0 }
}

fn preprocessing() -> Check {
    // uniform motion, including both ends of the track
    let ts: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
    let xs: Vec<f64> = ts.iter().map(|t| 3.0 + 4.25 * t).collect();
    let v = sg_derivative(&ts, &xs, WINDOW, ORDER);
    let sg_err = v.iter().map(|v| (v - 4.25).abs()).fold(0.0, f64::max);
    ensure(sg_err < 1e-9, format!("SG error {sg_err:e}"))?;
    let mut frames: Vec<TrackingFrame> = ts
        .iter()
        .map(|&t| frame(t, 1, true, vec![player("H1", Team::Home, 10.0 + 2.0 * t, 50.0 - 1.5 * t)]))
        .collect();
    smooth_velocities(&mut frames);
    let fr_err = frames
        .iter()
        .map(|f| (f.players[0].vx - 2.0).abs().max((f.players[0].vy + 1.5).abs()))
        .fold(0.0, f64::max);
    ensure(fr_err < 1e-9, format!("frame velocity error {fr_err:e}"))?;

    // 10 s in play, 10 s dead ball, then in play again
    let active_frames: Vec<TrackingFrame> =
        (0..400).map(|i| frame(i as f64 * 0.1, 1, !(100..200).contains(&i), vec![])).collect();
    let active = ActiveTime::new(&active_frames);
    let elapsed = active.at(1, 22.0).unwrap() - active.at(1, 2.0).unwrap();
    ensure((elapsed - 10.0).abs() < 1e-9, format!("20 wall seconds gave {elapsed} active"))?;
    let goal = |t| GoalEvent { match_id: "m".into(), period: 1, t, team: Team::Away };
    ensure(value_label(&active, &[goal(26.5)], Team::Home, 1, 2.0) == -1, "goal 14.5 active s later not counted")?;
    ensure(value_label(&active, &[goal(27.5)], Team::Home, 1, 2.0) == 0, "goal 15.5 active s later counted")?;
    ensure(active.within(1, 2.0, 1, 2.0 + VALUE_WINDOW_S + 10.0, VALUE_WINDOW_S), "window edge is inclusive")?;

    let pitch = [105.0, 68.0];
    let mut f = frame(3.0, 2, true, vec![player("A4", Team::Away, 12.37, 60.01), player("H9", Team::Home, 99.99, 0.07)]);
    f.players[0].vx = -3.2;
    f.players[1].vy = 0.9;
    let back = mirror_frame(&mirror_frame(&f, pitch), pitch);
    let diff = f
        .players
        .iter()
        .zip(&back.players)
        .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()).max((a.vx - b.vx).abs()).max((a.vy - b.vy).abs()))
        .fold((f.ball[0] - back.ball[0]).abs().max((f.ball[1] - back.ball[1]).abs()), f64::max);
    ensure(diff < 1e-9 && back.ball[2] == f.ball[2], format!("frame mirror drift {diff:e}"))?;
    let pass = PassEvent {
        match_id: "m".into(),
        t: 3.0,
        passer_id: "A4".into(),
        team: Team::Away,
        end_x: 40.12,
        end_y: 7.5,
        success: true,
        end_t: 4.1,
        period: 2,
    };
    let pb = mirror_pass(&mirror_pass(&pass, pitch), pitch);
    ensure((pb.end_x - pass.end_x).abs() < 1e-9 && (pb.end_y - pass.end_y).abs() < 1e-9, "pass mirror drift")?;
    let state = separable_pairs(1, 1).pairs[0].a.clone();
    let twice = state.mirror_y().mirror_y();
    let sdiff = state
        .players
        .iter()
        .zip(&twice.players)
        .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()).max((a.vy - b.vy).abs()))
        .fold((state.ball[1] - twice.ball[1]).abs(), f64::max);
    ensure(sdiff < 1e-9 && twice.carrier == state.carrier, format!("state mirror drift {sdiff:e}"))?;
    Ok(format!("SG max err {:.1e}; 10 s dead ball skipped; mirror drift {diff:.1e} m", sg_err.max(fr_err)))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("architecture fidelity", architecture),
        ("per-cell value arithmetic", definition_arithmetic),
        ("calibration", calibration),
        ("scheduler", scheduler),
        ("end-to-end overfit", overfit),
        ("pipeline determinism", determinism),
        ("benchmark harness", benchmark),
        ("preprocessing", preprocessing),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail} ({:.1?})", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why} ({:.1?})", start.elapsed());
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
