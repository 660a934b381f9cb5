use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pitch_epv::epv::benchmark::{PairFile, REPORT_HEADER};
use pitch_epv::epv::surface::SurfaceReport;
use pitch_epv::model::{load_checkpoint, ModelKind};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pitch-epv"));
    c.env("RUST_LOG", "warn").env_remove("PITCH_EPV_CKPTS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "batch_size = 2\nmax_epochs = 1\nmin_epochs = 1\nbase_lr = 1e-4\nmax_lr = 1e-3\neval_batch_size = 4\n";

#[test]
fn synth_ingest_train_calibrate_report_benchmark_surfaces() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    run(d, &["synth", "--seed", "3", "--matches", "4", "--out", "raw", "--period-seconds", "60"]);
    let ingest = [
        "ingest", "--tracking", "raw", "--events", "raw/passes.csv", "--out", "data", "--seed", "1", "--ratios",
        "0.5,0.25,0.25",
    ];
    let o = run(d, &ingest);
    assert!(stdout(&o).contains("samples"));
    assert!(d.join("data/manifest.json").is_file());
    fs::write(d.join("tiny.cfg"), TINY).unwrap();

    for model in ["likelihood", "success", "value-s", "value-u"] {
        let args = [
            "train", "--model", model, "--data", "data", "--config", "tiny.cfg", "--out", "ckpts", "--max-train", "4",
            "--max-val", "3",
        ];
        run(d, &args);
        assert!(d.join(format!("ckpts/{model}.json")).is_file());
    }
    let ckpt = d.join("ckpts/success.ckpt");
    let tagged = load_checkpoint(&ckpt).unwrap();
    assert_eq!(tagged.meta.get("model").map(String::as_str), Some("success"));
    assert!(tagged.meta.contains_key("data_sha256"));

    run(d, &["calibrate", "--ckpt", "ckpts/value-s.ckpt", "--data", "data", "--out", "calibrated.ckpt"]);
    let calibrated = load_checkpoint(&d.join("calibrated.ckpt")).unwrap();
    assert_eq!(calibrated.meta.get("model").map(String::as_str), Some(ModelKind::ValueSuccess.name()));

    let csv = stdout(&run(d, &["report", "--ckpt", "ckpts/value-u.ckpt", "--data", "data", "--format", "csv"]));
    assert_eq!(csv.lines().count(), 4, "{csv}");
    assert!(csv.lines().skip(1).all(|l| l.starts_with("unsuccessful,")));
    let md = stdout(&run(d, &["report", "--ckpt", "ckpts/success.ckpt", "--data", "data", "--format", "md"]));
    assert!(md.starts_with("| model |") && md.contains("| success |"), "{md}");

    run(d, &["pairs", "--seed", "2", "--count", "4", "--out", "pairs.json"]);
    let o = run(d, &["benchmark", "--pairs", "pairs.json", "--ckpts", "ckpts", "--out", "report.csv"]);
    assert!(stdout(&o).contains("scored pairs"));
    let report = fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), REPORT_HEADER.join(","));
    assert_eq!(report.lines().count(), 5);
    run(d, &["benchmark", "--pairs", "pairs.json", "--heuristic", "--out", "heuristic.csv"]);
    assert!(fs::read_to_string(d.join("heuristic.csv")).unwrap().lines().skip(1).all(|l| l.contains(",1,1,")));

    let pairs = PairFile::load(&d.join("pairs.json")).unwrap();
    fs::write(d.join("state.json"), serde_json::to_string(&pairs.pairs[0].a).unwrap()).unwrap();
    run(d, &["surfaces", "--state", "state.json", "--ckpts", "ckpts", "--out", "surfaces.json"]);
    let r: SurfaceReport = serde_json::from_slice(&fs::read(d.join("surfaces.json")).unwrap()).unwrap();
    assert_eq!(r.surfaces.dims, (104, 68));
    let first = fs::read(d.join("surfaces.json")).unwrap();
    run(d, &["surfaces", "--state", "state.json", "--ckpts", "ckpts", "--out", "surfaces.json"]);
    assert_eq!(first, fs::read(d.join("surfaces.json")).unwrap(), "surfaces are deterministic");
}

#[test]
fn bad_inputs_fail_with_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let err = fails(d, &["train", "--model", "value", "--data", "x", "--out", "y"]);
    assert!(err.contains("value-s"), "{err}");
    let err = fails(d, &["ingest", "--tracking", "t", "--events", "e.csv", "--out", "o", "--ratios", "0.5,0.5"]);
    assert!(err.contains("three values"), "{err}");
    let err = fails(d, &["benchmark", "--pairs", "p.json", "--out", "r.csv"]);
    assert!(err.contains("--ckpts"), "{err}");

    fs::write(d.join("state.json"), r#"{"players":[{"x":200,"y":3,"vx":0,"vy":0,"team":"att"}],"ball":[1,1,0],"carrier":0}"#)
        .unwrap();
    let err = fails(d, &["surfaces", "--state", "state.json", "--heuristic", "--out", "s.json"]);
    assert!(err.contains("players[0].x"), "{err}");
    let err = fails(d, &["surfaces", "--state", "state.json", "--ckpts", "missing", "--out", "s.json"]);
    assert!(err.contains("players[0].x"), "state is checked before models load: {err}");
}

#[test]
fn serve_refuses_to_start_without_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("service.toml"), "bind = \"127.0.0.1:0\"\ncheckpoints = \"ckpts\"\npair_store = \"pairs.json\"\n").unwrap();
    let err = fails(d, &["serve", "--config", "service.toml"]);
    assert!(err.contains("does not exist") && err.contains("ckpts"), "{err}");

    // the environment variable wins over the file
    fs::create_dir(d.join("ckpts")).unwrap();
    let out = bin()
        .current_dir(d)
        .args(["serve", "--config", "service.toml"])
        .env("PITCH_EPV_CKPTS", d.join("elsewhere"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("elsewhere"), "{err}");
    assert!(!d.join("pairs.json").exists());
}
