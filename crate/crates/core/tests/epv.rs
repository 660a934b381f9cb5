use pitch_epv::epv::adapter::{export_published, import_published, AdapterError};
use pitch_epv::epv::benchmark::{evaluate_benchmark, BenchmarkError, PairFile, PairLabel, REPORT_HEADER};
use pitch_epv::epv::models::{checkpoint_file, BundleError, HeuristicModel, ModelBundle, SurfaceModel};
use pitch_epv::epv::pairs::{advance_attack, separable_pairs};
use pitch_epv::epv::surface::{best_pass, compose, evaluate, state_epv, SurfaceSet, FULL_DIMS};
use pitch_epv::model::{save_checkpoint, ModelKind, ModelSpec, PassNet};
use pitch_epv::state::GRID_Y;

fn flat(dims: (usize, usize), l: f64, vs: [f64; 3]) -> SurfaceSet {
    let n = dims.0 * dims.1;
    SurfaceSet {
        dims,
        likelihood: vec![l; n],
        success: vec![0.7; n],
        value_success: vec![vs; n],
        value_failure: vec![vs; n],
    }
}

#[test]
fn values_stay_in_unit_interval() {
    let mut s = flat((3, 3), 1.0 / 9.0, [0.0, 0.0, 1.0]);
    s.value_failure = vec![[1.0, 0.0, 0.0]; 9];
    s.success = (0..9).map(|i| i as f64 / 8.0).collect();
    let e = compose(&s).unwrap();
    assert!(e.v.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(e.v[0], -1.0);
    assert_eq!(e.v[8], 1.0);
}

#[test]
fn constant_value_aggregates_to_itself() {
    let mut s = flat((4, 4), 0.0, [0.1, 0.6, 0.3]);
    for (i, l) in s.likelihood.iter_mut().enumerate() {
        *l = if i % 3 == 0 { 0.15 } else { 0.0004 };
    }
    let e = compose(&s).unwrap();
    let r = state_epv(&s, &e).unwrap();
    assert!((r.mean - 0.2).abs() < 1e-15);
    assert_eq!(r.retained_cells, 6);
}

#[test]
fn unique_maximum_is_the_best_pass() {
    let mut s = flat(FULL_DIMS, 0.002, [0.0, 0.9, 0.1]);
    s.value_success[90 * GRID_Y + 34] = [0.0, 0.5, 0.5];
    s.value_failure[90 * GRID_Y + 34] = [0.0, 0.5, 0.5];
    let e = compose(&s).unwrap();
    assert_eq!(best_pass(&s, &e).unwrap().cell, (90, 34));
}

#[test]
fn heuristic_is_y_mirror_equivariant() {
    let model = HeuristicModel::default();
    let state = separable_pairs(3, 1).pairs.remove(0).a;
    let direct = model.surface(&state.mirror_y());
    let mirrored = model.surface(&state).mirror_y();
    for (a, b) in direct.likelihood.iter().zip(&mirrored.likelihood) {
        assert!((a - b).abs() < 1e-12);
    }
    let ea = evaluate(direct).unwrap().state_epv;
    let eb = evaluate(mirrored).unwrap().state_epv;
    assert!((ea.mean - eb.mean).abs() < 1e-12);
    let total: f64 = model.surface(&state).likelihood.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn advancing_the_attack_raises_heuristic_epv() {
    let model = HeuristicModel::default();
    for p in separable_pairs(8, 10).pairs {
        let base = if p.label == Some(PairLabel::A) { &p.b } else { &p.a };
        let low = evaluate(model.surface(base)).unwrap().state_epv.mean;
        let high = evaluate(model.surface(&advance_attack(base, 12.0))).unwrap().state_epv.mean;
        assert!(high > low, "{}: {low} -> {high}", p.id);
    }
}

#[test]
fn benchmark_accuracy_is_order_and_duplication_invariant() {
    let model = HeuristicModel::default();
    let pairs = separable_pairs(12, 6);
    let base = evaluate_benchmark(&pairs.pairs, &model).unwrap();
    let mut doubled = pairs.pairs.clone();
    doubled.extend(pairs.pairs.clone());
    assert_eq!(evaluate_benchmark(&doubled, &model).unwrap().accuracy, base.accuracy);

    // swapping a and b (and the label) leaves each state's scalar alone
    let swapped: Vec<_> = pairs
        .pairs
        .iter()
        .map(|p| {
            let mut q = p.clone();
            std::mem::swap(&mut q.a, &mut q.b);
            q.label = q.label.map(PairLabel::flipped);
            q
        })
        .collect();
    let sw = evaluate_benchmark(&swapped, &model).unwrap();
    for (r, s) in base.records.iter().zip(&sw.records) {
        assert_eq!(r.epv_a, s.epv_b);
        assert_eq!(r.margin.map(|m| -m), s.margin);
    }
    assert_eq!(sw.accuracy, base.accuracy);

    let csv = base.to_csv();
    assert_eq!(csv.lines().next().unwrap(), REPORT_HEADER.join(","));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn benchmark_abstains_when_nothing_is_retained() {
    struct Flat;
    impl SurfaceModel for Flat {
        fn surfaces(&self, states: &[&pitch_epv::state::GameState]) -> Result<Vec<SurfaceSet>, pitch_epv::model::ModelError> {
            let n = FULL_DIMS.0 * FULL_DIMS.1;
            Ok(states.iter().map(|_| flat(FULL_DIMS, 1.0 / n as f64, [0.1, 0.8, 0.1])).collect())
        }
    }
    let pairs = separable_pairs(1, 3);
    let r = evaluate_benchmark(&pairs.pairs, &Flat).unwrap();
    assert_eq!((r.total, r.abstained, r.correct), (0, 3, 0));
    assert!(r.records.iter().all(|p| p.predicted.is_none() && p.abstained.is_some()));
}

#[test]
fn malformed_pair_files_are_rejected() {
    assert!(matches!(PairFile::parse("{ nope"), Err(BenchmarkError::Json(_))));
    let mut file = separable_pairs(2, 2);
    file.pairs[1].label = None;
    assert!(matches!(PairFile::parse(&file.to_json()), Err(BenchmarkError::Pair { .. })));
    let mut same = separable_pairs(2, 1);
    same.pairs[0].b = same.pairs[0].a.clone();
    assert!(PairFile::parse(&same.to_json()).is_err());
    let mut bad_state = separable_pairs(2, 1);
    bad_state.pairs[0].a.carrier = 99;
    assert!(matches!(PairFile::parse(&bad_state.to_json()), Err(BenchmarkError::State { side: "a", .. })));
    assert!(matches!(evaluate_benchmark(&[], &HeuristicModel::default()), Err(BenchmarkError::Empty)));

    let ok = separable_pairs(2, 3);
    assert_eq!(PairFile::parse(&ok.to_json()).unwrap(), ok);
}

#[test]
fn adapter_round_trips_unlabelled_pairs_and_reports_bad_rows() {
    let mut file = separable_pairs(4, 3);
    file.pairs[2].label = None;
    file.pairs[0].tags.clear();
    file.pairs[1].rationale = "switch, then \"cut back\"".into();
    let mut csv = Vec::new();
    export_published(&file, &mut csv).unwrap();
    assert_eq!(import_published(&csv[..]).unwrap(), file);

    let text = String::from_utf8(csv).unwrap();
    let broken = text.replacen(",player,att,", ",player,referee,", 1);
    assert!(matches!(import_published(broken.as_bytes()), Err(AdapterError::Row { .. })));
}

#[test]
fn bundle_loads_four_checkpoints_and_rejects_gaps() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ModelBundle::load(&dir.path().join("missing")), Err(BundleError::MissingDir(_))));
    for kind in ModelKind::ALL {
        let mut net = PassNet::<f32>::new(ModelSpec::new(kind.head()), kind as u64).unwrap();
        net.store_mut().set_stats_ready(true);
        save_checkpoint(&net, &checkpoint_file(dir.path(), kind)).unwrap();
    }
    let bundle = ModelBundle::load(dir.path()).unwrap();
    let state = separable_pairs(9, 1).pairs.remove(0).a;
    let sets = bundle.surfaces(&[&state, &state.mirror_y()]).unwrap();
    assert_eq!(sets.len(), 2);
    for s in &sets {
        s.check().unwrap();
        assert!((s.likelihood.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    }

    // a success checkpoint in the likelihood slot
    std::fs::copy(checkpoint_file(dir.path(), ModelKind::Success), checkpoint_file(dir.path(), ModelKind::Likelihood))
        .unwrap();
    assert!(matches!(ModelBundle::load(dir.path()), Err(BundleError::Head { .. })));
    std::fs::remove_file(checkpoint_file(dir.path(), ModelKind::ValueFailure)).unwrap();
    assert!(ModelBundle::load(dir.path()).is_err());
}
