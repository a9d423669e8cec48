use dualspat::decision::fuse_labels;
use dualspat::io::{load_cube, load_labels, write_cube, write_labels};
use dualspat::pipeline::*;
use dualspat::raster::ProbStack;
use dualspat::spfilter::extract_sp;
use dualspat::synth::{generate_synthetic, sample_training, SyntheticSpec};
use dualspat::{Error, HsiCube, LabelMap};

struct Scene {
    cube: HsiCube,
    train: LabelMap,
    test: LabelMap,
}

fn scene(seed: u64) -> Scene {
    let s = generate_synthetic::<f64>(&SyntheticSpec::new(24, 24, 4, 12, 0.05, seed)).unwrap();
    let (train, test) = sample_training(&s.labels, 10, seed).unwrap();
    Scene {
        cube: s.cube,
        train,
        test,
    }
}

fn small_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    for (k, v) in [("bands", "6"), ("components", "4"), ("kpca_anchors", "300")] {
        cfg.set(k, v).unwrap();
    }
    cfg.seed = seed;
    cfg
}

#[test]
fn identical_runs_are_identical() {
    let s = scene(1);
    let cfg = small_config(1);
    let a = run_scene(&s.cube, &s.train, Some(&s.test), &cfg).unwrap();
    let b = run_scene(&s.cube, &s.train, Some(&s.test), &cfg).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.report, b.report);
    assert!(a.evaluation.unwrap().fused.overall > 0.9);
}

#[test]
fn fusion_endpoints_equal_the_branches() {
    let s = scene(2);
    let branches = compute_branches(&s.cube, &s.train, &small_config(2)).unwrap();
    let a = finish(branches.clone(), Some(&s.test), 1.0).unwrap();
    assert_eq!(a.labels, branches.c1.argmax_labels());
    let b = finish(branches.clone(), Some(&s.test), 0.0).unwrap();
    assert_eq!(b.labels, branches.c2.argmax_labels());
    let e = a.evaluation.unwrap();
    assert_eq!(e.fused.overall, e.spatial_features.overall);
}

#[test]
fn stages_rerun_from_saved_artifacts_match() {
    let s = scene(3);
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cube(&s.cube, d.join("cube.hdr")).unwrap();
    write_labels(&s.train, d.join("train.txt")).unwrap();
    write_labels(&s.test, d.join("test.txt")).unwrap();
    let mut cfg = small_config(3);
    cfg.input = Some(d.join("cube.hdr"));
    cfg.train = Some(d.join("train.txt"));
    cfg.test = Some(d.join("test.txt"));
    cfg.artifacts = Some(d.join("art"));
    cfg.output = Some(d.join("labels.txt"));
    let run = run_pipeline(&cfg).unwrap();

    let art = |name: &str| d.join("art").join(name);
    let cube = |name: &str| load_cube::<f64>(art(name)).unwrap();
    let probs = |name: &str| ProbStack::from_cube(&cube(name)).unwrap();
    let train = load_labels(d.join("train.txt")).unwrap();

    let input: HsiCube = load_cube(d.join("cube.hdr")).unwrap();
    assert_eq!(stage_normalize(&input), cube(artifact::NORMALIZED));
    assert_eq!(stage_reduce(&cube(artifact::NORMALIZED), cfg.bands).unwrap(), cube(artifact::REDUCED));
    let sp = extract_sp(
        &cube(artifact::REDUCED),
        &cfg.smooth,
        cfg.components,
        &cfg.kpca,
        cfg.seed + stage_seed::SP_KPCA,
    )
    .unwrap();
    assert_eq!(sp.features.quantized_f32(), cube(artifact::SP));
    let (_, c1) = classify_cube(&cube(artifact::SP), &train, &cfg.grid, cfg.seed + stage_seed::CLASSIFY_SP).unwrap();
    assert_eq!(c1, probs(artifact::C1));
    let (_, c2_prior) =
        classify_cube(&cube(artifact::REDUCED), &train, &cfg.grid, cfg.seed + stage_seed::CLASSIFY_REDUCED).unwrap();
    assert_eq!(c2_prior, probs(artifact::C2_PRIOR));
    let guidance = stage_guidance(&cube(artifact::NORMALIZED), &cfg.kpca, cfg.seed + stage_seed::GUIDANCE).unwrap();
    assert_eq!(guidance, cube(artifact::GUIDANCE));
    let c2 = stage_erw(&probs(artifact::C2_PRIOR), &cube(artifact::GUIDANCE), &cfg.erw).unwrap();
    assert_eq!(c2, probs(artifact::C2));
    let fused = fuse_labels(&probs(artifact::C1), &probs(artifact::C2), cfg.mu).unwrap();
    assert_eq!(fused, run.labels);
    assert_eq!(fused, load_labels(d.join("labels.txt")).unwrap());
    assert_eq!(fused, load_labels(art(artifact::LABELS)).unwrap());
}

#[test]
fn mu_sweep_has_one_row_per_value_and_matches_endpoints() {
    let s = scene(4);
    let cfg = small_config(4);
    let values: Vec<String> = ["0", "0.5", "1"].iter().map(|v| v.to_string()).collect();
    let rows = sweep_scene(&s.cube, &s.train, &s.test, &cfg, "mu", &values).unwrap();
    assert_eq!(rows.len(), 3);
    let run = run_scene(&s.cube, &s.train, Some(&s.test), &cfg).unwrap();
    let e = run.evaluation.unwrap();
    assert_eq!(rows[0].overall, e.spatial_optimization.overall);
    assert_eq!(rows[1].overall, e.fused.overall);
    assert_eq!(rows[2].overall, e.spatial_features.overall);
    let csv = format_sweep("mu", &rows);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("mu,OA,AA,Kappa\n"));
}

#[test]
fn sweep_rejects_unknown_axis_and_bad_values() {
    let s = scene(5);
    let cfg = small_config(5);
    assert!(sweep_scene(&s.cube, &s.train, &s.test, &cfg, "colour", &["1".into()]).is_err());
    assert!(sweep_scene(&s.cube, &s.train, &s.test, &cfg, "mu", &["2".into()]).is_err());
}

#[test]
fn stage_errors_name_the_stage() {
    let s = scene(6);
    let mut cfg = small_config(6);
    cfg.components = 50;
    let err = run_scene(&s.cube, &s.train, None, &cfg).unwrap_err();
    match err {
        Error::Stage { stage, .. } => assert_eq!(stage, "sp", "{err}"),
        other => panic!("untagged error {other}"),
    }
    assert!(err.to_string().contains("sp"));
}

#[test]
fn exported_maps() {
    let dir = tempfile::tempdir().unwrap();
    let zero = LabelMap::empty(2, 3, 4).unwrap();
    let ppm = render_ppm(&zero);
    assert!(ppm.ends_with(&[0u8; 18]));
    let ones = LabelMap::new(2, 2, 4, vec![1; 4]).unwrap();
    let ppm = render_ppm(&ones);
    let header = b"P6\n2 2\n255\n";
    assert_eq!(&ppm[..header.len()], header);
    assert!(ppm[header.len()..].chunks(3).all(|c| c == PALETTE[0]));

    let map = LabelMap::new(2, 3, 5, vec![0, 1, 2, 3, 4, 5]).unwrap();
    let path = dir.path().join("map.ppm");
    export_map(&map, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), render_ppm(&map));
    assert_eq!(load_labels(path.with_extension("txt")).unwrap(), map);
}

#[test]
fn config_text_round_trip_and_unknown_keys() {
    let text = "# comment\nlambda = 0.8\nmu=0.25\n\nseed = 9\nsvm_penalties = 0.1, 1, 10\n";
    let cfg = PipelineConfig::parse(text).unwrap();
    assert_eq!(cfg.smooth.lambda, 0.8);
    assert_eq!(cfg.grid.penalties, vec![0.1, 1.0, 10.0]);
    let again = PipelineConfig::parse(&cfg.serialize()).unwrap();
    assert_eq!(again, cfg);
    assert!(PipelineConfig::parse("lamda = 1").is_err());
    // Ranges are checked by validate, after any command-line overrides.
    assert!(PipelineConfig::parse("mu = 1.5").unwrap().validate().is_err());
}
