use std::time::Instant;

use endodepth::io::pfm;
use endodepth::pipeline::{run_pipeline, validate_formats, CheckStatus, PipelineConfig, PipelineError, Stage, RUN_MANIFEST_FILE};

#[test]
fn default_scene_runs_and_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let config = PipelineConfig::default().with_seed(7);

    let t0 = Instant::now();
    let (a, summary) = run_pipeline(&config, &root.path().join("a"), Some(7)).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    eprintln!("pipeline: {elapsed:.1} s, {summary:#?}");
    assert!(elapsed < 120.0, "pipeline took {elapsed:.1} s");
    assert_eq!(summary.n_frames, 32);
    for o in &a.outputs {
        assert!(root.path().join("a").join(o).is_file(), "{o}");
    }

    let (b, _) = run_pipeline(&config, &root.path().join("b"), Some(7)).unwrap();
    assert_eq!(a.without_timing(), b.without_timing());

    let report = validate_formats(&root.path().join("a"));
    for f in &report.files {
        assert_eq!(f.status, CheckStatus::Pass, "{}: {}", f.path.display(), f.message);
    }
    assert!(report.files.iter().any(|f| f.path.ends_with(RUN_MANIFEST_FILE)));
}

#[test]
fn bad_config_leaves_no_output() {
    let root = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::default();
    config.scene.trajectory.n_frames = 0;
    let out = root.path().join("out");
    let err = run_pipeline(&config, &out, None).unwrap_err();
    assert!(matches!(err, PipelineError::Failed { stage: Stage::Config, .. }));
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn truncated_pfm_is_reported_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = pfm::encode(4, 3, 1, &[1.0; 12]).unwrap();
    std::fs::write(dir.path().join("d.pfm"), &bytes[..bytes.len() - 5]).unwrap();
    let report = validate_formats(dir.path());
    assert_eq!(report.files.len(), 1);
    assert_eq!(report.files[0].status, CheckStatus::Fail);
    assert!(report.files[0].message.contains(&format!("byte {}", bytes.len() - 5)), "{}", report.files[0].message);
    assert!(!report.passed());
}

#[test]
fn png16_without_sidecar_warns() {
    let dir = tempfile::tempdir().unwrap();
    let grid = endodepth::grid::Grid::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let frame = endodepth::depth_eval::DepthFrame::from_values(grid);
    let path = dir.path().join("d.png");
    endodepth::io::png::write_depth16(&path, &frame, 0.1).unwrap();
    std::fs::remove_file(endodepth::io::png::sidecar_path(&path)).ok();
    let report = validate_formats(dir.path());
    assert_eq!(report.files.len(), 1);
    assert_eq!(report.files[0].status, CheckStatus::Warn);
    assert!(report.passed());
}
