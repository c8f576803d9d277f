use std::path::Path;
use std::process::{Command, Output};

use endodepth::depth_eval::{evaluate, AlignmentDomain};
use endodepth::io::{self, json, ply};
use endodepth::pipeline::{RunManifest, RUN_MANIFEST_FILE};
use endodepth::reconstruct::fuse;
use endodepth::synthcolon::DatasetManifest;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_endodepth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn render_small(dir: &Path, seed: &str) {
    ok(&["render", "--frames", "4", "--size", "32x24", "--seed", seed, "--out", dir.to_str().unwrap()]);
}

#[test]
fn help_documents_pfm_bytes() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"Pf\""));
    assert!(text.contains("negative") && text.contains("little-endian"));
    for sub in ["render", "preprocess", "eval", "poses", "reconstruct", "coverage", "pipeline", "validate"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn render_is_reproducible_and_valid() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    render_small(&a, "7");
    render_small(&b, "7");
    let ma: DatasetManifest = json::read_json(&a.join("manifest.json")).unwrap();
    let mb: DatasetManifest = json::read_json(&b.join("manifest.json")).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(ma.n_frames, 4);
    let ra: RunManifest = json::read_json(&a.join(RUN_MANIFEST_FILE)).unwrap();
    let rb: RunManifest = json::read_json(&b.join(RUN_MANIFEST_FILE)).unwrap();
    assert_eq!(ra.without_timing(), rb.without_timing());

    let out = ok(&["validate", a.to_str().unwrap(), "--print-json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["files"].as_array().unwrap().iter().all(|f| f["status"] == "pass"));
}

#[test]
fn subcommands_match_library_results() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    render_small(&data, "3");
    let d = data.to_str().unwrap();

    // eval: ground truth against itself through the CLI and the library.
    let metrics = root.path().join("metrics.json");
    ok(&["eval", "--pred", d, "--gt", d, "--bootstrap", "0", "--out", metrics.to_str().unwrap()]);
    let cli: serde_json::Value = json::read_json(&metrics).unwrap();
    let gt = io::load_depth_dir(&data).unwrap().cast::<f64>();
    let lib = evaluate(&gt, &gt, AlignmentDomain::Depth, None).unwrap();
    assert_eq!(cli, serde_json::to_value(&lib).unwrap());
    assert_eq!(lib.metrics.delta1.value, 1.0);
    assert!(root.path().join("metrics.json.manifest.json").is_file());

    // reconstruct: same cloud as fusing directly.
    let cloud = root.path().join("cloud.ply");
    let poses = data.join("poses.json");
    let k = data.join("intrinsics.json");
    ok(&[
        "reconstruct", "--depth", d, "--poses", poses.to_str().unwrap(), "--intrinsics", k.to_str().unwrap(),
        "--labels", d, "--stride", "2", "--out", cloud.to_str().unwrap(),
    ]);
    let from_cli = ply::read(&cloud).unwrap();
    let labels: Vec<_> = (0..4)
        .map(|i| io::png::read_gray8(&data.join(format!("frame_{i:04}_label.png"))).unwrap())
        .collect();
    let lib = fuse(
        &io::load_depth_dir(&data).unwrap(),
        &json::read_poses(&poses).unwrap(),
        &json::read_intrinsics(&k).unwrap(),
        None,
        Some(&labels),
        2,
    )
    .unwrap();
    assert_eq!(from_cli.len(), lib.len());
    for (a, b) in from_cli.points.iter().zip(&lib.points) {
        assert_eq!(a.label, b.label);
        assert!((a.xyz - b.xyz.map(|x| x as f32 as f64)).norm() == 0.0);
    }

    // coverage on that cloud.
    let map = root.path().join("map.png");
    let summary = root.path().join("cov.json");
    ok(&[
        "coverage", "--cloud", cloud.to_str().unwrap(), "--bins", "64x16", "--out", map.to_str().unwrap(), "--summary",
        summary.to_str().unwrap(),
    ]);
    let cov: serde_json::Value = json::read_json(&summary).unwrap();
    let ratio = cov["coverage_ratio"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ratio));
    assert_eq!(io::png::read_gray8(&map).unwrap().width(), 64);

    // preprocess the intensity frames.
    let pre = root.path().join("pre");
    ok(&["preprocess", "--in", d, "--out", pre.to_str().unwrap(), "--specular-mask", "--inpaint", "--attenuate", "0.5"]);
    assert!(pre.join("frame_0000_intensity.png").is_file());
    assert!(pre.join("frame_0000_intensity_mask.png").is_file());
}

#[test]
fn poses_from_tracks() {
    use endodepth::synthcolon::{generate, oracle_tracks, OracleTrackConfig, Scene};
    let root = tempfile::tempdir().unwrap();
    let mut scene = Scene::default();
    scene.trajectory.n_frames = 5;
    scene.trajectory.width = 48;
    scene.trajectory.height = 48;
    let seq = generate(&scene.with_seed(1)).unwrap();
    let cfg = OracleTrackConfig {
        grid_stride: 6,
        ..Default::default()
    };
    let tracks = oracle_tracks(&seq.rendered.frames, &cfg).unwrap();
    let tracks_path = root.path().join("tracks.jsonl");
    let k_path = root.path().join("k.json");
    json::write_tracks(&tracks_path, &tracks).unwrap();
    json::write_intrinsics(&k_path, &seq.trajectory.intrinsics).unwrap();
    let out = root.path().join("poses.json");
    ok(&[
        "poses", "--tracks", tracks_path.to_str().unwrap(), "--intrinsics", k_path.to_str().unwrap(), "--huber", "0",
        "--out", out.to_str().unwrap(),
    ]);
    let est = json::read_poses(&out).unwrap();
    assert_eq!(est.len(), 5);
    let p0 = seq.rendered.frames[0].pose.inverse();
    for (e, f) in est.iter().zip(&seq.rendered.frames) {
        let (angle, dist) = e.distance_to(&p0.compose(&f.pose));
        assert!(angle < 1e-4 && dist < 1e-3, "{angle} {dist}");
    }
}

#[test]
fn missing_input_fails_without_outputs() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("metrics.json");
    let missing = root.path().join("nope");
    let r = run(&["eval", "--pred", missing.to_str().unwrap(), "--gt", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
    let pre = root.path().join("pre");
    let r = run(&["preprocess", "--in", missing.to_str().unwrap(), "--out", pre.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn exit_codes() {
    let root = tempfile::tempdir().unwrap();
    // Bad configuration value.
    let r = run(&["render", "--frames", "0", "--out", root.path().join("x").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!root.path().join("x").exists());
    // Unknown flag.
    assert_eq!(run(&["render", "--bogus"]).status.code(), Some(2));
    // Truncated PFM fails validation with its byte offset.
    let bytes = io::pfm::encode(3, 2, 1, &[1.0; 6]).unwrap();
    std::fs::write(root.path().join("d.pfm"), &bytes[..bytes.len() - 1]).unwrap();
    let r = run(&["validate", root.path().to_str().unwrap(), "--print-json"]);
    assert_eq!(r.status.code(), Some(5));
    let report: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let msg = report["files"][0]["message"].as_str().unwrap();
    assert!(msg.contains(&format!("byte {}", bytes.len() - 1)), "{msg}");
}
