use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use footprint_fix::geojson;
use footprint_fix::geometry::Footprint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_footprint-fix"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out-dir", "s"];
    args.extend_from_slice(extra);
    ok(&args, dir);
}

fn read(path: &Path) -> Vec<Footprint<f64>> {
    geojson::read(path).unwrap()
}

#[test]
fn staged_commands_match_pipeline_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--seed", "11", "--drop", "0.2", "--miss", "0.2", "--noise", "0.05"]);
    ok(
        &["pipeline", "--raster", "s/probmap.pmap", "--annotations", "s/perturbed.geojson", "--truth", "s/truth.geojson", "--out-dir", "p"],
        d,
    );
    ok(&["align", "--raster", "s/probmap.pmap", "--annotations", "s/perturbed.geojson", "--out", "a.geojson"], d);
    ok(
        &["remove", "--raster", "s/probmap.pmap", "--annotations", "a.geojson", "--kept", "k.geojson", "--removed", "r.geojson"],
        d,
    );
    ok(
        &["add", "--raster", "s/probmap.pmap", "--annotations", "k.geojson", "--added", "n.geojson", "--final", "f.geojson"],
        d,
    );
    ok(
        &["eval", "--raster", "s/probmap.pmap", "--pred", "f.geojson", "--truth", "s/truth.geojson", "--out", "e.txt"],
        d,
    );
    for (staged, piped) in [
        ("a.geojson", "aligned.geojson"),
        ("k.geojson", "kept.geojson"),
        ("r.geojson", "removed.geojson"),
        ("n.geojson", "added.geojson"),
        ("f.geojson", "final.geojson"),
        ("e.txt", "eval.txt"),
    ] {
        assert_eq!(fs::read(d.join(staged)).unwrap(), fs::read(d.join("p").join(piped)).unwrap(), "{piped}");
    }
}

#[test]
fn identity_scene_passes_through() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--seed", "5", "--max-shift", "0"]);
    ok(
        &["pipeline", "--raster", "s/probmap.pmap", "--annotations", "s/perturbed.geojson", "--threshold", "1", "--out-dir", "p"],
        d,
    );
    let input = read(&d.join("s/perturbed.geojson"));
    let output = read(&d.join("p/final.geojson"));
    assert_eq!(input.len(), output.len());
    for (a, b) in input.iter().zip(&output) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.polygon, b.polygon);
    }
    assert!(read(&d.join("p/removed.geojson")).is_empty());
    assert!(read(&d.join("p/added.geojson")).is_empty());
}

#[test]
fn synthetic_scene_scores_high_at_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--seed", "2", "--drop", "0.2", "--miss", "0.2", "--noise", "0.05"]);
    let out = ok(
        &["pipeline", "--raster", "s/probmap.pmap", "--annotations", "s/perturbed.geojson", "--truth", "s/truth.geojson", "--out-dir", "p"],
        d,
    );
    let report = String::from_utf8(out.stdout).unwrap();
    assert_eq!(report, fs::read_to_string(d.join("p/eval.txt")).unwrap());
    let f1: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("object_f1="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(f1 >= 0.9, "{report}");
}

#[test]
fn exit_codes_and_stage_attribution() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--seed", "1", "--width", "600", "--height", "600", "--groups", "3"]);

    let missing = run(&["pipeline", "--raster", "nope.pmap", "--annotations", "s/perturbed.geojson", "--out-dir", "p"], d);
    assert_eq!(missing.status.code(), Some(2));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(err.contains("input stage") && err.contains("nope.pmap"), "{err}");

    let bad = run(
        &["pipeline", "--raster", "s/probmap.pmap", "--annotations", "s/perturbed.geojson", "--beta", "-1", "--out-dir", "p"],
        d,
    );
    assert_eq!(bad.status.code(), Some(1));

    assert_eq!(run(&["pipeline", "--no-such-flag"], d).status.code(), Some(1));
    assert_eq!(run(&["--help"], d).status.code(), Some(0));

    fs::write(d.join("multi.geojson"), r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"id":"m"},"geometry":{"type":"MultiPolygon","coordinates":[]}}]}"#).unwrap();
    let format = run(&["align", "--raster", "s/probmap.pmap", "--annotations", "multi.geojson"], d);
    assert_eq!(format.status.code(), Some(1));

    // a detection grid of the wrong size fails in the add stage after the
    // earlier stages have been written
    fs::write(d.join("grid.dgrd"), b"DGRD\x01\x00\x00\x00").unwrap();
    let partial = run(
        &["pipeline", "--raster", "s/probmap.pmap", "--annotations", "s/perturbed.geojson", "--detections", "grid.dgrd", "--out-dir", "p"],
        d,
    );
    assert_ne!(partial.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&partial.stderr).contains("add stage"));
    assert!(d.join("p/aligned.geojson").exists() && d.join("p/kept.geojson").exists());
    assert!(!d.join("p/final.geojson").exists());
}

#[test]
fn shapes_lists_the_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["shapes"], tmp.path());
    let shapes: Vec<Footprint<f64>> = geojson::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(shapes.len(), 18);
    assert_eq!(shapes[0].properties["base"], "circle");
}

#[test]
fn synth_writes_scene_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, &["--seed", "4", "--drop", "0.1", "--miss", "0.1"]);
    for f in ["probmap.pmap", "truth.geojson", "perturbed.geojson", "shifts.txt", "labels.txt"] {
        assert!(d.join("s").join(f).exists(), "{f}");
    }
    let again = tempfile::tempdir().unwrap();
    synth(again.path(), &["--seed", "4", "--drop", "0.1", "--miss", "0.1"]);
    for f in ["probmap.pmap", "perturbed.geojson", "shifts.txt"] {
        assert_eq!(fs::read(d.join("s").join(f)).unwrap(), fs::read(again.path().join("s").join(f)).unwrap());
    }
}
