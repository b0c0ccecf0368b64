use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privtrack")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: &str = r#"{"frame_count": 30, "seed": 4, "targets": [
  {"initial": {"left": 100, "top": 100, "width": 40, "height": 80}, "velocity": [3, 0], "class_id": 1},
  {"initial": {"left": 600, "top": 300, "width": 120, "height": 60}, "velocity": [-4, 1], "class_id": 3}
]}"#;

fn synth_into(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("synth.json");
    fs::write(&cfg, SYNTH).unwrap();
    let det = dir.join("det.txt");
    ok(&["synth", "--config", p(&cfg), "--out", p(&det), "--gt", p(&dir.join("gt.txt"))]);
    det
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let det = synth_into(dir.path());
    assert_eq!(fs::read_to_string(&det).unwrap().lines().count(), 60);

    let released = dir.path().join("released.txt");
    ok(&["privatize", "--eps", "1", "--delta", "1e-5", "--sensitivity", "1", "--cost", "1", "--seed", "3", "--in", p(&det), "--out", p(&released)]);
    let tracks = dir.path().join("tracks.txt");
    ok(&["track", "--in", p(&released), "--out", p(&tracks), "--gate", "0.7", "--max-misses", "5", "--seed", "3", "--noise-sigma", "4.8"]);
    let refined = dir.path().join("refined.txt");
    ok(&["refine", "--in", p(&tracks), "--det", p(&released), "--window", "10", "--out", p(&refined), "--noise-sigma", "4.8"]);
    assert_eq!(fs::read_to_string(&refined).unwrap().lines().count(), fs::read_to_string(&tracks).unwrap().lines().count());

    let report = dir.path().join("report.csv");
    ok(&["metrics", "--original", p(&det), "--sanitized", p(&released), "--report", p(&report)]);
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.contains("PSNR"), "{csv}");
}

#[test]
fn privatize_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let det = synth_into(dir.path());
    let release = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&["privatize", "--eps", "0.5", "--seed", seed, "--in", p(&det), "--out", p(&out)]);
        fs::read(out).unwrap()
    };
    let a = release("11", "a.txt");
    assert_eq!(a, release("11", "b.txt"));
    assert_ne!(a, release("12", "c.txt"));
    assert_ne!(a, fs::read(&det).unwrap());
}

#[test]
fn white_noise_touches_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let det = synth_into(dir.path());
    let ncp = dir.path().join("ncp.txt");
    let white = dir.path().join("white.txt");
    ok(&["privatize", "--eps", "1", "--seed", "1", "--in", p(&det), "--out", p(&ncp)]);
    ok(&["privatize", "--eps", "1", "--seed", "1", "--method", "white-noise", "--in", p(&det), "--out", p(&white)]);
    let original = fs::read_to_string(&det).unwrap();
    let changed = |path: &Path| fs::read_to_string(path).unwrap().lines().zip(original.lines()).filter(|(a, b)| a != b).count();
    // Only the pedestrian rows are sensitive under the default class set.
    assert_eq!(changed(&ncp), 30);
    assert_eq!(changed(&white), 60);
}

#[test]
fn hijack_moves_only_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let det = synth_into(dir.path());
    let attacked = dir.path().join("attacked.txt");
    ok(&["attack", "--kind", "hijack_shift", "--target", "1", "--onset", "10", "--drift", "2,-1", "--in", p(&det), "--out", p(&attacked)]);
    let before = fs::read_to_string(&det).unwrap();
    let after = fs::read_to_string(&attacked).unwrap();
    let field = |line: &str, i: usize| line.split(',').nth(i).unwrap().trim().parse::<f64>().unwrap();
    for (a, b) in before.lines().zip(after.lines()) {
        let (frame, id) = (field(a, 0), field(a, 1));
        if id == 1.0 && frame >= 10.0 {
            let k = frame - 10.0 + 1.0;
            assert!((field(b, 2) - field(a, 2) - 2.0 * k).abs() < 1e-6, "{a} vs {b}");
            assert!((field(b, 3) - field(a, 3) + k).abs() < 1e-6, "{a} vs {b}");
        } else {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let det = synth_into(dir.path());
    let out = dir.path().join("x.txt");
    assert!(!run(&["privatize", "--eps", "0", "--in", p(&det), "--out", p(&out)]).status.success());
    assert!(!run(&["privatize", "--eps", "1", "--delta", "1.5", "--in", p(&det), "--out", p(&out)]).status.success());
    assert!(!run(&["attack", "--kind", "teleport", "--target", "1", "--onset", "0", "--in", p(&det), "--out", p(&out)]).status.success());
    assert!(!run(&["attack", "--kind", "hijack_shift", "--target", "1", "--onset", "0", "--drift", "2", "--in", p(&det), "--out", p(&out)]).status.success());
    assert!(!run(&["track", "--in", p(&det), "--out", p(&out), "--gate", "1.5"]).status.success());
    assert!(!run(&["track", "--in", p(&dir.path().join("missing.txt")), "--out", p(&out)]).status.success());
    assert!(!out.exists());
}

#[test]
fn experiment_writes_identical_outputs_for_any_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"scenario": {"suite": {"clips": 2, "frames": 20}}, "methods": ["ncp_gaussian", "none"], "epsilons": [1.0, 4.0], "master_seed": 5}"#,
    )
    .unwrap();
    let serial = dir.path().join("serial");
    let parallel = dir.path().join("parallel");
    ok(&["experiment", "--config", p(&cfg), "--out", p(&serial), "--jobs", "1"]);
    ok(&["experiment", "--config", p(&cfg), "--out", p(&parallel), "--jobs", "4", "--normalize"]);
    let mut names: Vec<_> = fs::read_dir(&serial).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in &names {
        assert!(!fs::read(serial.join(name)).unwrap().is_empty(), "{name:?} is empty");
        assert!(parallel.join(name).exists(), "{name:?} missing from the normalized run");
    }
    // Without --normalize the same job split gives the same bytes.
    let again = dir.path().join("again");
    ok(&["experiment", "--config", p(&cfg), "--out", p(&again), "--jobs", "3"]);
    for name in &names {
        assert_eq!(fs::read(serial.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name:?}");
    }
}
