use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mono-bev3d"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mono-bev3d")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// A small model keeps training runs in the subsecond range.
const SMALL: &str = r#"{
  "feature_dim": 8,
  "backbone_channels": [4, 6],
  "br2_widths": [16, 16, 16, 256],
  "br3_widths": [16, 16, 16, 16, 8, 8, 8, 4],
  "br4_widths": [16, 16, 16, 16, 8, 8, 8, 8],
  "batch_size": 8,
  "eval_every": 1
}"#;

#[test]
fn help_exits_zero_and_usage_errors_exit_one() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--bogus"])), 1);
    assert_eq!(code(&run(&["train", "--stage", "3"])), 1);
    let out = tempfile::tempdir().unwrap();
    let o = run(&["train", "--out", s(out.path())]);
    assert_eq!(code(&o), 1, "missing --stage");
    assert!(String::from_utf8_lossy(&o.stderr).contains("--stage"));
}

#[test]
fn bad_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let o = run(&["--config", s(&cfg), "gen-data", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"n": 5, "seed": 3}"#).unwrap();
    let o = run(&[
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "gen-data",
        "--n",
        "7",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("resolved_config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["n"], 7);
    assert_eq!(resolved["seed"], 3);
    let index = fs::read_to_string(dir.path().join("index.csv")).unwrap();
    assert_eq!(index.lines().count(), 8);
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&[
            "--seed",
            "11",
            "--out",
            s(d.path()),
            "gen-data",
            "--n",
            "12",
        ]);
        assert_eq!(code(&o), 0);
    }
    for f in ["index.csv", "manifest.json", "crops/000000_00.pgm"] {
        let x = fs::read(a.path().join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        let y = fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn stage2_without_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(&["--out", s(dir.path()), "gen-data", "--n", "6"])),
        0
    );
    let o = run(&["--out", s(dir.path()), "train", "--stage", "2"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage1.ckpt"));
}

#[test]
fn eval_of_identical_label_dirs_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let kitti = fixtures().join("kitti");
    let o = run(&[
        "--out",
        s(dir.path()),
        "eval",
        "--pred",
        s(&kitti),
        "--gt",
        s(&kitti),
        "--geometry",
        "frontal",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("ap_table.csv")).unwrap();
    assert!(table.starts_with("tier,iou_thr,ap,num_gt,num_det\n"));
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        if r[3] != "0" {
            assert_eq!(r[2], "1.000000", "{r:?}");
        }
    }
    assert!(dir.path().join("hit_rates.csv").exists());
    assert!(dir.path().join("prcurve_moderate_75.csv").exists());
}

#[test]
fn eval_rejects_bad_thresholds_and_tiers() {
    let dir = tempfile::tempdir().unwrap();
    let k = fixtures().join("kitti");
    let base = [
        "--out",
        s(dir.path()),
        "eval",
        "--pred",
        s(&k),
        "--gt",
        s(&k),
    ];
    let with = |extra: &[&str]| {
        let mut a = base.to_vec();
        a.extend_from_slice(extra);
        code(&run(&a))
    };
    assert_eq!(with(&["--iou", "1.5"]), 1);
    assert_eq!(with(&["--tier", "extreme"]), 1);
    assert_eq!(with(&["--geometry", "sideways"]), 1);
}

#[test]
fn inspect_labels_writes_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "--out",
        s(dir.path()),
        "inspect-labels",
        "--kitti-dir",
        s(&fixtures().join("kitti")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("difficulty_histogram.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), csv);
    let names: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(names, ["easy", "moderate", "hard", "ignored"]);
}

#[test]
fn inspect_labels_of_malformed_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels");
    fs::create_dir(&labels).unwrap();
    fs::copy(fixtures().join("malformed.txt"), labels.join("000000.txt")).unwrap();
    let o = run(&[
        "--out",
        s(dir.path()),
        "inspect-labels",
        "--kitti-dir",
        s(&labels),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", s(dir.path()), "grad-check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("grad_check.csv")).unwrap();
    assert!(csv.lines().count() >= 9, "{csv}");
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("small.json");
    fs::write(&cfg, SMALL).unwrap();
    let go = |args: &[&str]| {
        let mut a = vec!["--config", s(&cfg), "--out", s(out)];
        a.extend_from_slice(args);
        let o = run(&a);
        assert_eq!(
            code(&o),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    };
    go(&["gen-data", "--n", "40"]);
    go(&["train", "--stage", "1", "--epochs", "2"]);
    assert!(out.join("stage1.ckpt").exists());
    go(&["train", "--stage", "2", "--epochs", "2"]);
    assert!(out.join("stage2.ckpt").exists());
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    let stages: Vec<&str> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(stages, ["1", "1", "2", "2"], "{history}");

    // Stage-1 checkpoints carry no BR4 training and are refused for 3D eval.
    let ck1 = out.join("stage1.ckpt");
    let o = run(&[
        "--config",
        s(&cfg),
        "--out",
        s(out),
        "eval",
        "--ckpt",
        s(&ck1),
        "--dataset",
        s(out),
    ]);
    assert_eq!(code(&o), 2);

    let ck2 = out.join("stage2.ckpt");
    go(&["eval", "--ckpt", s(&ck2), "--dataset", s(out)]);
    for f in ["ap_table.csv", "hit_rates.csv", "bev_hit_rates.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(fs::read_dir(out.join("pred")).unwrap().count() > 0);

    go(&[
        "render-bev",
        "--ckpt",
        s(&ck2),
        "--dataset",
        s(out),
        "--frames",
        "2",
    ]);
    let ppm: Vec<_> = fs::read_dir(out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".ppm"))
        .collect();
    assert_eq!(ppm.len(), 2);
    assert!(fs::read(ppm[0].path()).unwrap().starts_with(b"P6"));
}
