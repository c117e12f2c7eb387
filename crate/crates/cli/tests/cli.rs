use std::fs;
use std::path::{Path, PathBuf};

use chebysfda_cli::{run_cli, RunManifest};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["chebysfda"];
    argv.extend_from_slice(args);
    run_cli(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    ckpt: PathBuf,
}

/// Small dataset plus a briefly trained source model.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    assert_eq!(
        run(&["gen-data", "--seed", "3", "--out", s(&data), "--n-source-train", "8", "--n-target-train", "8", "--n-target-test", "4"]),
        0
    );
    let src = root.join("src");
    assert_eq!(run(&["train-source", "--data", s(&data), "--out", s(&src), "--source-epochs", "2"]), 0);
    Fixture { _dir: dir, ckpt: src.join("source.ckpt"), root, data }
}

#[test]
fn gen_data_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(&["gen-data", "--seed", "11", "--out", s(out), "--n-source-train", "3", "--n-target-train", "2", "--n-target-test", "2"]), 0);
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 10);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run(&["adapt", "--bogus"]), 2);
    assert_eq!(run(&["adapt", "--data", "d", "--out", s(&out)]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"gamma": -1}"#).unwrap();
    assert_eq!(run(&["train-source", "--data", "d", "--out", s(&out), "--config", s(&bad)]), 2);
    fs::write(&bad, "not json").unwrap();
    assert_eq!(run(&["train-source", "--data", "d", "--out", s(&out), "--config", s(&bad)]), 2);
    assert_eq!(run(&["train-source", "--data", "d", "--out", s(&out), "--threshold", "1.5"]), 2);
}

#[test]
fn missing_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = dir.path().join("x");
    assert_eq!(run(&["eval-seg", "--ckpt", s(&missing), "--data", s(&missing), "--out", s(&out)]), 1);
    assert_eq!(run(&["train-source", "--data", s(&missing), "--out", s(&out)]), 1);
    assert_eq!(run(&["replay", s(&missing), "--out", s(&out)]), 1);
}

#[test]
fn adapt_replay_is_byte_identical() {
    let f = fixture();
    let first = f.root.join("adapt1");
    assert_eq!(
        run(&["adapt", "--source-ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(&first), "--epochs", "1", "--batch-size", "4", "--svg"]),
        0
    );
    let m = RunManifest::read(&first).unwrap();
    assert_eq!(m.command, "adapt");
    assert_eq!(m.config.epochs, 1);
    assert!(m.outputs.iter().any(|o| o == "adapted.ckpt"));
    assert!(!m.args.iter().any(|a| a.starts_with("--out")));

    let second = f.root.join("adapt2");
    assert_eq!(run(&["replay", s(&first), "--out", s(&second)]), 0);
    for name in ["adapted.ckpt", "steps.csv", "eval.csv", "config.json", "manifest.json", "losses.svg"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
    let steps = csv_rows(&first.join("steps.csv"));
    assert_eq!(steps.len(), 1 + 2);
}

#[test]
fn replay_refuses_changed_inputs() {
    let f = fixture();
    let out = f.root.join("seg");
    assert_eq!(run(&["eval-seg", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(&out), "--split", "source-train"]), 0);
    let rows = csv_rows(&out.join("seg_per_image.csv"));
    assert_eq!(rows.len(), 1 + 8);
    let mut bytes = fs::read(&f.ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&f.ckpt, bytes).unwrap();
    assert_eq!(run(&["replay", s(&out), "--out", s(&f.root.join("seg2"))]), 1);
}

#[test]
fn zero_gamma_sweep_matches_weighting_off() {
    let f = fixture();
    let sweep = f.root.join("sweep");
    let common = ["--epochs", "1", "--batch-size", "4"];
    let mut args = vec!["sweep-gamma", "--source-ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(&sweep), "--gammas", "0"];
    args.extend(common);
    assert_eq!(run(&args), 0);
    let rows = csv_rows(&sweep.join("gamma_sweep.csv"));
    assert_eq!(rows.len(), 2);

    let off = f.root.join("off");
    let mut args = vec![
        "adapt",
        "--source-ckpt",
        s(&f.ckpt),
        "--data",
        s(&f.data),
        "--out",
        s(&off),
        "--disable",
        "confidence-weighting",
    ];
    args.extend(common);
    assert_eq!(run(&args), 0);
    let eval = csv_rows(&off.join("eval.csv"));
    let dice_col = rows[0].iter().position(|c| c == "dice_mean").unwrap();
    assert_eq!(rows[1][dice_col], eval[2][1]);
}

#[test]
fn ablation_and_denoise_tables() {
    let f = fixture();
    let abl = f.root.join("abl");
    assert_eq!(
        run(&["ablate", "--source-ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(&abl), "--epochs", "1", "--batch-size", "8", "--mc-passes", "2"]),
        0
    );
    let rows = csv_rows(&abl.join("ablation.csv"));
    assert_eq!(rows.len(), 1 + 10);
    assert_eq!(rows[1][0], "00000");
    assert_eq!(rows[10][0], "11111");

    let dn = f.root.join("dn");
    assert_eq!(
        run(&["eval-denoise", "--source-ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(&dn), "--curve-steps", "10", "--svg"]),
        0
    );
    let table = csv_rows(&dn.join("denoise_table.csv"));
    assert_eq!(table.len(), 1 + 5);
    let curves = csv_rows(&dn.join("pr_curves.csv"));
    assert_eq!(curves.len(), 1 + 3 * 11);
    assert!(dn.join("pr_curves.svg").exists());

    let bad = f.root.join("dn2");
    assert_eq!(
        run(&["eval-denoise", "--source-ckpt", s(&f.ckpt), "--data", s(&f.data), "--out", s(&bad), "--methods", "magic"]),
        2
    );
}
