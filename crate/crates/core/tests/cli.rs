//! End-to-end checks of the `vcdiff` binary on tiny configurations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vcdiff::cohort::{save_case, OrganMask, PhantomCase};
use vcdiff::vcs::VcsModel;
use vcdiff::voxel::BinaryMask;

const TINY: &str = r#"{
  "cohort": {"n_cases": 6, "dims": [16, 16, 16], "spacing": 20.0},
  "model": {"widths": [2, 4], "t_embed_dim": 4, "v_embed_dim": 4},
  "train": {"epochs": 2, "batch_size": 2, "validation_cases": 1},
  "sample": {"ddim_steps": 2, "sweep_range": [-1.0, 1.0], "sweep_step": 1.0, "max_cases": 3},
  "match": {"range": [0.0, 1.0], "step": 1.0}
}"#;

fn vcdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcdiff"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vcdiff(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn gen_cohort_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = ok(&["gen-cohort", "--config", s(&cfg), "--out", s(&a), "--n", "5", "--seed", "7"]);
    ok(&["gen-cohort", "--config", s(&cfg), "--out", s(&b), "--n", "5", "--seed", "7"]);
    assert_eq!(tree(&a), tree(&b));
    assert_eq!(vcdiff::cohort::load_cohort(&a).unwrap().len(), 5);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("corr_body="), "{stdout}");
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(vcdiff(&["gen-cohort", "--n", "5"]).status.code(), Some(2));
    assert_eq!(vcdiff(&["no-such-command"]).status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"epoch": 3}}"#).unwrap();
    let out = vcdiff(&["gen-cohort", "--config", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn missing_cohort_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vcdiff(&["fit-vcs", "--cohort", s(&tmp.path().join("none")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
}

fn hand_case(id: &str, body_ml: usize, organ_ml: usize) -> PhantomCase {
    // 10 mm voxels hold 1 mL each
    let dims = [8, 8, 8];
    let fill = |n: usize| BinaryMask::new(dims, 10.0, (0..512).map(|i| i < n).collect()).unwrap();
    PhantomCase {
        case_id: id.into(),
        body: fill(body_ml),
        organs: vec![OrganMask { name: "liver".into(), mask: fill(organ_ml) }],
        true_volumes: BTreeMap::from([("liver".to_string(), organ_ml as f64)]),
    }
}

#[test]
fn fit_vcs_reproduces_the_worked_example() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("cohort");
    for (i, (b, o)) in [(100, 15), (200, 22), (300, 35)].into_iter().enumerate() {
        save_case(&cohort.join(format!("case_{i:04}")), &hand_case(&format!("case_{i:04}"), b, o)).unwrap();
    }
    let out_dir = tmp.path().join("vcs");
    let out = ok(&["fit-vcs", "--cohort", s(&cohort), "--organ", "liver", "--out", s(&out_dir)]);
    let text = fs::read_to_string(out_dir.join("vcs.json")).unwrap();
    let m = VcsModel::from_json(&text).unwrap();
    assert!((m.a - 0.1).abs() < 1e-12 && (m.b - 4.0).abs() < 1e-9 && (m.sigma - 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(m.to_json() + "\n", text);
    assert!(String::from_utf8_lossy(&out.stdout).contains("n=3"));
    assert!(out_dir.join("config.json").exists());
}

#[test]
fn fit_vcs_on_noiseless_cohort_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("cohort");
    for (i, b) in [100, 200, 300].into_iter().enumerate() {
        save_case(&cohort.join(format!("case_{i:04}")), &hand_case("c", b, b / 10)).unwrap();
    }
    let out = vcdiff(&["fit-vcs", "--cohort", s(&cohort), "--organ", "liver", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluate_against_itself_gives_unit_dice() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cohort = tmp.path().join("cohort");
    ok(&["gen-cohort", "--config", s(&cfg), "--out", s(&cohort), "--n", "3", "--seed", "1"]);
    let out = tmp.path().join("eval");
    ok(&["evaluate", "--generated", s(&cohort), "--reference", s(&cohort), "--train-set", s(&cohort), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("case,organ,metric,value\n"));
    let dice: Vec<f64> = csv
        .lines()
        .filter(|l| l.split(',').nth(2) == Some("dice"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(dice.len(), 9);
    assert!(dice.iter().all(|&d| d == 1.0));
    assert!(csv.lines().any(|l| l.contains("nn_chamfer_mm,0")));
}

#[test]
fn train_then_sample_on_a_held_out_body() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cohort = tmp.path().join("cohort");
    ok(&["gen-cohort", "--config", s(&cfg), "--out", s(&cohort), "--seed", "2"]);
    let ck = tmp.path().join("liver");
    ok(&["train", "--config", s(&cfg), "--cohort", s(&cohort), "--organ", "liver", "--out", s(&ck)]);
    assert!(ck.join("checkpoint.json").exists() && ck.join("params.dnp").exists());
    assert_eq!(fs::read_to_string(ck.join("history.csv")).unwrap().lines().count(), 3);

    let held_out = tmp.path().join("held");
    ok(&["gen-cohort", "--config", s(&cfg), "--out", s(&held_out), "--n", "1", "--seed", "77"]);
    let body = held_out.join("case_0000");
    let out = tmp.path().join("sample");
    ok(&["sample", "--config", s(&cfg), "--checkpoint", s(&ck), "--body", s(&body), "--vcs", "0", "--out", s(&out)]);
    assert!(out.join("organ_liver.vgf").exists());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sample.json")).unwrap()).unwrap();
    let organ = &report["organs"][0];
    assert_eq!(organ["name"], "liver");
    assert_eq!(organ["requested_v"], 0.0);
    assert!(organ["realized_volume_ml"].as_f64().unwrap() >= 0.0);

    let bad = vcdiff(&["sample", "--checkpoint", s(&ck), "--body", s(&body), "--vcs", "kidney=1", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}
