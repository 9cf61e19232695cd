use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn fim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fim")).args(args).env_remove("FIM_DATA_DIR").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &["--set", "gen.users=20", "--set", "gen.seq_len=16", "--set", "max_len=16", "--set", "fpem.p=3"];

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&fim(&[&["generate", "--out", p(&a)], TINY].concat()));
    ok(&fim(&[&["generate", "--out", p(&b)], TINY].concat()));
    for f in ["data.jsonl", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["users"], 20);
    assert_eq!(manifest["data_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "lr = 0.01\nbatch_size = lots\n").unwrap();
    let out = fim(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));

    let out = fim(&["gradcheck", "--set", "no.such.key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = fim(&["train", "--data", p(&dir.path().join("nowhere")), "--out", p(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_roundtrip_on_a_hundred_users() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&fim(&["generate", "--set", "gen.users=100", "--out", p(&data)]));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let start = Instant::now();
    ok(&fim(&["train", "--data", p(&data), "--out", p(&a), "--epochs", "1"]));
    assert!(start.elapsed().as_secs_f64() < 60.0);
    ok(&fim(&["train", "--data", p(&data), "--out", p(&b), "--epochs", "1"]));

    let csv = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(b.join("metrics.csv")).unwrap());
    let step0: Vec<&str> = csv.lines().skip(1).filter(|l| l.starts_with("0,")).collect();
    assert_eq!(step0.len(), 2);
    for row in step0 {
        let loss: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6, "{row}");
    }

    let eval = ok(&fim(&["eval", "--model", p(&a), "--data", p(&data)]));
    let lines: Vec<&str> = eval.lines().collect();
    assert_eq!(lines[0], "task,loss,auc,gauc");
    assert!(lines[1].starts_with("click,") && lines[2].starts_with("purchase,"));
    // the final training row and a fresh evaluation agree on the test AUC
    let last_purchase = csv.lines().last().unwrap();
    assert_eq!(last_purchase.split(',').nth(3), lines[2].split(',').nth(2));
}

#[test]
fn data_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("env-data");
    let out = Command::new(env!("CARGO_BIN_EXE_fim"))
        .args([&["generate"], TINY].concat())
        .env("FIM_DATA_DIR", &data)
        .output()
        .unwrap();
    ok(&out);
    assert!(data.join("data.jsonl").exists());
}

#[test]
fn gradcheck_without_fpem_reports_absent_group() {
    let out = fim(&[&["gradcheck", "--fpem", "off", "--set", "dims=2", "--set", "attention.hidden=4"], TINY].concat());
    let report = ok(&out);
    assert!(report.lines().any(|l| l.starts_with("fpem") && l.ends_with("absent")), "{report}");
    assert!(report.lines().any(|l| l.starts_with("mss") && l.contains(" ok ")), "{report}");
}

#[test]
fn ablation_grids_have_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&fim(&[&["generate", "--out", p(&data)], TINY].concat()));
    let base = [TINY, &["--set", "epochs=1", "--set", "dims=2", "--data", p(&data)]].concat();

    let views = ok(&fim(&[&["ablate", "--grid", "views=powerset"], base.as_slice()].concat()));
    let rows: Vec<&str> = views.lines().skip(1).collect();
    assert_eq!(rows.len(), 16);
    let hashes: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert!(hashes.windows(2).all(|w| w[0] < w[1]), "rows sorted by config hash");

    let grid = dir.path().join("grid.txt");
    std::fs::write(&grid, "# fusion ablation\nfpem.fusion = beta|direct\n").unwrap();
    let out = dir.path().join("fusion.csv");
    ok(&fim(&[&["ablate", "--grid-file", p(&grid), "--out", p(&out)], base.as_slice()].concat()));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("fpem.fusion=direct"));
}
