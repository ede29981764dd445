use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "seg_hidden=3\nseg_features=4\nrect_hidden=3\nrect_features=4\nnode_dim=3\nhigh_nodes=2\n\
                    seg_epochs=2\nrect_epochs=2\nretrain_epochs=2\nbatch_size=2\n";

fn grn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grn")).args(args).env_remove("GRN_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = grn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    grn(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A tiny corpus plus a matching config file.
fn tiny(root: &Path) -> (String, String) {
    let data = root.join("data");
    ok(&[
        "gen-data",
        "--out",
        p(&data),
        "--n-labeled",
        "4",
        "--n-unlabeled",
        "6",
        "--n-test",
        "3",
        "--size",
        "16",
        "--categories",
        "4",
    ]);
    let cfg = root.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    (p(&data).to_string(), p(&cfg).to_string())
}

#[test]
fn gen_data_writes_the_requested_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["gen-data", "--out", p(&out), "--n-labeled", "64", "--n-unlabeled", "448", "--n-test", "2", "--size", "16"]);
    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 512);
    assert_eq!(manifest.lines().filter(|l| l.ends_with("\tlabeled")).count(), 64);
    assert_eq!(fs::read_to_string(out.join("test.tsv")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_dir(out.join("hidden")).unwrap().count(), 448);
}

#[test]
fn labeled_fraction_splits_the_total() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&[
        "gen-data",
        "--out",
        p(&out),
        "--labeled-fraction",
        "1/8",
        "--n-total",
        "64",
        "--n-test",
        "1",
        "--size",
        "16",
    ]);
    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.ends_with("\tlabeled")).count(), 8);
    assert_eq!(manifest.lines().count(), 64);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_grn"));
        cmd.env_remove("GRN_SEED");
        if let Some(s) = env {
            cmd.env("GRN_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        let args =
            ["gen-data", "--out", p(&out), "--n-labeled", "1", "--n-unlabeled", "0", "--n-test", "0", "--size", "16"];
        assert!(cmd.args(args).status().unwrap().success());
        fs::read(out.join("images/s00000.ppm")).unwrap()
    };
    let env7 = gen("a", Some("7"), None);
    assert_eq!(env7, gen("b", None, Some("7")));
    assert_eq!(gen("c", Some("3"), Some("7")), env7);
    assert_ne!(gen("d", None, None), env7);
}

#[test]
fn pipeline_reports_three_stages_and_writes_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = tiny(dir.path());
    let out = ok(&["pipeline", "--data", &data, "--config", &cfg, "--ablate-raw"]);
    let stages: Vec<&str> =
        out.lines().filter(|l| l.contains("\tmean_iou\t")).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(stages, ["baseline", "raw_retrain", "rectified_retrain"]);
    let run = Path::new(&data).join("run");
    for f in ["config.txt", "metrics.tsv", "run.log", "checkpoints/r1-baseline.grn", "checkpoints/r1-rnet.grn"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let tsv = fs::read_to_string(run.join("metrics.tsv")).unwrap();
    assert!(tsv.starts_with("stage\tclass\tmetric\tvalue\n"));
    assert_eq!(tsv.lines().filter(|l| l.contains("\tall\tmean_iou\t")).count(), 3);
}

#[test]
fn staged_commands_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = tiny(dir.path());
    let d = |name: &str| p(&dir.path().join(name)).to_string();
    ok(&["pipeline", "--data", &data, "--config", &cfg, "--out", &d("run")]);
    ok(&["train-seg", "--data", &data, "--config", &cfg, "--out", &d("s.grn")]);
    ok(&["pseudo-label", "--data", &data, "--snet", &d("s.grn"), "--out", &d("pseudo")]);
    ok(&["train-rect", "--data", &data, "--config", &cfg, "--snet", &d("s.grn"), "--out", &d("r.grn")]);
    ok(&[
        "rectify",
        "--data",
        &data,
        "--config",
        &cfg,
        "--rnet",
        &d("r.grn"),
        "--snet",
        &d("s.grn"),
        "--out",
        &d("rect"),
    ]);
    ok(&["retrain", "--data", &data, "--config", &cfg, "--labels", &d("rect"), "--out", &d("s2.grn")]);
    let same = |a: &str, b: &str| assert_eq!(fs::read(d(a)).unwrap(), fs::read(d(b)).unwrap(), "{a} vs {b}");
    same("s.grn", "run/checkpoints/r1-baseline.grn");
    same("r.grn", "run/checkpoints/r1-rnet.grn");
    same("s2.grn", "run/checkpoints/r1-rectified_retrain.grn");
    for e in fs::read_dir(d("rect")).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        same(&format!("rect/{name}"), &format!("run/rectified/r1/{name}"));
    }

    let eval = ok(&["eval", "--data", &data, "--snet", &d("s2.grn")]);
    let from_run = fs::read_to_string(d("run/metrics.tsv")).unwrap();
    let want = from_run.lines().find(|l| l.starts_with("rectified_retrain\tall\tmean_iou")).unwrap();
    assert!(eval.lines().any(|l| l.replacen("eval", "rectified_retrain", 1) == want), "{eval}");
    let hidden = ok(&["eval", "--data", &data, "--pred", &d("rect"), "--split", "unlabeled", "--protocol", "atr"]);
    assert!(hidden.contains("\tall\tavg_f1\t"));
    ok(&["export-masks", "--labels", &d("rect"), "--out", &d("png"), "--categories", "4"]);
    assert_eq!(fs::read_dir(d("png")).unwrap().count(), 6);
}

#[test]
fn grad_check_passes() {
    let out = ok(&["grad-check"]);
    assert!(out.starts_with("component\tparameter\telements\tmax_rel_error\n"));
    let worst = out.lines().last().unwrap();
    assert!(worst.starts_with("worst\t"), "{worst}");
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny(dir.path());
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["gen-data"]), 1);
    assert_eq!(code(&["gen-data", "--out", "x", "--n-labeled", "1", "--labeled-fraction", "0.5"]), 1);
    assert_eq!(code(&["pipeline", "--data", &data, "--set", "lr=fast"]), 1);
    assert_eq!(code(&["pipeline", "--data", &data, "--set", "nonsense=1"]), 1);
    assert_eq!(code(&["pipeline", "--data", &data, "--set", "categories=6"]), 1);
    assert_eq!(code(&["export-masks", "--labels", &data, "--out", &data, "--categories", "9"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(&dir.path().join("missing")).to_string();
    assert_eq!(code(&["pipeline", "--data", &missing]), 2);
    let (data, cfg) = tiny(dir.path());
    fs::write(Path::new(&data).join("manifest.tsv"), "broken line\n").unwrap();
    assert_eq!(code(&["train-seg", "--data", &data, "--config", &cfg, "--out", "x.grn"]), 2);
    let junk = dir.path().join("junk.grn");
    fs::write(&junk, b"nope").unwrap();
    assert_eq!(code(&["eval", "--data", &missing, "--snet", p(&junk)]), 2);
}
