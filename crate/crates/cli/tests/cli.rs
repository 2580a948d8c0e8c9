use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// Seconds-scale settings: 6 × 20 waterfalls of 4 × 512, a 1-block model.
const SMALL: &str = "
data.counts = 20
data.channels = 4
data.samples = 512
data.seed = 3
stft.window = 32
stft.hop = 32
stft.nfft = 32
tubes.cp = 2
tubes.tp = 4
tubes.fp = 4
model.de = 16
model.le = 1
model.he = 2
model.dd = 8
model.ld = 1
model.hd = 2
train.batch = 16
train.epochs = 3
train.warmup = 1
train.seed = 5
stage1.samples = 8
stage1.epochs = 2
eval.probe_epochs = 10
eval.probe_warmup = 1
eval.finetune_epochs = 2
eval.finetune_batch = 16
eval.finetune_warmup = 1
eval.seeds = 1,2
eval.tsne.perplexity = 5
eval.tsne.iterations = 60
";

fn dasmae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dasmae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dasmae(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn out_of_range_ratio_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dasmae(&["pretrain", "--set", "tubes.ratio=1.5", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tubes.ratio"));
    assert!(!dir.path().join("model.ckpt").exists());
}

#[test]
fn usage_and_data_exit_codes() {
    assert_eq!(dasmae(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dasmae(&["probe", "--bogus"]).status.code(), Some(1));
    assert_eq!(dasmae(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(dasmae(&["gen", "--set", "train.sede=1", "--out", out]).status.code(), Some(1));
    assert_eq!(dasmae(&["gen", "--config", "/nonexistent/x.cfg", "--out", out]).status.code(), Some(2));
    assert_eq!(dasmae(&["probe", "--data", "/nonexistent/data", "--out", out]).status.code(), Some(2));
    assert_eq!(dasmae(&["report", "/nonexistent/run"]).status.code(), Some(2));
}

#[test]
fn gen_then_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    ok(&["gen", "--config", &cfg, "--out", s(&data)]);
    assert!(data.join("manifest.toml").exists());
    let files = fs::read_dir(&data).unwrap().count();
    assert_eq!(files, 120 + 2);
    let echo = fs::read_to_string(data.join("config.txt")).unwrap();
    assert!(echo.contains("data.counts = 20\n"));
    ok(&["preprocess", "--config", &cfg, "--data", s(&data)]);
    assert!(data.join("spectra.dspc").exists());

    // Cached and recomputed spectrograms must give the same probe.
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["probe", "--config", &cfg, "--data", s(&data), "--out", s(&a)]);
    fs::remove_file(data.join("spectra.dspc")).unwrap();
    ok(&["probe", "--config", &cfg, "--data", s(&data), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn fewshot_uses_k_per_class_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("fs");
    let stdout = ok(&["fewshot", "--config", &cfg, "--set", "eval.k_per_class=15", "--out", s(&out)]);
    assert!(stdout.contains("(90 total)"), "{stdout}");
    let csv = fs::read_to_string(out.join("fewshot.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("90")));
    assert!(rows[2].starts_with("median,15,90,"));
    let too_many = dasmae(&["fewshot", "--config", &cfg, "--set", "eval.k_per_class=17", "--out", s(&out)]);
    assert_eq!(too_many.status.code(), Some(2));
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let runs: Vec<_> = ["r1", "r2"].iter().map(|r| dir.path().join(r)).collect();
    for r in &runs {
        ok(&["pretrain", "--config", &cfg, "--out", s(&r.join("pre"))]);
        let ckpt = r.join("pre/model.ckpt");
        ok(&["probe", "--config", &cfg, "--checkpoint", s(&ckpt), "--out", s(&r.join("probe"))]);
        ok(&["finetune", "--config", &cfg, "--checkpoint", s(&ckpt), "--out", s(&r.join("ft"))]);
    }
    for f in ["pre/loss_curve.csv", "pre/model.ckpt", "probe/metrics.csv", "probe/confusion.csv", "ft/metrics.csv"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    let curve = fs::read_to_string(runs[0].join("pre/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);

    // Re-running from the echoed config reproduces the run.
    let echo = runs[0].join("probe/config.txt");
    let again = dir.path().join("again");
    let ckpt = runs[0].join("pre/model.ckpt");
    ok(&["probe", "--config", s(&echo), "--checkpoint", s(&ckpt), "--out", s(&again)]);
    assert_eq!(fs::read(again.join("metrics.csv")).unwrap(), fs::read(runs[0].join("probe/metrics.csv")).unwrap());

    let report = ok(&["report", s(&runs[0].join("probe")), s(&runs[0].join("ft"))]);
    assert!(report.starts_with("run,error_rate,ri_vs_first\n"));
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn staged_pretraining_and_checkpoint_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let s1 = dir.path().join("s1");
    let s2 = dir.path().join("s2");
    ok(&["pretrain", "--config", &cfg, "--set", "train.stage=stage1-video", "--out", s(&s1)]);
    let stdout = ok(&["pretrain", "--config", &cfg, "--init", s(&s1.join("model.ckpt")), "--out", s(&s2)]);
    assert!(stdout.contains("0 re-initialized"), "{stdout}");
    let other = dasmae(&[
        "probe",
        "--config",
        &cfg,
        "--set",
        "tubes.tp=8",
        "--checkpoint",
        s(&s2.join("model.ckpt")),
        "--out",
        s(&dir.path().join("p")),
    ]);
    assert_eq!(other.status.code(), Some(2));
}

#[test]
fn embed_and_ablate_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let emb = dir.path().join("emb");
    ok(&["embed", "--config", &cfg, "--split", "all", "--out", s(&emb)]);
    for f in ["pca.csv", "tsne.csv"] {
        let csv = fs::read_to_string(emb.join(f)).unwrap();
        assert!(csv.starts_with("index,class,x,y\n"));
        assert_eq!(csv.lines().count(), 1 + 120);
    }
    let abl = dir.path().join("abl");
    ok(&["ablate", "--config", &cfg, "--axis", "mask-ratio", "--values", "0.5,0.9", "--out", s(&abl)]);
    let csv = fs::read_to_string(abl.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("mask-ratio,seed,probe_er,finetune_er,final_loss\n"));
    assert_eq!(csv.lines().count(), 1 + 4 + 2);
    let bad = dasmae(&["ablate", "--config", &cfg, "--axis", "depth", "--out", s(&abl)]);
    assert_eq!(bad.status.code(), Some(1));
}
