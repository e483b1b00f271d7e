mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::write_corpus;
use fskws::synthetic::MockCorpus;
use fskws::trainer::Checkpoint;
use fskws::wav;

const TINY: &str = r#"
[synth]
core_speaker_threshold = 20
silence_clips = 30

[train]
epochs = 1
train_episodes_per_epoch = 2
val_episodes_per_epoch = 1
test_episodes = 2
train_queries_per_class = 2
eval_queries_per_class = 2
k_shot = 2
"#;

fn fskws(args: &[&str], data_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fskws"));
    cmd.args(args).env_remove("FSKWS_DATA_DIR").env_remove("RUST_LOG");
    if let Some(d) = data_dir {
        cmd.env("FSKWS_DATA_DIR", d);
    }
    cmd.output().unwrap()
}

fn check(out: &Output, code: i32) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(code), "stderr: {stderr}");
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&dir.path().join("corpus"), &MockCorpus::default());
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.p(rel).display().to_string()
    }
}

/// synth, train and eval into `tag`-prefixed outputs; returns (checkpoint, csv) bytes.
fn pipeline(s: &Setup, tag: &str) -> (Vec<u8>, Vec<u8>) {
    let cfg = s.s("tiny.toml");
    let out = s.s(&format!("{tag}-data"));
    check(&fskws(&["synth", "--input", &s.s("corpus"), "--output", &out, "--seed", "4", "--config", &cfg], None), 0);
    let manifest = format!("{out}/manifest.jsonl");
    let ckpt = s.s(&format!("{tag}.ckpt"));
    let stdout = check(
        &fskws(
            &["train", "--manifest", &manifest, "--arch", "tc-resnet8", "--case", "b", "--seed", "8", "--k-shot", "1", "--checkpoint", &ckpt, "--config", &cfg],
            None,
        ),
        0,
    );
    assert!(stdout.contains("best epoch 0"), "{stdout}");
    let csv = s.s(&format!("{tag}.csv"));
    let stdout = check(
        &fskws(&["eval", "--checkpoint", &ckpt, "--manifest", &manifest, "--k-shot-sweep", "1,2", "--output", &csv], None),
        0,
    );
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    (fs::read(&ckpt).unwrap(), fs::read(&csv).unwrap())
}

#[test]
fn end_to_end_is_reproducible() {
    let s = Setup::new();
    let (ckpt_a, csv_a) = pipeline(&s, "a");
    let (ckpt_b, csv_b) = pipeline(&s, "b");
    assert_eq!(ckpt_a, ckpt_b);
    assert_eq!(csv_a, csv_b);

    let ckpt = Checkpoint::from_bytes(&ckpt_a).unwrap();
    let cfg = &ckpt.train_config;
    assert_eq!((cfg.seed, cfg.k_shot, cfg.epochs, cfg.train_queries_per_class), (8, 1, 1, 2));
    assert_eq!(cfg.arch.name(), "tc-resnet8");

    let csv = String::from_utf8(csv_a).unwrap();
    let mut lines = csv.lines();
    let prov: serde_json::Value = serde_json::from_str(lines.next().unwrap().strip_prefix("# ").unwrap()).unwrap();
    assert_eq!(prov["seed"], 8);
    assert_eq!(prov["manifest_synthesis_seed"], 4);
    assert_eq!(prov["config"]["case"], "b");
    assert!(lines.next().unwrap().starts_with("case,architecture,n_way,k_shot"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("b,tc-resnet8,2,1,") && rows[1].starts_with("b,tc-resnet8,2,2,"), "{rows:?}");

    let log = fs::read_to_string(s.p("a.ckpt.log.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["config"]["seed"], 8);
    assert_eq!(records[1]["epoch"], 0);
    assert!(records[1]["val_acc"].is_number());

    // Re-evaluating the same checkpoint with the same seed is idempotent.
    let again = s.s("a-again.csv");
    check(
        &fskws(
            &["eval", "--checkpoint", &s.s("a.ckpt"), "--manifest", &s.s("a-data/manifest.jsonl"), "--k-shot-sweep", "2,1", "--output", &again],
            None,
        ),
        0,
    );
    assert_eq!(fs::read_to_string(&again).unwrap(), csv);

    // CSV goes to standard output when no file is given.
    let out = check(
        &fskws(&["eval", "--checkpoint", &s.s("a.ckpt"), "--manifest", &s.s("a-data/manifest.jsonl"), "--episodes", "1"], None),
        0,
    );
    assert!(out.starts_with("# {"), "{out}");
}

#[test]
fn data_dir_supplies_defaults() {
    let s = Setup::new();
    let corpus = s.p("corpus");
    let cfg = s.s("tiny.toml");
    let out = check(&fskws(&["synth", "--config", &cfg], Some(&corpus)), 0);
    assert!(out.contains("manifest:"), "{out}");
    assert!(corpus.join("manifest.jsonl").is_file());
    let ckpt = s.s("d.ckpt");
    check(&fskws(&["train", "--checkpoint", &ckpt, "--config", &cfg], Some(&corpus)), 0);
    check(&fskws(&["eval", "--checkpoint", &ckpt, "--episodes", "1"], Some(&corpus)), 0);

    // Without the variable the manifest has to be named.
    let out = fskws(&["train", "--checkpoint", &ckpt, "--config", &cfg], None);
    check(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("FSKWS_DATA_DIR"));
}

#[test]
fn usage_and_data_errors_exit_2() {
    let s = Setup::new();
    let cfg = s.s("tiny.toml");
    check(&fskws(&["synth", "--input", &s.s("corpus"), "--output", &s.s("data"), "--config", &cfg], None), 0);
    let manifest = s.s("data/manifest.jsonl");

    let out = fskws(&["train", "--manifest", &manifest, "--arch", "resnet50"], None);
    check(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("td-resnet7"));
    check(&fskws(&["train", "--manifest", &manifest, "--case", "e"], None), 2);
    check(&fskws(&["frobnicate"], None), 2);

    fs::write(s.p("typo.toml"), "[train]\nepochz = 3\n").unwrap();
    let out = fskws(&["train", "--manifest", &manifest, "--config", &s.s("typo.toml")], None);
    check(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    fs::write(s.p("section.toml"), "[trian]\nepochs = 3\n").unwrap();
    check(&fskws(&["train", "--manifest", &manifest, "--config", &s.s("section.toml")], None), 2);

    check(&fskws(&["train", "--manifest", &s.s("absent.jsonl"), "--config", &cfg], None), 2);
    // Only two test keywords exist, so a 3-way evaluation lacks data.
    check(&fskws(&["train", "--manifest", &manifest, "--checkpoint", &s.s("m.ckpt"), "--config", &cfg], None), 0);
    check(&fskws(&["eval", "--checkpoint", &s.s("m.ckpt"), "--manifest", &manifest, "--n-way", "3"], None), 2);
    check(&fskws(&["eval", "--checkpoint", &s.s("absent.ckpt"), "--manifest", &manifest], None), 2);
    fs::write(s.p("junk.ckpt"), b"not a checkpoint").unwrap();
    check(&fskws(&["eval", "--checkpoint", &s.s("junk.ckpt"), "--manifest", &manifest], None), 2);

    fs::remove_dir_all(s.p("corpus/_background_noise_")).unwrap();
    check(&fskws(&["synth", "--input", &s.s("corpus"), "--output", &s.s("data2"), "--config", &cfg], None), 2);
}

#[test]
fn diverging_training_exits_3() {
    let s = Setup::new();
    let cfg = s.s("tiny.toml");
    check(&fskws(&["synth", "--input", &s.s("corpus"), "--output", &s.s("data"), "--config", &cfg], None), 0);
    fs::write(s.p("hot.toml"), format!("{TINY}initial_lr = 1e38\ntrain_episodes_per_epoch = 6\n").replace(
        "train_episodes_per_epoch = 2\n",
        "",
    ))
    .unwrap();
    let out = fskws(
        &["train", "--manifest", &s.s("data/manifest.jsonl"), "--checkpoint", &s.s("h.ckpt"), "--config", &s.s("hot.toml")],
        None,
    );
    check(&out, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss"));
}

#[test]
fn classify_ranks_user_keywords() {
    let s = Setup::new();
    let cfg = s.s("tiny.toml");
    check(&fskws(&["synth", "--input", &s.s("corpus"), "--output", &s.s("data"), "--config", &cfg], None), 0);
    let ckpt = s.s("c.ckpt");
    check(&fskws(&["train", "--manifest", &s.s("data/manifest.jsonl"), "--checkpoint", &ckpt, "--config", &cfg], None), 0);

    let support = s.p("support");
    let mut files: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for kw in ["core00", "core05"] {
        let mut f: Vec<PathBuf> = fs::read_dir(s.p(&format!("corpus/{kw}")))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| !p.file_name().unwrap().to_string_lossy().starts_with("short"))
            .collect();
        f.sort();
        fs::create_dir_all(support.join(kw)).unwrap();
        // one clip for the second keyword exercises the single-shot path
        let shots = if kw == "core00" { 3 } else { 1 };
        for p in &f[..shots] {
            fs::copy(p, support.join(kw).join(p.file_name().unwrap())).unwrap();
        }
        files.push((kw.to_string(), f));
    }
    let query = files[1].1[5].display().to_string();
    let out = check(&fskws(&["classify", "--checkpoint", &ckpt, "--support", &support.display().to_string(), "--query", &query], None), 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    assert!(lines[0].starts_with("prediction: "));
    let probs: Vec<f64> = lines[1..].iter().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 2e-4);
    assert!(probs[0] >= probs[1]);

    let short = s.p("short.wav");
    wav::write_clip(&short, &fskws::numeric::audio::AudioClip::new(vec![0.0; 8000])).unwrap();
    let sup = support.display().to_string();
    check(&fskws(&["classify", "--checkpoint", &ckpt, "--support", &sup, "--query", &short.display().to_string()], None), 2);
    fs::create_dir(support.join("empty")).unwrap();
    check(&fskws(&["classify", "--checkpoint", &ckpt, "--support", &sup, "--query", &query], None), 2);
    let nothing = s.p("nothing");
    fs::create_dir(&nothing).unwrap();
    check(&fskws(&["classify", "--checkpoint", &ckpt, "--support", &nothing.display().to_string(), "--query", &query], None), 2);
}
