use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dual_nlu::corpus::{load_labeled, write_labeled};
use dual_nlu::synthetic;

const BIN: &str = env!("CARGO_BIN_EXE_dualnlu");

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic").join(format!("{name}.txt"))
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("DUALNLU_SEED").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A small train/valid/test triple cut from the bundled corpus, plus a tiny config.
fn fixture(dir: &Path, regime: &str) -> PathBuf {
    let take = |name: &str, n: usize| {
        let mut v = load_labeled(bundled(name)).unwrap();
        v.truncate(n);
        let p = dir.join(format!("{name}.txt"));
        write_labeled(&p, &v).unwrap();
        p
    };
    let (train, valid, test) = (take("train", 40), take("valid", 10), take("test", 10));
    let cfg = dir.join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "train = {}\nvalid = {}\ntest = {}\nregime = {regime}\nratio = 0.5\nseed = 3\n\
             embed_dim = 8\nhidden = 8\ntag_embed_dim = 4\nintent_dim = 4\nmax_len = 20\n\
             epochs = 2\npl_iterations = 1\ndual_epochs = 1\nbeam_k = 2\nlm_epochs = 1\nlr = 0.01\n",
            train.display(),
            valid.display(),
            test.display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn bundled_corpus_matches_generator() {
    let (train, valid, test) = synthetic::splits(2000, 1);
    assert_eq!(load_labeled(bundled("train")).unwrap(), train);
    assert_eq!(load_labeled(bundled("valid")).unwrap(), valid);
    assert_eq!(load_labeled(bundled("test")).unwrap(), test);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
}

#[test]
fn config_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = red\nratio = 3\n").unwrap();
    let o = run(&["prepare", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("colour") && err.contains("ratio"), "{err}");

    let missing = dir.path().join("nope.txt");
    let o = run(&["prepare", "-s", &format!("train={}", missing.display()), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn prepare_writes_partitions_and_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), "supervised");
    let out = dir.path().join("out");
    let o = run(&["prepare", "--config", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("labeled\t20"));
    for f in ["data/labeled.txt", "data/unlabeled.txt", "data/forms.txt", "vocab/words.tsv", "manifest.prepare.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn combined_smoke_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), "combined");
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["train", "--config", cfg, "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let log_a = fs::read(a.join("metrics.log")).unwrap();
    assert_eq!(log_a, fs::read(b.join("metrics.log")).unwrap());
    assert_eq!(fs::read(a.join("report.tsv")).unwrap(), fs::read(b.join("report.tsv")).unwrap());

    let text = String::from_utf8(log_a).unwrap();
    let mut phases: Vec<&str> = Vec::new();
    for line in text.lines() {
        let p = line.split('\t').next().unwrap();
        if phases.last() != Some(&p) {
            phases.push(p);
        }
    }
    assert_eq!(phases, ["pretrain", "dual-pl", "dual-learning"]);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.train.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["regime"], "combined");
    assert_eq!(manifest["data_hashes"].as_object().unwrap().len(), 2);

    let report = fs::read_to_string(a.join("report.tsv")).unwrap();
    let o = run(&["eval", "--config", cfg, "-o", a.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(a.join("report.tsv")).unwrap(), report);

    let forms = a.join("data/forms.txt");
    let o = run(&["generate", "--config", cfg, "-o", a.to_str().unwrap(), "--input", forms.to_str().unwrap(), "--beam", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = stdout(&o).lines().count();
    assert!(lines > 0 && lines <= 2 * fs::read_to_string(&forms).unwrap().lines().count());

    let c = a.join("correctness.tsv");
    let o = run(&["significance", c.to_str().unwrap(), c.to_str().unwrap(), "--column", "slots"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("p_value\t1.000000"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("train = {}\nratio = 0.1\n", bundled("valid").display())).unwrap();
    let prepare = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = Command::new(BIN)
            .args(["prepare", "--config", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()])
            .env("DUALNLU_SEED", seed)
            .output()
            .unwrap();
        assert!(o.status.success());
        fs::read(out.join("data/labeled.txt")).unwrap()
    };
    assert_eq!(prepare("5", "x"), prepare("5", "y"));
    assert_ne!(prepare("5", "x"), prepare("6", "z"));
}
