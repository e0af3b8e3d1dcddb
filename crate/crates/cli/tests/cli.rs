use std::path::PathBuf;
use std::process::{Command, Output};

const SMALL: &str = "\
target_relations = rule0,rule1,rule2
max_paths_per_pair = 6
d_r = 6
d_pe = 2
d_dir = 2
d_h = 6
d_a = 5
extractor_hidden = 8
d_f = 6
batch_size = 10
pretrain_epochs = 2
disc_pretrain_epochs = 1
epochs = 2
eval_chunk = 16
";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// Synthetic data and a prepared cache under a fresh directory.
    fn prepared() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(ws.path("run.cfg"), SMALL).unwrap();
        ws.ok(&["synth", "--entities", "60", "--triples-per-base", "70"]);
        ws.ok(&["prepare"]);
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn command(&self, args: &[&str]) -> Command {
        self.command_with("run.cfg", args)
    }

    fn command_with(&self, config: &str, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_kbc"));
        cmd.env_clear()
            .env("RUST_LOG", "error")
            .current_dir(self.dir.path())
            .args(["--config", config])
            .args(args);
        cmd
    }

    fn run(&self, args: &[&str]) -> Output {
        self.command(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_one_line_error(out: &Output, needle: &str) {
    assert!(!out.status.success());
    let err = stderr(out);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: ") && err.contains(needle), "{err}");
}

#[test]
fn pipeline_writes_every_artifact() {
    let ws = Workspace::prepared();
    ws.ok(&["train"]);
    ws.ok(&["eval", "--split", "test"]);
    ws.ok(&["export-attention", "--split", "test"]);
    ws.ok(&["export-features", "--split", "test", "--k", "2"]);
    for f in [
        "out/effective.cfg",
        "out/model.ckpt",
        "out/train_log.csv",
        "out/pretrain_train_log.csv",
        "out/discriminator_train_log.csv",
        "out/epochs.csv",
        "out/report_test.json",
        "out/rankings_test.tsv",
        "out/attention.tsv",
        "out/pca_eigenvalues.json",
        "out/vectors_relation_code.tsv",
        "out/pca_path_feature.tsv",
        "cache/summary.json",
        "data/rules.json",
    ] {
        assert!(ws.path(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_slice(&ws.read("out/report_test.json")).unwrap();
    let mr = report["overall"]["mean_rank"].as_f64().unwrap();
    assert!((1.0..=3.0).contains(&mr), "{mr}");
    let pca = String::from_utf8(ws.read("out/pca_path_feature.tsv")).unwrap();
    assert!(pca.lines().next().unwrap().ends_with("pc1\tpc2"));
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let ws = Workspace::prepared();
    let out = ws.ok(&["train", "--epochs", "0"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("iteration 0"));
    assert!(ws.path("out/model.ckpt").is_file());
    assert!(!ws.path("out/train_log.csv").exists());
    assert!(!ws.path("out/pretrain_train_log.csv").exists());
    assert!(!ws.path("out/epochs.csv").exists());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let ws = Workspace::prepared();
    let files = [
        "model.ckpt",
        "pretrain_train_log.csv",
        "discriminator_train_log.csv",
        "train_log.csv",
        "epochs.csv",
    ];
    ws.ok(&["--out", "full", "train"]);
    ws.ok(&["--out", "split", "train", "--epochs", "2"]);
    ws.ok(&["--out", "split", "train", "--epochs", "1", "--resume"]);
    ws.ok(&["--out", "split", "train", "--resume"]);
    for f in files {
        assert_eq!(ws.read(&format!("split/{f}")), ws.read(&format!("full/{f}")), "{f}");
    }
}

#[test]
fn effective_config_reproduces_the_run() {
    let ws = Workspace::prepared();
    ws.ok(&["--seed", "4", "train"]);
    ws.ok(&["--seed", "4", "eval"]);
    // The echo records the seed override, so no flag is needed to repeat it.
    for verb in ["train", "eval"] {
        let out = ws
            .command_with("out/effective.cfg", &["--out", "again", verb])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(ws.read("again/report_test.json"), ws.read("out/report_test.json"));
    assert_eq!(ws.read("again/model.ckpt"), ws.read("out/model.ckpt"));
}

#[test]
fn missing_data_dir_is_a_one_line_error_naming_the_path() {
    let ws = Workspace {
        dir: tempfile::tempdir().unwrap(),
    };
    std::fs::write(ws.path("run.cfg"), "data_dir = no/such/kb\n").unwrap();
    assert_one_line_error(&ws.run(&["prepare"]), "no/such/kb");
}

#[test]
fn unknown_config_key_is_rejected() {
    let ws = Workspace {
        dir: tempfile::tempdir().unwrap(),
    };
    std::fs::write(ws.path("run.cfg"), "d_r = 4\nlearning_rate = 0.1\n").unwrap();
    assert_one_line_error(&ws.run(&["prepare"]), "learning_rate");
    std::fs::write(ws.path("run.cfg"), "d_r = four\n").unwrap();
    assert_one_line_error(&ws.run(&["prepare"]), "run.cfg:1");
}

#[test]
fn environment_overrides_the_config_file() {
    let ws = Workspace::prepared();
    let out = ws
        .command(&["prepare"])
        .env("KBC_MAX_PATHS_PER_PAIR", "0")
        .output()
        .unwrap();
    assert_one_line_error(&out, "max_paths_per_pair");
}

#[test]
fn unknown_pair_is_rejected() {
    let ws = Workspace::prepared();
    ws.ok(&["train", "--epochs", "0"]);
    assert_one_line_error(
        &ws.run(&["export-attention", "--pair", "0,999999"]),
        "unknown pair 999999",
    );
    ws.ok(&["export-attention", "--pair", "0,1"]);
    let tsv = String::from_utf8(ws.read("out/attention.tsv")).unwrap();
    let ids: std::collections::BTreeSet<&str> = tsv.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids.into_iter().collect::<Vec<_>>(), ["0", "1"]);
}

#[test]
fn checkpoint_from_other_vocabulary_is_rejected() {
    let ws = Workspace::prepared();
    ws.ok(&["train", "--epochs", "0"]);
    // Same relation count, different names.
    let triples = String::from_utf8(ws.read("data/triples.tsv")).unwrap();
    std::fs::create_dir(ws.path("renamed")).unwrap();
    std::fs::write(ws.path("renamed/triples.tsv"), triples.replace("base", "link")).unwrap();
    let with_renamed = |args: &[&str]| {
        ws.command(args)
            .env("KBC_DATA_DIR", "renamed")
            .env("KBC_CACHE_DIR", "renamed_cache")
            .env("KBC_CHECKPOINT", "out/model.ckpt")
            .output()
            .unwrap()
    };
    assert!(with_renamed(&["prepare"]).status.success());
    assert_one_line_error(&with_renamed(&["eval"]), "vocabulary mismatch");
}

#[test]
fn missing_checkpoint_names_the_file() {
    let ws = Workspace::prepared();
    assert_one_line_error(&ws.run(&["eval"]), "model.ckpt");
    assert!(!ws.path("out/report_test.json").exists());
}
