use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fisel::checkpoint::Container;

struct Workspace {
    _tmp: tempfile::TempDir,
    out: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        Self { _tmp: tmp, out }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_fisel"))
            .args(args)
            .arg("--set")
            .arg(format!("output.dir={:?}", self.out.to_str().unwrap()))
            .args(["--set", "synth.n_samples=2000", "--set", "train.max_epochs=2"])
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn prepared() -> Self {
        let w = Self::new();
        w.ok(&["synth"]);
        w.ok(&["preprocess"]);
        w
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn pair_ratios(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn synth_writes_schema_and_descriptor() {
    let w = Workspace::new();
    w.ok(&["synth", "--seed", "4"]);
    let schema = fs::read_to_string(w.path("synth/schema.tsv")).unwrap();
    assert_eq!(schema.lines().count(), 6);
    assert!(schema.lines().all(|l| l.ends_with("\tcategorical")));
    let descriptor: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("synth/descriptor.json")).unwrap()).unwrap();
    assert_eq!(descriptor["config"]["planted_pairs"], serde_json::json!([[0, 1], [2, 3], [1, 4]]));
    assert_eq!(descriptor["config"]["seed"], 4);

    let first = fs::read(w.path("synth/data.tsv")).unwrap();
    w.ok(&["synth", "--seed", "4"]);
    assert_eq!(fs::read(w.path("synth/data.tsv")).unwrap(), first);
    w.ok(&["synth", "--seed", "5"]);
    assert_ne!(fs::read(w.path("synth/data.tsv")).unwrap(), first);
}

#[test]
fn preprocess_reports_sizes_and_is_repeatable() {
    let w = Workspace::new();
    w.ok(&["synth"]);
    let out = w.ok(&["preprocess"]);
    assert!(out.lines().any(|l| l == "n\t6"));
    let m: usize = out.lines().find_map(|l| l.strip_prefix("m\t")).unwrap().parse().unwrap();
    let per_field: Vec<usize> = out
        .lines()
        .filter_map(|l| l.strip_prefix("m_i\t"))
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(per_field.len(), 6);
    assert_eq!(per_field.iter().sum::<usize>(), m);

    let vocab = fs::read(w.path("data/vocab.tsv")).unwrap();
    w.ok(&["preprocess"]);
    assert_eq!(fs::read(w.path("data/vocab.tsv")).unwrap(), vocab);

    let raised = w.ok(&["preprocess", "--set", "data.min_count=100"]);
    let m2: usize = raised.lines().find_map(|l| l.strip_prefix("m\t")).unwrap().parse().unwrap();
    assert!(m2 <= m);
}

#[test]
fn preprocess_counts_a_wide_mixed_schema() {
    let w = Workspace::new();
    fs::create_dir_all(&w.out).unwrap();
    let mut schema = String::new();
    for i in 1..=13 {
        schema.push_str(&format!("I{i}\tnumeric\n"));
    }
    for i in 1..=26 {
        schema.push_str(&format!("C{i}\tcategorical\n"));
    }
    let mut raw = String::new();
    for r in 0..40 {
        let mut cols = vec![(r % 2).to_string()];
        cols.extend((0..13).map(|k| if (r + k) % 7 == 0 { String::new() } else { ((r * k) % 50).to_string() }));
        cols.extend((0..26).map(|k| format!("{:08x}", (r * 31 + k) % 5)));
        raw.push_str(&cols.join("\t"));
        raw.push('\n');
    }
    let schema_path = w.out.join("wide_schema.tsv");
    let raw_path = w.out.join("wide.tsv");
    fs::write(&schema_path, schema).unwrap();
    fs::write(&raw_path, raw).unwrap();
    let out = w.ok(&[
        "preprocess",
        "--set",
        &format!("data.raw={:?}", raw_path.to_str().unwrap()),
        "--set",
        &format!("data.schema={:?}", schema_path.to_str().unwrap()),
    ]);
    assert!(out.lines().any(|l| l == "n\t39"), "{out}");
}

#[test]
fn field_grain_keep_ratios_are_binary() {
    let w = Workspace::prepared();
    w.ok(&["search", "--grain", "field"]);
    let ratios = pair_ratios(&w.path("search/keep_ratio_pairs.tsv"));
    assert_eq!(ratios.len(), 15);
    assert!(ratios.iter().all(|&r| r == 0.0 || r == 1.0));
}

#[test]
fn value_grain_never_moves_alpha() {
    let w = Workspace::prepared();
    w.ok(&["search", "--grain", "value"]);
    let c = Container::load(&w.path("search/checkpoint.bin")).unwrap();
    let s = c.selection("selection").unwrap();
    assert!(s.alpha.value.as_slice().iter().all(|&a| a == 0.0));
}

#[test]
fn search_retrain_evaluate_pipeline() {
    let w = Workspace::prepared();
    w.ok(&["search"]);
    let ckpt = fs::read(w.path("search/checkpoint.bin")).unwrap();
    w.ok(&["search"]);
    assert_eq!(fs::read(w.path("search/checkpoint.bin")).unwrap(), ckpt);

    w.ok(&["retrain"]);
    let retrained = w.path("retrain/checkpoint.bin");
    let retrained = retrained.to_str().unwrap();
    let metrics = fs::read_to_string(w.path("retrain/metrics.tsv")).unwrap();
    assert!(metrics.starts_with("auc\t"));

    w.ok(&["evaluate", "--checkpoint", retrained]);
    let first = fs::read(w.path("evaluate/metrics.tsv")).unwrap();
    let grid = fs::read(w.path("evaluate/keep_ratio_grid.tsv")).unwrap();
    w.ok(&["evaluate", "--checkpoint", retrained]);
    assert_eq!(fs::read(w.path("evaluate/metrics.tsv")).unwrap(), first);
    assert_eq!(fs::read(w.path("evaluate/keep_ratio_grid.tsv")).unwrap(), grid);

    let train_len = fs::read_to_string(w.path("data/train.tsv")).unwrap().lines().count();
    let out = w.ok(&["evaluate", "--checkpoint", retrained, "--split", "train"]);
    assert!(out.contains(&format!("n {train_len}")), "{out}");
    let metrics = fs::read_to_string(w.path("evaluate/metrics.tsv")).unwrap();
    assert!(metrics.contains(&format!("n_samples\t{train_len}")));
}

#[test]
fn baseline_writes_reports() {
    let w = Workspace::prepared();
    let out = w.ok(&["baseline"]);
    assert!(out.contains("test auc"));
    let history = fs::read_to_string(w.path("baseline/history.tsv")).unwrap();
    assert!(history.lines().any(|l| l.starts_with("1\ttrain\t")));
    assert!(history.lines().any(|l| l.starts_with("2\tval\t")));
}

#[test]
fn retrain_needs_a_search_checkpoint() {
    let w = Workspace::prepared();
    let o = w.run(&["retrain"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint.bin"));
}

#[test]
fn evaluate_rejects_mismatched_and_corrupt_checkpoints() {
    let w = Workspace::prepared();
    w.ok(&["baseline"]);
    let ckpt = w.path("baseline/checkpoint.bin");

    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let corrupt = w.out.join("corrupt.bin");
    fs::write(&corrupt, bytes).unwrap();
    assert_eq!(code(&w.run(&["evaluate", "--checkpoint", corrupt.to_str().unwrap()])), 3);

    w.ok(&["synth", "--set", "synth.n_fields=5", "--set", "synth.planted_pairs=[[0,1]]"]);
    w.ok(&["preprocess"]);
    let o = w.run(&["evaluate", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n=6"));
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let w = Workspace::new();
    assert_eq!(code(&w.run(&["search", "--set", "train.lr_modle=0.1"])), 1);
    assert_eq!(code(&w.run(&["search", "--set", "train.mode=retrain"])), 1);
    assert_eq!(code(&w.run(&["nonsense"])), 1);
    assert_eq!(code(&w.run(&["search", "--grain", "coarse"])), 1);

    let cfg = w._tmp.path().join("bad.toml");
    fs::write(&cfg, "[model]\nd = 4\nwidth = 3\n").unwrap();
    assert_eq!(code(&w.run(&["synth", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn config_file_and_overrides_combine() {
    let w = Workspace::new();
    let cfg = w._tmp.path().join("run.toml");
    fs::write(&cfg, "[synth]\nn_fields = 4\nplanted_pairs = [[0, 1]]\n").unwrap();
    w.ok(&["synth", "--config", cfg.to_str().unwrap()]);
    w.ok(&["preprocess", "--config", cfg.to_str().unwrap()]);
    let schema = fs::read_to_string(w.path("synth/schema.tsv")).unwrap();
    assert_eq!(schema.lines().count(), 4);
}
