use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_nef-tgn");

const TINY: &str = r#"
seed = 4

[data]
kind = "synthetic"

[data.synthetic]
nodes = 20
events = 160
motif = "triadic"
strength = 0.6
seed = 9

[model]
mem_dim = 4
emb_dim = 4
time_dim = 3
neighbors = 3
pos_dim = 3
nef_time_dim = 3
rnn_hidden = 3
dropout = 0.0

[model.walk]
walks_per_node = 2
length = 1
alpha = 0.1

[train]
batch_size = 50
epochs = 1
lr = 0.01

[eval]
task = "transductive-edge"
n_runs = 1
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        let config = self.path("tiny.toml");
        let out_dir = self.path(out);
        Command::new(BIN)
            .arg("--config")
            .arg(&config)
            .arg("--out-dir")
            .arg(&out_dir)
            .args(args)
            .output()
            .unwrap()
    }
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr:\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn hash_of(o: &Output) -> String {
    let err = String::from_utf8_lossy(&o.stderr);
    err.lines().find_map(|l| l.strip_prefix("config_hash ")).expect("config hash echoed on stderr").trim().to_string()
}

#[test]
fn invalid_key_exits_one_without_artifacts() {
    let f = Fixture::new();
    let o = f.run("out", &["--set", "model.mem_dimm=8", "evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mem_dimm"));
    assert!(!f.path("out").exists());

    let o = f.run("out", &["--set", "train.epochs=many", "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!f.path("out").exists());

    let o = f.run("out", &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_two() {
    let f = Fixture::new();
    std::fs::create_dir(f.path("taken")).unwrap();
    let target = f.path("taken");
    let o = f.run("out", &["gen-synthetic", "--output", target.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_synthetic_writes_a_loadable_csv_and_id_mapping() {
    let f = Fixture::new();
    let o = f.run("gen", &["gen-synthetic"]);
    ok(&o);
    let csv = read(&f.path("gen/synthetic.csv"));
    assert_eq!(csv.lines().count(), 1 + 160);
    assert_eq!(read(&f.path("gen/synthetic.csv.ids")).lines().count(), 20);
}

#[test]
fn overrides_beat_file_values_and_train_then_export_works() {
    let f = Fixture::new();
    let o = f.run("train", &["--set", "train.epochs=2", "--seed", "5", "train"]);
    ok(&o);
    let hash = hash_of(&o);
    let cfg = read(&f.path("train/config.toml"));
    assert!(cfg.contains(&hash));
    assert!(cfg.contains("epochs = 2"), "{cfg}");
    assert!(cfg.contains("seed = 5"), "{cfg}");
    let summary: serde_json::Value = serde_json::from_str(&read(&f.path("train/train_summary.json"))).unwrap();
    assert_eq!(summary["config_hash"], hash.as_str());
    assert_eq!(summary["epochs_run"], 2);
    assert!(read(&f.path("train/history.jsonl")).lines().all(|l| l.contains(&hash)));

    let ckpt = f.path("train/checkpoint.bin");
    let emb = f.path("train/emb.csv");
    let export = |out: &Path| {
        f.run(
            "train",
            &[
                "--set",
                "train.epochs=2",
                "--seed",
                "5",
                "export-embeddings",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--nodes",
                "3,0,11",
                "--time",
                "120.5",
                "--output",
                out.to_str().unwrap(),
            ],
        )
    };
    ok(&export(&emb));
    let text = read(&emb);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
    let meta = read(&f.path("train/emb.csv.meta.json"));
    assert!(meta.contains(&hash));
    let again = f.path("train/emb2.csv");
    ok(&export(&again));
    assert_eq!(text, read(&again));

    // A different configuration cannot load the checkpoint.
    let o = f.run("train", &["export-embeddings", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    // Unknown node ids are rejected by name.
    let o = f.run(
        "train",
        &["--set", "train.epochs=2", "--seed", "5", "export-embeddings", "--checkpoint", ckpt.to_str().unwrap(), "--nodes", "3,ghost"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ghost"));
}

#[test]
fn evaluate_is_reproducible_byte_for_byte() {
    let f = Fixture::new();
    ok(&f.run("a", &["evaluate"]));
    ok(&f.run("b", &["evaluate"]));
    let (a, b) = (read(&f.path("a/report.jsonl")), read(&f.path("b/report.jsonl")));
    assert_eq!(a, b);
    assert_eq!(read(&f.path("a/report.txt")), read(&f.path("b/report.txt")));
    let last: serde_json::Value = serde_json::from_str(a.lines().last().unwrap()).unwrap();
    assert_eq!(last["record"], "config");
    assert_eq!(last["config"]["train"]["epochs"], 1);
    assert!(read(&f.path("a/report.txt")).starts_with("config_hash "));
    assert!(f.path("a/report_timings.jsonl").exists());

    // Concurrent seeds give the same report as serial ones.
    ok(&f.run("serial", &["--set", "eval.n_runs=2", "evaluate"]));
    ok(&f.run("parallel", &["--set", "eval.n_runs=2", "--parallel-seeds", "2", "evaluate"]));
    assert_eq!(read(&f.path("serial/report.jsonl")), read(&f.path("parallel/report.jsonl")));
}

#[test]
fn ablate_emits_one_row_per_toggle_combination() {
    let f = Fixture::new();
    let rows = |dir: &str| -> usize {
        read(&f.path(&format!("{dir}/ablation.jsonl"))).lines().filter(|l| l.contains("\"record\":\"summary\"")).count()
    };
    ok(&f.run("abl", &["--set", "data.synthetic.events=100", "ablate"]));
    assert_eq!(rows("abl"), 7);
    ok(&f.run("abl8", &["--set", "data.synthetic.events=100", "ablate", "--include-rnn-only"]));
    assert_eq!(rows("abl8"), 8);
}

#[test]
fn grad_check_writes_a_stamped_report() {
    let f = Fixture::new();
    let o = f.run("gc", &["grad-check", "--seeds", "1"]);
    ok(&o);
    let report = read(&f.path("gc/grad_check.txt"));
    assert!(report.starts_with(&format!("config_hash {}", hash_of(&o))));
    assert!(report.lines().skip(1).all(|l| l.ends_with("PASS")));
}
