use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus.smi")
}

const TINY: &[&str] = &[
    "--set", "model.d_emb=8",
    "--set", "model.d_h=16",
    "--set", "pretrain.epochs=1",
    "--set", "collect.width=6",
    "--set", "collect.max_tokens=24",
    "--set", "sft.epochs=1",
    "--set", "rl.iterations=1",
    "--set", "rl.batch_size=2",
    "--set", "rl.minibatch_size=1",
    "--set", "rl.value_warmup=1",
    "--set", "rl.max_tokens=24",
    "--set", "rl.k=2",
    "--set", "decode.max_tokens=24",
    "--set", "eval.k=4",
];

fn divmol(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_divmol"));
    cmd.args(args);
    if !matches!(args.first(), Some(&"compare")) {
        cmd.arg("--corpus").arg(corpus()).arg("--output-dir").arg(dir).args(TINY);
    }
    cmd.env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    for phase in ["ingest", "pretrain", "collect", "sft", "rl"] {
        ok(&divmol(dir.path(), &[phase]));
    }
    ok(&divmol(dir.path(), &["generate", "--policy", "rl"]));
    ok(&divmol(dir.path(), &["evaluate", "--policy", "rl"]));
    ok(&divmol(dir.path(), &["generate", "--policy", "sft", "--scheme", "beam"]));
    ok(&divmol(dir.path(), &["evaluate", "--policy", "sft", "--scheme", "beam"]));
    let out_prefix = dir.path().join("cmp");
    let out = divmol(
        dir.path(),
        &[
            "compare",
            "rl_ours",
            "sft_beam",
            "--output-dir",
            dir.path().to_str().unwrap(),
            "--out",
            out_prefix.to_str().unwrap(),
        ],
    );
    ok(&out);
    let csv = std::fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    assert!(csv.starts_with("metric,method,mean,median,delta_median,wins\n"));
    assert!(csv.contains("intdiv,sft_beam,"));
    assert!(dir.path().join("cmp.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(divmol(dir.path(), &["ingest", "--set", "rl.clipp=0.3"]).status.code(), Some(2));
    assert_eq!(divmol(dir.path(), &["ingest", "--set", "reward.beta=-1"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = \"x\"\n").unwrap();
    assert_eq!(divmol(dir.path(), &["ingest", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(divmol(dir.path(), &["nonsense"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(divmol(dir.path(), &["sft"]).status.code(), Some(3));
    let small = dir.path().join("small.smi");
    std::fs::write(&small, "CCO\nc1ccccc1\nC(\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_divmol"))
        .args(["ingest", "--corpus", small.to_str().unwrap(), "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn numerical_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    ok(&divmol(dir.path(), &["ingest"]));
    let out = divmol(dir.path(), &["pretrain", "--set", "pretrain.learning_rate=1e300"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn toml_config_file_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "seed = 4\n[prompts.plan]\neval_count = 6\neval_holdout_count = 2\n").unwrap();
    ok(&divmol(dir.path(), &["ingest", "--config", cfg.to_str().unwrap()]));
    let prompts = std::fs::read_to_string(dir.path().join("prompts.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&prompts).unwrap();
    assert_eq!(v["eval"].as_array().unwrap().len(), 6);
}
