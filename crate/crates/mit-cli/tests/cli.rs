//! End-to-end tests of the `mit` binary: artifact layout, determinism,
//! and the exit-code contract (0 ok, 1 runtime/IO, 2 usage/config).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn mit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mit"))
}

fn run(args: &[&str]) -> Output {
    mit().args(args).output().expect("spawn mit")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const TINY_SEG: &str = r#"{
  "task": {"task": "seg"},
  "train": {"epochs": 2, "batch": 4, "seed": 7, "test_frac": 0.25},
  "data": {"n": 8, "seed": 7}
}"#;

fn gen(task: &str, n: u32, seed: u64, out: &Path) {
    let out_s = out.to_string_lossy().into_owned();
    let o = run(&[
        "gen-data",
        "--task",
        task,
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        &out_s,
    ]);
    assert_exit(&o, 0);
}

#[test]
fn gen_data_is_deterministic_across_runs() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen("cls", 12, 11, &a);
    gen("cls", 12, 11, &b);
    let ma = fs::read_to_string(a.join("manifest.json")).unwrap();
    let mb = fs::read_to_string(b.join("manifest.json")).unwrap();
    assert_eq!(ma, mb, "manifests (incl. checksum) must match for equal seeds");
    assert_eq!(
        fs::read(a.join("samples.bin")).unwrap(),
        fs::read(b.join("samples.bin")).unwrap()
    );
    let manifest: serde_json::Value = serde_json::from_str(&ma).unwrap();
    assert_eq!(manifest["task"], "cls");
    assert_eq!(manifest["n"], 12);
    assert_eq!(manifest["seed"], 11);
}

#[test]
fn gen_data_rejects_unknown_task() {
    let tmp = TempDir::new().unwrap();
    let out_s = tmp.path().join("d").to_string_lossy().into_owned();
    let o = run(&["gen-data", "--task", "bogus", "--n", "4", "--out", &out_s]);
    assert_exit(&o, 2);
}

#[test]
fn train_writes_run_artifacts_and_eval_reads_them() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen("seg", 8, 7, &data);
    let cfg = write_config(tmp.path(), TINY_SEG);
    let run_dir = tmp.path().join("run");
    let run_s = run_dir.to_string_lossy().into_owned();
    let data_s = data.to_string_lossy().into_owned();

    let o = run(&["train", "--config", &cfg, "--data", &data_s, "--out", &run_s]);
    assert_exit(&o, 0);
    for f in [
        "checkpoint.json",
        "checkpoint.bin",
        "history.csv",
        "resolved-config.json",
        "trainable_report.json",
    ] {
        assert!(run_dir.join(f).is_file(), "missing artifact {f}");
    }
    let hist = fs::read_to_string(run_dir.join("history.csv")).unwrap();
    // Header plus one row per epoch.
    assert_eq!(hist.lines().count(), 3, "history: {hist}");
    assert!(hist.starts_with("epoch,lr,train_loss"));

    // The echoed config must itself be loadable (round-trips through train).
    let echoed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("resolved-config.json")).unwrap())
            .unwrap();
    assert_eq!(echoed["task"]["task"], "seg");
    assert_eq!(echoed["task"]["schema"], "task_token");
    assert_eq!(echoed["train"]["epochs"], 2);

    let eval_dir = tmp.path().join("evalout");
    let eval_s = eval_dir.to_string_lossy().into_owned();
    let o = run(&["eval", "--run", &run_s, "--data", &data_s, "--out", &eval_s]);
    assert_exit(&o, 0);
    let metrics = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(metrics.contains("dice"), "metrics: {metrics}");
    assert!(eval_dir.join("mask-000-pred.pgm").is_file(), "seg eval renders masks");
    assert!(eval_dir.join("mask-000-true.pgm").is_file());
}

#[test]
fn train_rejects_task_mismatched_dataset() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen("msa", 8, 7, &data);
    let cfg = write_config(tmp.path(), TINY_SEG);
    let o = run(&[
        "train",
        "--config",
        &cfg,
        "--data",
        &data.to_string_lossy(),
        "--out",
        &tmp.path().join("run").to_string_lossy(),
    ]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("task"), "stderr: {}", stderr(&o));
}

#[test]
fn train_missing_data_dir_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY_SEG);
    let o = run(&[
        "train",
        "--config",
        &cfg,
        "--data",
        &tmp.path().join("nosuch").to_string_lossy(),
        "--out",
        &tmp.path().join("run").to_string_lossy(),
    ]);
    assert_exit(&o, 1);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"task": {"task": "seg", "flavor": "ripe"}}"#);
    let data = tmp.path().join("data");
    gen("seg", 8, 7, &data);
    let o = run(&[
        "train",
        "--config",
        &cfg,
        "--data",
        &data.to_string_lossy(),
        "--out",
        &tmp.path().join("run").to_string_lossy(),
    ]);
    assert_exit(&o, 2);
    assert!(stderr(&o).contains("flavor"), "stderr: {}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_fails_naming_the_tensor() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen("seg", 8, 7, &data);
    let cfg = write_config(tmp.path(), TINY_SEG);
    let run_dir = tmp.path().join("run");
    let o = run(&[
        "train",
        "--config",
        &cfg,
        "--data",
        &data.to_string_lossy(),
        "--out",
        &run_dir.to_string_lossy(),
    ]);
    assert_exit(&o, 0);

    let bin = run_dir.join("checkpoint.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes[40] ^= 0x01;
    fs::write(&bin, &bytes).unwrap();

    let o = run(&["eval", "--run", &run_dir.to_string_lossy(), "--data", &data.to_string_lossy()]);
    assert_exit(&o, 1);
    let err = stderr(&o);
    assert!(err.contains("corrupt") && err.contains("'"), "stderr: {err}");
}

#[test]
fn gradcheck_passes_on_the_toy_preset() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY_SEG);
    let o = run(&["gradcheck", "--config", &cfg, "--max-per-tensor", "1"]);
    assert_exit(&o, 0);
    assert!(stdout(&o).contains("PASS"), "stdout: {}", stdout(&o));
}

#[test]
fn cost_emits_csv_and_slope_fits() {
    let o = run(&["cost", "--sweep", "L=32..128"]);
    assert_exit(&o, 0);
    let out = stdout(&o);
    assert!(out.starts_with("mode,L_tok,P,attn_elems,overhead_flops,peak_floats"));
    // Three modes per sweep point (32, 64, 128).
    assert_eq!(out.lines().filter(|l| !l.starts_with('#') && !l.starts_with("mode")).count(), 9);
    assert!(out.contains("# slope mit_token_dependent_overhead = 1.0"), "{out}");
    assert!(out.contains("# slope prefix_attn_map = 2.0"), "{out}");
    assert!(out.contains("# attn_map mit == base at every L: true"), "{out}");
}

#[test]
fn cost_rejects_a_malformed_sweep() {
    let o = run(&["cost", "--sweep", "tokens=32..64"]);
    assert_exit(&o, 2);
}

#[test]
fn ablate_covers_every_switch_combination() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
          "task": {"task": "seg"},
          "train": {"epochs": 1, "batch": 4, "seed": 7, "test_frac": 0.25},
          "data": {"n": 8, "seed": 7}
        }"#,
    );
    let out_dir = tmp.path().join("abl");
    let o = run(&["ablate", "--config", &cfg, "--out", &out_dir.to_string_lossy()]);
    assert_exit(&o, 0);
    let csv = fs::read_to_string(out_dir.join("ablate.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("1,1,1,1"), "row 0 is the all-on run: {}", rows[0]);
    assert!(csv.contains("rescale off (needs kv)"));
    assert!(csv.contains("no infusion"));
    // kv=ff=off rows carry zero infusion parameters.
    for row in rows.iter().filter(|r| r.starts_with("0,0")) {
        let infusion: u64 = row.split(',').nth(5).unwrap().parse().unwrap();
        assert_eq!(infusion, 0, "row: {row}");
    }
}

#[test]
fn schema_sweep_compares_both_schemas_per_length() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
          "task": {"task": "cls"},
          "train": {"epochs": 1, "batch": 4, "seed": 7, "test_frac": 0.25},
          "data": {"n": 8, "seed": 7}
        }"#,
    );
    let out_dir = tmp.path().join("ss");
    let o = run(&[
        "schema-sweep",
        "--config",
        &cfg,
        "--lengths",
        "48..96",
        "--out",
        &out_dir.to_string_lossy(),
    ]);
    assert_exit(&o, 0);
    let csv = fs::read_to_string(out_dir.join("schema_sweep.csv")).unwrap();
    assert!(csv.starts_with("schema,len,n_train,n_test,accuracy"));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "two schemas at two feasible lengths: {csv}");
    assert!(rows.iter().any(|r| r.starts_with("last_token,48")));
    assert!(rows.iter().any(|r| r.starts_with("task_token,48")));
    assert!(rows.iter().any(|r| r.starts_with("last_token,96")));
    assert!(rows.iter().any(|r| r.starts_with("task_token,96")));
}

#[test]
fn schema_sweep_rejects_non_cls_tasks() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY_SEG);
    let o = run(&[
        "schema-sweep",
        "--config",
        &cfg,
        "--lengths",
        "48..96",
        "--out",
        &tmp.path().join("ss").to_string_lossy(),
    ]);
    assert_exit(&o, 2);
}

#[test]
fn mit_threads_must_be_a_positive_integer() {
    for bad in ["banana", "0", "-3"] {
        let o = mit()
            .args(["cost", "--sweep", "L=32..64"])
            .env("MIT_THREADS", bad)
            .output()
            .unwrap();
        assert_exit(&o, 2);
        assert!(stderr(&o).contains("MIT_THREADS"), "stderr: {}", stderr(&o));
    }
    let o = mit()
        .args(["cost", "--sweep", "L=32..64"])
        .env("MIT_THREADS", "4")
        .output()
        .unwrap();
    assert_exit(&o, 0);
}

#[test]
fn identical_seeds_give_bit_identical_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen("seg", 8, 7, &data);
    let cfg = write_config(tmp.path(), TINY_SEG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = run(&[
            "train",
            "--config",
            &cfg,
            "--data",
            &data.to_string_lossy(),
            "--out",
            &dir.to_string_lossy(),
        ]);
        assert_exit(&o, 0);
    }
    assert_eq!(
        fs::read(a.join("checkpoint.bin")).unwrap(),
        fs::read(b.join("checkpoint.bin")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(a.join("checkpoint.json")).unwrap(),
        fs::read_to_string(b.join("checkpoint.json")).unwrap()
    );
}
