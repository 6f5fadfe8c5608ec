//! The artifact pipeline: gen-data, train, eval and gradcheck, plus the
//! error-to-exit-code split shared by every command (exit 1 runtime/IO,
//! exit 2 usage/config).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mit_core::gradcheck::{check_gradients, GradCheckConfig};
use mit_core::heads::Task;
use mit_core::params::{Bound, ParamSet};
use mit_core::pipeline::{EvalReport, Pipeline, PipelineError, TaskData};
use mit_core::rng::SplitMix64;
use mit_core::synth::SEG_IMG;
use mit_core::tensor::Graph;
use mit_core::train::TrainError;

use crate::ckpt::{load_checkpoint, save_checkpoint, CkptError, MetricRow};
use crate::config::{ConfigError, Resolved, RunConfig};
use crate::dataio::{generate, read_dataset, write_dataset, DataError};
use crate::pgm::write_pgm;

pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.json";

#[derive(Debug)]
pub enum CmdError {
    /// Bad arguments or configuration; exit code 2.
    Usage(String),
    /// I/O, corrupt artifacts or failed runs; exit code 1.
    Runtime(String),
}

pub fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

pub fn runtime(e: impl std::fmt::Display) -> CmdError {
    CmdError::Runtime(format!("{e}"))
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Usage(e.0)
    }
}

impl From<DataError> for CmdError {
    fn from(e: DataError) -> Self {
        runtime(e)
    }
}

impl From<CkptError> for CmdError {
    fn from(e: CkptError) -> Self {
        runtime(e)
    }
}

impl From<TrainError> for CmdError {
    fn from(e: TrainError) -> Self {
        runtime(format!("training aborted: {e}"))
    }
}

impl From<PipelineError> for CmdError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => CmdError::Usage(c.0),
            other => runtime(other),
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, CmdError> {
    fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CmdError> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn make_dir(path: &Path) -> Result<(), CmdError> {
    fs::create_dir_all(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Config from --config, or the documented defaults when omitted.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CmdError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => Ok(RunConfig::from_json(&read_file(p)?)?),
    }
}

/// Deterministic held-out split: a seeded shuffle of 0..n, test slice
/// first, both halves returned sorted.
pub fn split_indices(n: usize, test_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(n >= 2, "split needs at least 2 samples");
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(SplitMix64::derive(seed, 0x5317));
    for i in (1..n).rev() {
        idx.swap(i, rng.next_below(i + 1));
    }
    let n_test = (((n as f64) * test_frac).round() as usize).clamp(1, n - 1);
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

pub fn metric_map(r: &EvalReport) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    match *r {
        EvalReport::Seg { mean_dice, oiou, .. } => {
            m.insert(String::from("dice"), mean_dice);
            m.insert(String::from("oiou"), oiou);
        }
        EvalReport::Cls { accuracy, macro_f1, .. } => {
            m.insert(String::from("acc"), accuracy);
            m.insert(String::from("macro_f1"), macro_f1);
        }
        EvalReport::Msa { mae, rmse, corr, acc2, acc7, .. } => {
            m.insert(String::from("acc2"), acc2);
            m.insert(String::from("acc7"), acc7);
            m.insert(String::from("corr"), corr);
            m.insert(String::from("mae"), mae);
            m.insert(String::from("rmse"), rmse);
        }
    }
    m
}

fn history_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("epoch,lr,train_loss");
    if let Some(first) = rows.first() {
        for k in first.metrics.keys() {
            out.push_str(&format!(",test_{k}"));
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", r.epoch, r.lr, r.train_loss));
        for v in r.metrics.values() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Component grouping for the trainable report: first name segment, with
/// the modality encoders kept separate (enc.acoustic vs enc.facial).
fn component_of(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("enc.") {
        let modality = rest.split('.').next().unwrap_or(rest);
        return format!("enc.{modality}");
    }
    String::from(name.split('.').next().unwrap_or(name))
}

pub fn trainable_report(ps: &ParamSet) -> serde_json::Value {
    let mut components: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let (mut trainable, mut frozen) = (0u64, 0u64);
    for (name, numel, is_trainable) in ps.report() {
        let slot = components.entry(component_of(&name)).or_default();
        if is_trainable {
            slot.0 += numel as u64;
            trainable += numel as u64;
        } else {
            slot.1 += numel as u64;
            frozen += numel as u64;
        }
    }
    let total = trainable + frozen;
    serde_json::json!({
        "total_params": total,
        "trainable_params": trainable,
        "frozen_params": frozen,
        "trainable_fraction": trainable as f64 / total as f64,
        "components": components
            .into_iter()
            .map(|(k, (t, f))| (k, serde_json::json!({"trainable": t, "frozen": f})))
            .collect::<serde_json::Map<_, _>>(),
    })
}

pub fn cmd_gen_data(task: Task, n: usize, seed: u64, out: &Path) -> Result<(), CmdError> {
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let data = generate(task, n, seed).map_err(|e| runtime(format!("generator: {e}")))?;
    let manifest = write_dataset(out, &data, seed)?;
    println!(
        "wrote {} {} samples to {} (checksum {})",
        manifest.n,
        manifest.task,
        out.display(),
        &manifest.checksum[..12]
    );
    Ok(())
}

fn check_task(config_task: Task, data: &TaskData) -> Result<(), CmdError> {
    if data.task() != config_task {
        return Err(usage(format!(
            "config task '{}' but dataset holds '{}'",
            config_task.name(),
            data.task().name()
        )));
    }
    Ok(())
}

pub fn cmd_train(config: &Path, data_dir: &Path, out: &Path) -> Result<(), CmdError> {
    let rc = RunConfig::from_json(&read_file(config)?)?;
    let resolved = rc.resolve()?;
    let (data, _) = read_dataset(data_dir)?;
    check_task(resolved.pipeline.task, &data)?;
    if data.len() < 2 {
        return Err(usage(format!("dataset of {} samples cannot be split", data.len())));
    }
    let pipe = Pipeline::new(resolved.pipeline.clone())?;
    let mut ps = ParamSet::new();
    pipe.init_params(&mut ps);

    let (train_idx, test_idx) = split_indices(data.len(), rc.train.test_frac, rc.train.seed);
    make_dir(out)?;
    let echo = rc.echo_json()?;
    write_file(&out.join(RESOLVED_CONFIG_FILE), &echo)?;

    let mut rows: Vec<MetricRow> = Vec::new();
    let outcome = pipe.train_with(&mut ps, &data, &train_idx, &resolved.train, |ps, stats| {
        let report = pipe
            .evaluate(ps, &data, &test_idx)
            .map_err(|e| TrainError::Build(format!("eval: {e}")))?;
        rows.push(MetricRow {
            epoch: stats.epoch,
            lr: stats.lr,
            train_loss: stats.mean_loss,
            metrics: metric_map(&report),
        });
        Ok(())
    })?;

    write_file(&out.join("history.csv"), history_csv(&rows))?;
    let config_value: serde_json::Value =
        serde_json::from_str(&echo).map_err(|e| runtime(format!("config echo: {e}")))?;
    save_checkpoint(out, &ps, config_value, resolved.train.epochs, &rows)?;
    write_file(
        &out.join("trainable_report.json"),
        serde_json::to_string_pretty(&trainable_report(&ps))
            .map_err(|e| runtime(format!("trainable report: {e}")))?,
    )?;

    let last = rows.last().expect("at least one epoch");
    let metrics: Vec<String> = last.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
    println!(
        "trained {} epochs ({} steps) on {} samples; test[{}]: {}",
        outcome.history.len(),
        outcome.steps,
        train_idx.len(),
        test_idx.len(),
        metrics.join(" ")
    );
    Ok(())
}

/// Rebuild the pipeline a checkpoint was trained under.
pub fn pipeline_from_manifest(config: &serde_json::Value) -> Result<(Pipeline, Resolved, RunConfig), CmdError> {
    let rc: RunConfig = serde_json::from_value(config.clone())
        .map_err(|e| runtime(format!("checkpoint config: {e}")))?;
    let resolved = rc.resolve().map_err(|e| runtime(format!("checkpoint config: {e}")))?;
    let pipe = Pipeline::new(resolved.pipeline.clone())
        .map_err(|e| runtime(format!("checkpoint config: {e}")))?;
    Ok((pipe, resolved, rc))
}

pub fn cmd_eval(run: &Path, data_dir: &Path, out: Option<&Path>) -> Result<(), CmdError> {
    let (ps, manifest) = load_checkpoint(run)?;
    let (pipe, _resolved, rc) = pipeline_from_manifest(&manifest.config)?;
    let (data, _) = read_dataset(data_dir)?;
    check_task(pipe.cfg.task, &data)?;

    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.join("eval"));
    make_dir(&out_dir)?;
    write_file(&out_dir.join(RESOLVED_CONFIG_FILE), rc.echo_json()?)?;

    let all: Vec<usize> = (0..data.len()).collect();
    let report = pipe.evaluate(&ps, &data, &all)?;
    let metrics = metric_map(&report);
    let header: Vec<&str> = metrics.keys().map(String::as_str).collect();
    let values: Vec<String> = metrics.values().map(|v| format!("{v}")).collect();
    write_file(
        &out_dir.join("metrics.csv"),
        format!("n,{}\n{},{}\n", header.join(","), data.len(), values.join(",")),
    )?;

    if let TaskData::Seg(samples) = &data {
        for (i, s) in samples.iter().take(4).enumerate() {
            let pred = pipe.predict_seg(&ps, i, s)?;
            let truth: Vec<bool> = s.mask.iter().map(|&m| m > 0.5).collect();
            write_pgm(&out_dir.join(format!("mask-{i:03}-pred.pgm")), SEG_IMG, SEG_IMG, &pred)
                .map_err(|e| runtime(format!("pgm: {e}")))?;
            write_pgm(&out_dir.join(format!("mask-{i:03}-true.pgm")), SEG_IMG, SEG_IMG, &truth)
                .map_err(|e| runtime(format!("pgm: {e}")))?;
        }
    }
    println!("{report}");
    Ok(())
}

pub struct GradcheckArgs {
    pub config: Option<PathBuf>,
    pub step: f64,
    pub tolerance: f64,
    pub max_per_tensor: usize,
    pub nudge: f64,
}

/// Perturb every trainable tensor in place (seeded), so gradients are
/// checked at a generic point: the zero-initialized infusion otherwise
/// blocks the modal path and leaves upstream encoder gradients at an
/// exact (trivially matching) zero.
pub fn nudge_trainables(ps: &mut ParamSet, scale: f64, seed: u64) {
    let mut rng = SplitMix64::new(SplitMix64::derive(seed, 0x6e75));
    for (_, t) in ps.iter_mut() {
        if t.requires_grad {
            for v in &mut t.data {
                *v += scale * rng.normal();
            }
        }
    }
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CmdError> {
    if args.step <= 0.0 || args.tolerance <= 0.0 {
        return Err(usage("--step and --tol must be positive"));
    }
    if args.nudge < 0.0 {
        return Err(usage("--nudge must be non-negative"));
    }
    let rc = load_config(args.config.as_deref())?;
    let resolved = rc.resolve()?;
    let pipe = Pipeline::new(resolved.pipeline.clone())?;
    let mut ps = ParamSet::new();
    pipe.init_params(&mut ps);
    if args.nudge > 0.0 {
        nudge_trainables(&mut ps, args.nudge, rc.data.seed);
    }
    let data = generate(resolved.pipeline.task, 2, rc.data.seed)
        .map_err(|e| runtime(format!("generator: {e}")))?;
    pipe.warm_cache(&ps, &data)?;

    // Analytic gradients of the sample-0 loss; trainable tensors the loss
    // does not touch legitimately have zero gradient.
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, &ps);
    let loss = pipe.sample_loss(&mut g, &bound, &data, 0)?;
    g.backward(loss).map_err(|e| runtime(format!("backward: {e}")))?;
    let mut analytic: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, t) in ps.iter() {
        if !t.requires_grad {
            continue;
        }
        let id = bound.get(name).expect("all params bound");
        let grad = g.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        analytic.insert(String::from(name), grad);
    }
    drop(g);

    let gcfg = GradCheckConfig {
        step: args.step,
        tolerance: args.tolerance,
        max_per_tensor: args.max_per_tensor,
        seed: rc.data.seed,
    };
    let report = check_gradients(&mut ps, &analytic, &gcfg, |probe| {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, probe);
        let loss = pipe.sample_loss(&mut g, &bound, &data, 0).expect("loss rebuild");
        g.data(loss)[0]
    })
    .map_err(|e| runtime(format!("gradcheck: {e}")))?;

    for (name, err) in &report.per_tensor {
        let mark = if *err <= args.tolerance { "ok  " } else { "FAIL" };
        println!("{mark} {name} max_rel_err={err:.3e}");
    }
    if report.passed() {
        println!(
            "PASS max_rel_err={:.3e} tol={:e} ({} coordinates)",
            report.max_rel_err, args.tolerance, report.checked
        );
        Ok(())
    } else {
        for f in report.failures.iter().take(8) {
            eprintln!(
                "{}[{}]: analytic {} vs numeric {} (rel_err {:.3e})",
                f.param, f.index, f.analytic, f.numeric, f.rel_err
            );
        }
        Err(runtime(format!(
            "FAIL max_rel_err={:.3e} tol={:e} ({} failing coordinates)",
            report.max_rel_err,
            args.tolerance,
            report.failures.len()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_disjoint_and_covering() {
        let (tr1, te1) = split_indices(20, 0.25, 7);
        let (tr2, te2) = split_indices(20, 0.25, 7);
        assert_eq!((&tr1, &te1), (&tr2, &te2));
        assert_eq!(te1.len(), 5);
        let mut all: Vec<usize> = tr1.iter().chain(&te1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        let (_, te3) = split_indices(20, 0.25, 8);
        assert_ne!(te1, te3, "different seeds should split differently");
    }

    #[test]
    fn split_always_leaves_both_sides_nonempty() {
        for n in [2, 3, 5] {
            for frac in [0.01, 0.5, 0.99] {
                let (tr, te) = split_indices(n, frac, 1);
                assert!(!tr.is_empty() && !te.is_empty(), "n={n} frac={frac}");
            }
        }
    }

    #[test]
    fn components_group_by_prefix() {
        assert_eq!(component_of("lm.layer3.attn.wq"), "lm");
        assert_eq!(component_of("infusion.layer5.w_d_v"), "infusion");
        assert_eq!(component_of("head.seg.mask.w"), "head");
        assert_eq!(component_of("task_tokens"), "task_tokens");
        assert_eq!(component_of("enc.acoustic.layer0.w1"), "enc.acoustic");
        assert_eq!(component_of("enc.facial.embed.w"), "enc.facial");
    }

    #[test]
    fn history_csv_has_metric_columns() {
        let mut metrics = BTreeMap::new();
        metrics.insert(String::from("dice"), 0.5);
        metrics.insert(String::from("oiou"), 0.25);
        let rows =
            vec![MetricRow { epoch: 0, lr: 1e-3, train_loss: 0.8, metrics }];
        let csv = history_csv(&rows);
        assert_eq!(csv, "epoch,lr,train_loss,test_dice,test_oiou\n0,0.001,0.8,0.5,0.25\n");
    }
}
