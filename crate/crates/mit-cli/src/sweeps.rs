//! Report generators: the cost sweep (closed-form counters plus an
//! instrumented cross-check), the ablation sweep over infusion axes, and
//! the embedding-schema sweep over padded prompt lengths.

use std::path::PathBuf;

use mit_core::cost::{
    attn_map_elements, base_forward_flops, conditioning_overhead_flops, fit_loglog_slope,
    forward_node_floats, measure_forward, paper_scale_estimate, CostMode,
};
use mit_core::encoders::ImageEncoder;
use mit_core::heads::{
    extract_embedding, tokenize_bytes, ClsHead, EmbedSchema, Task, TaskTokenTable, PAD_TOKEN,
};
use mit_core::infusion::{count_infusion_params, init_infusion, MiTConfig, MiTHook};
use mit_core::lm::{ForwardOpts, LMConfig, LayerHook, MicroLM, NoopHook};
use mit_core::loss::cross_entropy_logits;
use mit_core::params::{Bound, ParamSet};
use mit_core::pipeline::{Pipeline, PipelineConfig, TaskData};
use mit_core::rng::SplitMix64;
use mit_core::synth::{ClsSample, CLS_CLASSES, SEG_IMG};
use mit_core::tensor::Graph;
use mit_core::train::{train_loop, TrainConfig, TrainError};

use crate::commands::{
    load_config, make_dir, metric_map, runtime, split_indices, usage, write_file, CmdError,
    RESOLVED_CONFIG_FILE,
};
use crate::dataio::generate;

pub struct CostArgs {
    pub config: Option<PathBuf>,
    pub sweep: String,
    pub out: Option<PathBuf>,
}

/// "L=a..b" -> doubling sequence a, 2a, 4a, ... while <= b.
fn parse_sweep(s: &str) -> Result<Vec<usize>, CmdError> {
    let err = || usage(format!("--sweep '{s}' must look like L=32..512"));
    let rest = s.strip_prefix("L=").ok_or_else(err)?;
    let (a, b) = rest.split_once("..").ok_or_else(err)?;
    let (a, b): (usize, usize) = (a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?);
    if a == 0 || a > b {
        return Err(err());
    }
    let mut ls = Vec::new();
    let mut l = a;
    while l <= b {
        ls.push(l);
        l *= 2;
    }
    Ok(ls)
}

pub fn cmd_cost(args: &CostArgs) -> Result<(), CmdError> {
    let rc = load_config(args.config.as_deref())?;
    let lm = rc.lm()?;
    let mit = rc
        .mit()?
        .ok_or_else(|| usage("cost needs infusion.enabled=true for the mit rows"))?;
    mit.validate(&lm).map_err(|e| usage(e.0))?;
    let ls = parse_sweep(&args.sweep)?;

    let mut csv = String::from("mode,L_tok,P,attn_elems,overhead_flops,peak_floats\n");
    let mut mit_overhead = Vec::new();
    let mut prefix_attn = Vec::new();
    let mut maps_match = true;
    for &l in &ls {
        let base_attn = attn_map_elements(&lm, l, CostMode::Base);
        csv.push_str(&format!(
            "base,{l},0,{base_attn},0,{}\n",
            forward_node_floats(&lm, None, l, false)
        ));

        let mit_attn = attn_map_elements(&lm, l, CostMode::Mit);
        maps_match &= mit_attn == base_attn;
        let ov = conditioning_overhead_flops(&lm, &mit, l);
        mit_overhead.push((l as f64, ov.token_dependent as f64));
        csv.push_str(&format!(
            "mit,{l},0,{mit_attn},{},{}\n",
            ov.total(),
            forward_node_floats(&lm, Some(&mit), l, false)
        ));

        let p = rc.cost.prefix.unwrap_or(l);
        let pre_attn = attn_map_elements(&lm, l, CostMode::Prefix { prefix: p });
        prefix_attn.push((l as f64, pre_attn as f64));
        let pre_overhead = base_forward_flops(&lm, l + p, false) - base_forward_flops(&lm, l, false);
        csv.push_str(&format!(
            "prefix,{l},{p},{pre_attn},{pre_overhead},{}\n",
            forward_node_floats(&lm, None, l + p, false)
        ));
    }

    let mut report = String::new();
    if ls.len() >= 2 {
        report.push_str(&format!(
            "# slope mit_token_dependent_overhead = {:.3}\n",
            fit_loglog_slope(&mit_overhead)
        ));
        report.push_str(&format!(
            "# slope prefix_attn_map = {:.3}\n",
            fit_loglog_slope(&prefix_attn)
        ));
    } else {
        report.push_str("# slopes skipped: sweep has a single point\n");
    }
    report.push_str(&format!("# attn_map mit == base at every L: {maps_match}\n"));

    // Instrumented cross-check against the analytic counter; only for
    // desk-scale geometries that are cheap to actually run.
    if lm.d_model <= 256 && lm.n_layers <= 16 && lm.vocab <= 4096 {
        let l = rc.cost.l_tok.min(lm.max_seq);
        let (stats, analytic) = measure_forward(&lm, Some(&mit), l, false, rc.train.seed)
            .map_err(|e| runtime(format!("instrumented forward: {e}")))?;
        report.push_str(&format!(
            "# instrumented L={l}: floats_allocated={} analytic={analytic} ratio={:.4} attn_map_floats={}\n",
            stats.floats_allocated,
            stats.floats_allocated as f64 / analytic as f64,
            stats.attn_map_floats
        ));
    } else {
        report.push_str("# instrumented check skipped: model too large to run\n");
    }
    let est = paper_scale_estimate(2048);
    report.push_str(&format!(
        "# paper_scale L={}: total_tflops={:.2} (layers {:.2} + other {:.2}; published forward {:.2}, counting conventions differ)\n",
        est.l,
        est.total_tflops,
        est.layer_flops as f64 / 1e12,
        est.other_flops as f64 / 1e12,
        est.reference_tflops
    ));

    match &args.out {
        Some(path) => {
            write_file(path, &csv)?;
            print!("{report}");
            println!("wrote {} rows to {}", 3 * ls.len(), path.display());
        }
        None => print!("{csv}{report}"),
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    Kv,
    Ff,
    Rescale,
}

fn parse_axes(s: &str) -> Result<Vec<Axis>, CmdError> {
    let mut axes = Vec::new();
    for part in s.split(',') {
        let axis = match part.trim() {
            "kv" => Axis::Kv,
            "ff" => Axis::Ff,
            "rescale" => Axis::Rescale,
            other => return Err(usage(format!("unknown ablation axis '{other}'"))),
        };
        if axes.contains(&axis) {
            return Err(usage(format!("duplicate ablation axis '{}'", part.trim())));
        }
        axes.push(axis);
    }
    if axes.is_empty() {
        return Err(usage("--axes needs at least one of kv,ff,rescale"));
    }
    Ok(axes)
}

fn metric_names(task: Task) -> &'static [&'static str] {
    match task {
        Task::Seg => &["dice", "oiou"],
        Task::Cls => &["acc", "macro_f1"],
        Task::Msa => &["acc2", "acc7", "corr", "mae", "rmse"],
    }
}

pub struct AblateArgs {
    pub config: Option<PathBuf>,
    pub axes: String,
    pub out: PathBuf,
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(), CmdError> {
    let rc = load_config(args.config.as_deref())?;
    let resolved = rc.resolve()?;
    let base_mit = resolved
        .pipeline
        .mit
        .clone()
        .ok_or_else(|| usage("ablate needs infusion.enabled=true as the baseline"))?;
    let axes = parse_axes(&args.axes)?;

    make_dir(&args.out)?;
    write_file(&args.out.join(RESOLVED_CONFIG_FILE), rc.echo_json()?)?;
    let task = resolved.pipeline.task;
    let data = generate(task, rc.data.n, rc.data.seed).map_err(|e| runtime(format!("generator: {e}")))?;
    if data.len() < 2 {
        return Err(usage("data.n too small to split"));
    }
    let (train_idx, test_idx) = split_indices(data.len(), rc.train.test_frac, rc.train.seed);

    let mut csv = String::from("kv,ff,rescale,effective_rescale,note,infusion_params,trainable_params");
    for m in metric_names(task) {
        csv.push_str(&format!(",test_{m}"));
    }
    csv.push('\n');

    let rows = 1usize << axes.len();
    for combo in 0..rows {
        let mut kv = base_mit.enable_kv;
        let mut ff = base_mit.enable_ff;
        let mut rescale = base_mit.enable_rescale;
        for (i, axis) in axes.iter().enumerate() {
            let on = (combo >> i) & 1 == 0; // row 0 = everything on
            match axis {
                Axis::Kv => kv = on,
                Axis::Ff => ff = on,
                Axis::Rescale => rescale = on,
            }
        }
        let mut notes: Vec<&str> = Vec::new();
        let mut eff_rescale = rescale;
        if rescale && !kv {
            // The gate's proxy lives in the K/V projections.
            eff_rescale = false;
            notes.push("rescale off (needs kv)");
        }
        let mit = if kv || ff {
            Some(MiTConfig {
                enable_kv: kv,
                enable_ff: ff,
                enable_rescale: eff_rescale,
                ..base_mit.clone()
            })
        } else {
            notes.push("no infusion");
            None
        };
        let infusion_params =
            mit.as_ref().map_or(0, |m| count_infusion_params(m, &resolved.pipeline.lm));

        let pcfg = PipelineConfig { mit, ..resolved.pipeline.clone() };
        let pipe = Pipeline::new(pcfg)?;
        let mut ps = ParamSet::new();
        pipe.init_params(&mut ps);
        eprintln!(
            "ablate row {}/{rows}: kv={kv} ff={ff} rescale={eff_rescale} ({} trainable params)",
            combo + 1,
            ps.trainable_scalars()
        );
        pipe.train(&mut ps, &data, &train_idx, &resolved.train)?;
        let metrics = metric_map(&pipe.evaluate(&ps, &data, &test_idx)?);

        csv.push_str(&format!(
            "{},{},{},{},{},{infusion_params},{}",
            kv as u8,
            ff as u8,
            rescale as u8,
            eff_rescale as u8,
            notes.join("; "),
            ps.trainable_scalars()
        ));
        for m in metric_names(task) {
            csv.push_str(&format!(",{}", metrics[*m]));
        }
        csv.push('\n');
    }

    let path = args.out.join("ablate.csv");
    write_file(&path, &csv)?;
    println!("wrote {rows} rows to {}", path.display());
    Ok(())
}

pub struct SchemaSweepArgs {
    pub config: Option<PathBuf>,
    pub lengths: String,
    pub out: PathBuf,
}

/// "a..b" -> doubling sequence from a capped at b, with b always included.
fn parse_lengths(s: &str) -> Result<Vec<usize>, CmdError> {
    let err = || usage(format!("--lengths '{s}' must look like 8..96"));
    let (a, b) = s.split_once("..").ok_or_else(err)?;
    let (a, b): (usize, usize) = (a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?);
    if a < 2 || a > b {
        return Err(err());
    }
    let mut ls = Vec::new();
    let mut l = a;
    while l < b {
        ls.push(l);
        l *= 2;
    }
    ls.push(b);
    Ok(ls)
}

pub fn cmd_schema_sweep(args: &SchemaSweepArgs) -> Result<(), CmdError> {
    let rc = load_config(args.config.as_deref())?;
    let resolved = rc.resolve()?;
    if resolved.pipeline.task != Task::Cls {
        return Err(usage("schema-sweep probes prompt-length sensitivity on the cls task; set task.task = \"cls\""));
    }
    let lm = resolved.pipeline.lm.clone();
    let mit = resolved.pipeline.mit.clone();
    let lengths = parse_lengths(&args.lengths)?;

    let TaskData::Cls(samples) = generate(Task::Cls, rc.data.n, rc.data.seed)
        .map_err(|e| runtime(format!("generator: {e}")))?
    else {
        unreachable!("cls generator")
    };
    if samples.len() < 2 {
        return Err(usage("data.n too small to split"));
    }
    let (train_idx, test_idx) = split_indices(samples.len(), rc.train.test_frac, rc.train.seed);
    let longest = samples.iter().map(|s| tokenize_bytes(&s.text).len()).max().unwrap_or(0);

    make_dir(&args.out)?;
    write_file(&args.out.join(RESOLVED_CONFIG_FILE), rc.echo_json()?)?;
    let mut csv = String::from("schema,len,n_train,n_test,accuracy\n");
    for &l in &lengths {
        // The task-token variant needs one slot for the token itself.
        if l > lm.max_seq {
            eprintln!("skipping len {l}: model max_seq is {}", lm.max_seq);
            continue;
        }
        if l < longest + 1 {
            eprintln!("skipping len {l}: claims span up to {longest} tokens (+1 task-token slot)");
            continue;
        }
        for schema in [EmbedSchema::LastToken, EmbedSchema::TaskToken] {
            let acc = schema_probe(
                &lm,
                mit.as_ref(),
                resolved.pipeline.d_modal,
                schema,
                l,
                &samples,
                &train_idx,
                &test_idx,
                &resolved.train,
            )?;
            eprintln!("schema {} len {l}: acc {acc:.4}", schema.name());
            csv.push_str(&format!("{},{l},{},{},{acc}\n", schema.name(), train_idx.len(), test_idx.len()));
        }
    }
    let path = args.out.join("schema_sweep.csv");
    write_file(&path, &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn pad_tokens(text: &str, l: usize, schema: EmbedSchema, task_id: usize) -> Vec<usize> {
    let mut t = tokenize_bytes(text);
    match schema {
        EmbedSchema::LastToken => t.resize(l, PAD_TOKEN),
        EmbedSchema::TaskToken => {
            t.resize(l - 1, PAD_TOKEN);
            t.push(task_id);
        }
    }
    t
}

/// Train a classifier probe on raw (untemplated) claims padded to `l`
/// under one extraction schema; returns test accuracy.
#[allow(clippy::too_many_arguments)]
fn schema_probe(
    lm_cfg: &LMConfig,
    mit: Option<&MiTConfig>,
    d_modal: usize,
    schema: EmbedSchema,
    l: usize,
    samples: &[ClsSample],
    train_idx: &[usize],
    test_idx: &[usize],
    tcfg: &TrainConfig,
) -> Result<f64, CmdError> {
    let lm = MicroLM::new(lm_cfg.clone()).map_err(|e| runtime(format!("lm: {e}")))?;
    let img_enc = ImageEncoder::new(d_modal).map_err(|e| runtime(format!("encoder: {e}")))?;
    let mut table = TaskTokenTable::new(lm_cfg.vocab, lm_cfg.d_model);
    let task_id = table.register("<CLS>");
    let head = ClsHead { d_model: lm_cfg.d_model, d_modal, classes: CLS_CLASSES };

    let mut ps = ParamSet::new();
    let seed = tcfg.seed;
    lm.init_params(&mut ps, SplitMix64::derive(seed, 0));
    img_enc.init_params(&mut ps, SplitMix64::derive(seed, 1));
    if schema == EmbedSchema::TaskToken {
        table.init_params(&mut ps, SplitMix64::derive(seed, 2));
    }
    if let Some(mit) = mit {
        init_infusion(&mut ps, mit, lm_cfg);
    }
    head.init_params(&mut ps, SplitMix64::derive(seed, 4));

    // Image features are frozen; encode once.
    let globals: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| img_enc.encode(&ps, &s.image, SEG_IMG, SEG_IMG).map(|f| f.global))
        .collect::<Result<_, _>>()
        .map_err(|e| runtime(format!("encoder: {e}")))?;

    let fwd = |g: &mut Graph, bound: &Bound, s: &ClsSample, global: &[f64]| -> Result<mit_core::tensor::NodeId, String> {
        let tokens = pad_tokens(&s.text, l, schema, task_id);
        let global_node = g.constant(vec![1, d_modal], global.to_vec());
        let task_table = (schema == EmbedSchema::TaskToken)
            .then(|| table.node(bound))
            .transpose()
            .map_err(|e| format!("{e}"))?;
        let opts = ForwardOpts { need_logits: false, task_table, ..ForwardOpts::default() };
        let mut noop = NoopHook;
        let mut mit_hook = mit.map(|m| MiTHook::new(m, lm_cfg, bound, global_node));
        let hook: &mut dyn LayerHook = match mit_hook.as_mut() {
            Some(h) => h,
            None => &mut noop,
        };
        let out = lm.forward(g, bound, &tokens, &opts, hook).map_err(|e| format!("{e}"))?;
        let emb = extract_embedding(g, out.hidden, &tokens, tokens.len(), schema, lm_cfg.vocab)
            .map_err(|e| format!("{e}"))?;
        head.logits(g, bound, emb, global_node).map_err(|e| format!("{e}"))
    };

    train_loop(&mut ps, tcfg, train_idx.len(), |g, bound, k| {
        let s = &samples[train_idx[k]];
        let logits = fwd(g, bound, s, &globals[train_idx[k]]).map_err(TrainError::Build)?;
        cross_entropy_logits(g, logits, s.label).map_err(TrainError::Graph)
    })?;

    let mut hits = 0usize;
    for &i in test_idx {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let logits = fwd(&mut g, &bound, &samples[i], &globals[i]).map_err(runtime)?;
        let row = g.data(logits);
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(j, _)| j)
            .expect("nonempty logits");
        hits += usize::from(pred == samples[i].label);
    }
    Ok(hits as f64 / test_idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parser_doubles_inclusively() {
        assert_eq!(parse_sweep("L=32..512").unwrap(), vec![32, 64, 128, 256, 512]);
        assert_eq!(parse_sweep("L=48..100").unwrap(), vec![48, 96]);
        assert!(parse_sweep("32..512").is_err());
        assert!(parse_sweep("L=0..8").is_err());
        assert!(parse_sweep("L=64..32").is_err());
    }

    #[test]
    fn lengths_parser_keeps_endpoint() {
        assert_eq!(parse_lengths("8..96").unwrap(), vec![8, 16, 32, 64, 96]);
        assert_eq!(parse_lengths("64..64").unwrap(), vec![64]);
        assert!(parse_lengths("1..8").is_err());
        assert!(parse_lengths("9..3").is_err());
    }

    #[test]
    fn axes_parser_rejects_junk_and_duplicates() {
        assert_eq!(parse_axes("kv,ff,rescale").unwrap().len(), 3);
        assert!(parse_axes("kv,kv").is_err());
        assert!(parse_axes("kv,spin").is_err());
        assert!(parse_axes("").is_err());
    }

    #[test]
    fn padded_tokens_put_the_schema_where_extraction_looks() {
        let toks = pad_tokens("hi", 6, EmbedSchema::LastToken, 256);
        assert_eq!(toks, vec![104, 105, PAD_TOKEN, PAD_TOKEN, PAD_TOKEN, PAD_TOKEN]);
        let toks = pad_tokens("hi", 6, EmbedSchema::TaskToken, 256);
        assert_eq!(toks, vec![104, 105, PAD_TOKEN, PAD_TOKEN, PAD_TOKEN, 256]);
    }
}
