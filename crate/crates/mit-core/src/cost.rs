//! Cost model: closed-form FLOP and activation-memory counters that mirror
//! the forward graph node-for-node, an instrumented-run cross-check, and
//! the attention-map comparison against prefix-style conditioning.
//!
//! Conventions: a [m,k]x[k,n] matmul is 2mkn FLOPs; elementwise ops cost 1
//! per output element; reductions cost 1 per input element; softmax costs 5
//! per element; gathers, reshapes, slices, transposes and concats are free.

use alloc::vec;
use alloc::vec::Vec;

use crate::infusion::MiTConfig;
use crate::lm::{ForwardOpts, LMConfig, LMError, MicroLM, NoopHook};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Graph, GraphStats};

/// How the model consumes the modality during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostMode {
    /// Text-only transformer.
    Base,
    /// Infusion conditioning: no extra tokens enter attention.
    Mit,
    /// Prefix conditioning: `prefix` modal tokens prepended to the sequence.
    Prefix { prefix: usize },
}

/// Attention-probability elements materialized in one forward pass.
pub fn attn_map_elements(cfg: &LMConfig, l: usize, mode: CostMode) -> u64 {
    let rows = match mode {
        CostMode::Base | CostMode::Mit => l as u64,
        CostMode::Prefix { prefix } => (l + prefix) as u64,
    };
    cfg.n_layers as u64 * cfg.n_heads as u64 * rows * rows
}

/// Per-forward FLOPs added by infusion on top of the base model, split into
/// a sequence-length-independent part (the modal projections) and a part
/// linear in the token count (the elementwise application).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopBreakdown {
    pub token_independent: u64,
    pub token_dependent: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.token_independent + self.token_dependent
    }
}

pub fn conditioning_overhead_flops(cfg: &LMConfig, mit: &MiTConfig, l: usize) -> FlopBreakdown {
    let (l, d, h, f, di) = (
        l as u64,
        cfg.d_model as u64,
        cfg.n_heads as u64,
        cfg.d_ff as u64,
        mit.d_modal as u64,
    );
    let mut ti = 0u64;
    let mut td = 0u64;
    if mit.enable_kv {
        // four affine projections of the modal vector, then per-token mul+add
        ti += 4 * (2 * di * d + d);
        td += 4 * l * d;
        if mit.enable_rescale {
            // proxy-side norm is token-independent; the cosine, gate and
            // the two rescale products scale with tokens
            ti += 2 * d + h;
            td += 6 * l * d + 6 * l * h;
        }
    }
    if mit.enable_ff {
        ti += 2 * di * f + f;
        td += l * f;
    }
    let layers = mit.infused_layers.len() as u64;
    FlopBreakdown { token_independent: layers * ti, token_dependent: layers * td }
}

/// Forward FLOPs of the base transformer (no infusion).
pub fn base_forward_flops(cfg: &LMConfig, l: usize, need_logits: bool) -> u64 {
    let (l, d, h, dh, f, v, n) = (
        l as u64,
        cfg.d_model as u64,
        cfg.n_heads as u64,
        cfg.d_head as u64,
        cfg.d_ff as u64,
        cfg.vocab as u64,
        cfg.n_layers as u64,
    );
    let rms = 4 * l * d + 2 * l;
    let attn = h * (4 * l * l * dh + 7 * l * l);
    let per_layer = 2 * rms          // both pre-norms
        + 8 * l * d * d              // wq wk wv wo
        + attn
        + 6 * l * d * f              // gate, up, down
        + 3 * l * f                  // silu (2) + gate*up (1)
        + 2 * l * d; // residual adds
    let embed = if cfg.learned_pos { l * d } else { 0 };
    embed + n * per_layer + rms + if need_logits { 2 * l * d * v } else { 0 }
}

/// Node-data floats allocated by one forward pass, excluding the parameter
/// leaves themselves; mirrors the graph construction op-for-op.
pub fn forward_node_floats(
    cfg: &LMConfig,
    mit: Option<&MiTConfig>,
    l: usize,
    need_logits: bool,
) -> u64 {
    let (l, d, h, f, v, n) = (
        l as u64,
        cfg.d_model as u64,
        cfg.n_heads as u64,
        cfg.d_ff as u64,
        cfg.vocab as u64,
        cfg.n_layers as u64,
    );
    let rms = 3 * l * d + 4 * l;
    let attn = 6 * l * d + 4 * h * l * l;
    let per_layer = 2 * rms + 3 * l * d + attn + l * d + l * d + 5 * l * f + l * d + l * d;
    let embed = if cfg.learned_pos { 3 * l * d } else { l * d };
    let mut total = embed + n * per_layer + rms + d; // + last_hidden slice
    if need_logits {
        total += l * v;
    }
    if let Some(mit) = mit {
        let di = mit.d_modal as u64;
        let mut per_infused = 0u64;
        if mit.enable_kv {
            per_infused += 8 * l * d + 16 * d;
            if mit.enable_rescale {
                per_infused += 4 * l * d + 9 * l * h + 2 * d + 2 * h;
            }
        }
        if mit.enable_ff {
            per_infused += 3 * f + l * f;
        }
        total += mit.infused_layers.len() as u64 * per_infused + di; // + modal constant
    }
    total
}

/// Run a real forward and return the graph's allocation counters together
/// with the analytic prediction (node floats + parameter leaves).
pub fn measure_forward(
    cfg: &LMConfig,
    mit: Option<&MiTConfig>,
    l: usize,
    need_logits: bool,
    seed: u64,
) -> Result<(GraphStats, u64), LMError> {
    let lm = MicroLM::new(cfg.clone())?;
    let mut ps = ParamSet::new();
    lm.init_params(&mut ps, seed);
    if let Some(mit) = mit {
        mit.validate(cfg).map_err(LMError::Config)?;
        crate::infusion::init_infusion(&mut ps, mit, cfg);
    }
    let tokens: Vec<usize> = (0..l).map(|i| (i * 37 + 11) % cfg.vocab).collect();
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, &ps);
    let opts = ForwardOpts { need_logits, ..ForwardOpts::default() };
    match mit {
        None => {
            lm.forward(&mut g, &bound, &tokens, &opts, &mut NoopHook)?;
        }
        Some(mit) => {
            let modal_data: Vec<f64> =
                (0..mit.d_modal).map(|i| (i as f64 * 0.37).sin() * 0.5).collect();
            let modal = g.constant(vec![1, mit.d_modal], modal_data);
            let mut hook = crate::infusion::MiTHook::new(mit, cfg, &bound, modal);
            lm.forward(&mut g, &bound, &tokens, &opts, &mut hook)?;
        }
    }
    let analytic =
        forward_node_floats(cfg, mit, l, need_logits) + ps.total_scalars() as u64;
    Ok((g.stats(), analytic))
}

/// Least-squares slope of ln(y) against ln(x).
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2, "need two points for a slope");
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|&(x, _)| crate::mathx::ln(x)).collect();
    let ly: Vec<f64> = points.iter().map(|&(_, y)| crate::mathx::ln(y)).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Forward-cost extrapolation to the reference 7B-class geometry.
#[derive(Clone, Copy, Debug)]
pub struct PaperScaleReport {
    pub l: usize,
    /// FLOPs spent inside the transformer layers.
    pub layer_flops: u64,
    /// Embedding + final norm + vocabulary head FLOPs.
    pub other_flops: u64,
    pub total_tflops: f64,
    /// Published forward cost (TFLOPs) this estimate sits next to.
    pub reference_tflops: f64,
}

pub const REFERENCE_FORWARD_TFLOPS: f64 = 0.47;

pub fn paper_scale_estimate(l: usize) -> PaperScaleReport {
    let cfg = LMConfig::paper_scale();
    let total = base_forward_flops(&cfg, l, true);
    let mut one_layer_cfg = cfg.clone();
    one_layer_cfg.n_layers = 0;
    let other = base_forward_flops(&one_layer_cfg, l, true);
    PaperScaleReport {
        l,
        layer_flops: total - other,
        other_flops: other,
        total_tflops: total as f64 / 1e12,
        reference_tflops: REFERENCE_FORWARD_TFLOPS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (LMConfig, MiTConfig) {
        (LMConfig::toy(), MiTConfig::toy())
    }

    #[test]
    fn attn_map_worked_example() {
        // h=4, n_layers=8: base/MiT at L=64 vs prefix with P=64
        let (cfg, _) = toy();
        assert_eq!(attn_map_elements(&cfg, 64, CostMode::Base), 131_072);
        assert_eq!(attn_map_elements(&cfg, 64, CostMode::Mit), 131_072);
        assert_eq!(attn_map_elements(&cfg, 64, CostMode::Prefix { prefix: 64 }), 524_288);
    }

    #[test]
    fn empirical_attention_maps_match_closed_form() {
        let (cfg, mit) = toy();
        let (base, _) = measure_forward(&cfg, None, 64, false, 1).unwrap();
        let (infused, _) = measure_forward(&cfg, Some(&mit), 64, false, 1).unwrap();
        assert_eq!(base.attn_map_floats, attn_map_elements(&cfg, 64, CostMode::Base));
        assert_eq!(infused.attn_map_floats, base.attn_map_floats);
        // prefix conditioning materializes (L+P)^2 maps: emulate P modal
        // tokens by running the base model over the longer sequence
        let mut wide = cfg.clone();
        wide.max_seq = 256;
        let (prefixed, _) = measure_forward(&wide, None, 128, false, 1).unwrap();
        assert_eq!(
            prefixed.attn_map_floats,
            attn_map_elements(&cfg, 64, CostMode::Prefix { prefix: 64 })
        );
        assert_eq!(prefixed.attn_map_floats, 4 * base.attn_map_floats);
    }

    #[test]
    fn instrumented_activation_floats_match_analytic() {
        let (cfg, mit) = toy();
        for (mit_opt, logits) in [(None, true), (None, false), (Some(&mit), true)] {
            let (stats, analytic) = measure_forward(&cfg, mit_opt, 64, logits, 3).unwrap();
            let got = stats.floats_allocated as f64;
            let rel = (got - analytic as f64).abs() / analytic as f64;
            assert!(
                rel < 0.10,
                "instrumented {got} vs analytic {analytic} (rel {rel:.4}, mit={}, logits={logits})",
                mit_opt.is_some()
            );
        }
    }

    #[test]
    fn token_dependent_overhead_is_linear() {
        let (cfg, mit) = toy();
        let pts: Vec<(f64, f64)> = [32usize, 64, 128, 256, 512]
            .iter()
            .map(|&l| {
                (l as f64, conditioning_overhead_flops(&cfg, &mit, l).token_dependent as f64)
            })
            .collect();
        let slope = fit_loglog_slope(&pts);
        assert!((slope - 1.0).abs() <= 0.05, "slope {slope}");
    }

    #[test]
    fn prefix_map_growth_is_quadratic() {
        let (cfg, _) = toy();
        let pts: Vec<(f64, f64)> = [32usize, 64, 128, 256, 512]
            .iter()
            .map(|&l| {
                (l as f64, attn_map_elements(&cfg, l, CostMode::Prefix { prefix: l }) as f64)
            })
            .collect();
        let slope = fit_loglog_slope(&pts);
        assert!((slope - 2.0).abs() <= 0.05, "slope {slope}");
    }

    #[test]
    fn overhead_switches_zero_their_terms() {
        let (cfg, mut mit) = toy();
        mit.enable_rescale = false;
        mit.enable_ff = false;
        let kv_only = conditioning_overhead_flops(&cfg, &mit, 64);
        let d = cfg.d_model as u64;
        let di = mit.d_modal as u64;
        let layers = mit.infused_layers.len() as u64;
        assert_eq!(kv_only.token_independent, layers * 4 * (2 * di * d + d));
        assert_eq!(kv_only.token_dependent, layers * 4 * 64 * d);
        mit.enable_kv = false;
        let ff_only = conditioning_overhead_flops(&cfg, &mit, 64);
        assert_eq!(ff_only.token_independent, 0);
        assert_eq!(ff_only.token_dependent, 0);
    }

    #[test]
    fn loglog_slope_recovers_exact_powers() {
        let quad: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 3.0 * (i * i) as f64)).collect();
        assert!((fit_loglog_slope(&quad) - 2.0).abs() < 1e-12);
        let lin: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, 0.5 * i as f64)).collect();
        assert!((fit_loglog_slope(&lin) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn paper_scale_layers_halve_cleanly() {
        let full = paper_scale_estimate(35);
        assert!(full.total_tflops > 0.3 && full.total_tflops < 0.7, "{}", full.total_tflops);
        let cfg = LMConfig::paper_scale();
        let mut half_cfg = cfg.clone();
        half_cfg.n_layers /= 2;
        let half = base_forward_flops(&half_cfg, 35, true);
        let full_raw = base_forward_flops(&cfg, 35, true);
        assert_eq!(full_raw - full.other_flops, 2 * (half - full.other_flops));
        assert_eq!(full.layer_flops + full.other_flops, full_raw);
    }
}
