//! Modal infusion: affine projections of a global modality embedding that
//! rewrite attention K/V and feed-forward activations of a frozen
//! transformer, with an adaptive per-head sigmoid rescaling gate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::lm::{ConfigError, LMConfig, LayerHook};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

/// Guard against division by zero in cosine similarity; any product of
/// norms at or below this is treated as zero overlap.
const COS_NORM_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RescalePooling {
    /// One gate per token per head (cosine keeps the token axis).
    PerToken,
    /// Cosines averaged over tokens first; one gate per head.
    MeanOverTokens,
}

#[derive(Clone, Debug)]
pub struct MiTConfig {
    /// Modality embedding width d_I.
    pub d_modal: usize,
    /// Sorted 0-indexed transformer layers that receive infusion.
    pub infused_layers: Vec<usize>,
    /// Infuse attention K/V with the multiplicative+additive affines.
    pub enable_kv: bool,
    /// Infuse the feed-forward hidden activations (multiplicative only).
    pub enable_ff: bool,
    /// Adaptive head rescaling via the cosine-shifted sigmoid gate.
    pub enable_rescale: bool,
    pub gate_init: f64,
    pub rescale_pooling: RescalePooling,
}

impl MiTConfig {
    /// Preset paired with [`LMConfig::toy`]: infuse the last third of the
    /// 8 layers at stride 2.
    pub fn toy() -> Self {
        Self {
            d_modal: 32,
            infused_layers: vec![3, 5, 7],
            enable_kv: true,
            enable_ff: true,
            enable_rescale: true,
            gate_init: 10.0,
            rescale_pooling: RescalePooling::PerToken,
        }
    }

    pub fn validate(&self, lm: &LMConfig) -> Result<(), ConfigError> {
        if self.d_modal == 0 {
            return Err(ConfigError(format!("d_modal must be positive")));
        }
        if let Some(&bad) = self.infused_layers.iter().find(|&&l| l >= lm.n_layers) {
            return Err(ConfigError(format!(
                "infused layer {bad} out of range for {} layers",
                lm.n_layers
            )));
        }
        if self.infused_layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError(format!("infused_layers must be sorted and unique")));
        }
        if self.enable_rescale && !self.enable_kv {
            // The gate's cosine proxy is the V-side multiplicative
            // projection, which only exists when K/V infusion is on.
            return Err(ConfigError(format!(
                "enable_rescale requires enable_kv (the gate needs the value-space projection)"
            )));
        }
        Ok(())
    }
}

/// Layer selection policies for where infusion applies.
#[derive(Clone, Debug)]
pub enum LayerPolicy {
    /// The published best placement on 32 layers; other depths fall back
    /// to `LastThirdStride { stride: 4 }`.
    PaperDefault,
    /// Every `stride`-th layer starting just past the first third, plus
    /// the final layer.
    LastThirdStride { stride: usize },
    Explicit(Vec<usize>),
}

pub fn select_layers(n_layers: usize, policy: &LayerPolicy) -> Result<Vec<usize>, ConfigError> {
    if n_layers == 0 {
        return Err(ConfigError(format!("n_layers must be at least 1")));
    }
    match policy {
        LayerPolicy::PaperDefault => {
            if n_layers == 32 {
                Ok(vec![12, 16, 20, 24, 28, 31])
            } else {
                select_layers(n_layers, &LayerPolicy::LastThirdStride { stride: 4 })
            }
        }
        LayerPolicy::LastThirdStride { stride } => {
            if *stride == 0 {
                return Err(ConfigError(format!("stride must be at least 1")));
            }
            // 1-indexed: start just past the first third, step by stride,
            // and always include the final layer.
            let start = n_layers.div_ceil(3) + 1;
            let mut set: Vec<usize> = (start..=n_layers).step_by(*stride).collect();
            if set.last() != Some(&n_layers) {
                set.push(n_layers);
            }
            if set.is_empty() {
                set.push(n_layers);
            }
            let mut zero_indexed: Vec<usize> = set.into_iter().map(|l| l - 1).collect();
            zero_indexed.sort_unstable();
            zero_indexed.dedup();
            Ok(zero_indexed)
        }
        LayerPolicy::Explicit(list) => {
            if list.is_empty() {
                return Err(ConfigError(format!("explicit layer list is empty")));
            }
            if let Some(&bad) = list.iter().find(|&&l| l >= n_layers) {
                return Err(ConfigError(format!(
                    "explicit layer {bad} out of range for {n_layers} layers"
                )));
            }
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            Ok(sorted)
        }
    }
}

/// Insert zero-initialized infusion parameters (identity at init): all
/// projection matrices zero, multiplicative biases one, additive biases
/// zero, gate logits at `gate_init`.
pub fn init_infusion(ps: &mut ParamSet, mit: &MiTConfig, lm: &LMConfig) {
    let (di, dt, df, h) = (mit.d_modal, lm.d_model, lm.d_ff, lm.n_heads);
    for &l in &mit.infused_layers {
        if mit.enable_kv {
            for side in ["k", "v"] {
                ps.insert(
                    &format!("infusion.layer{l}.w_d_{side}"),
                    Tensor::zeros(vec![di, dt]).trainable(),
                );
                ps.insert(
                    &format!("infusion.layer{l}.b_d_{side}"),
                    Tensor::full(vec![dt], 1.0).trainable(),
                );
                ps.insert(
                    &format!("infusion.layer{l}.w_a_{side}"),
                    Tensor::zeros(vec![di, dt]).trainable(),
                );
                ps.insert(
                    &format!("infusion.layer{l}.b_a_{side}"),
                    Tensor::zeros(vec![dt]).trainable(),
                );
            }
        }
        if mit.enable_rescale {
            ps.insert(
                &format!("infusion.layer{l}.l_gate"),
                Tensor::full(vec![h], mit.gate_init).trainable(),
            );
        }
        if mit.enable_ff {
            ps.insert(
                &format!("infusion.layer{l}.w_f"),
                Tensor::zeros(vec![di, df]).trainable(),
            );
            ps.insert(
                &format!("infusion.layer{l}.b_f"),
                Tensor::full(vec![df], 1.0).trainable(),
            );
        }
    }
}

/// Closed-form count of infusion parameters under a config's switches;
/// must agree exactly with enumeration of the inserted tensors.
pub fn count_infusion_params(mit: &MiTConfig, lm: &LMConfig) -> u64 {
    let (di, dt, df, h) = (
        mit.d_modal as u64,
        lm.d_model as u64,
        lm.d_ff as u64,
        lm.n_heads as u64,
    );
    let mut per_layer = 0u64;
    if mit.enable_kv {
        per_layer += 4 * (di * dt + dt);
    }
    if mit.enable_rescale {
        per_layer += h;
    }
    if mit.enable_ff {
        per_layer += di * df + df;
    }
    per_layer * mit.infused_layers.len() as u64
}

// ── the infusion operations ─────────────────────────────────────────────

/// I·W + b for a modal embedding entered as a [1, d_I] row; returns [d_out].
pub fn affine_project(
    g: &mut Graph,
    modal: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, TensorError> {
    let prod = g.matmul(modal, w)?;
    let d_out = g.shape(prod)[1];
    let flat = g.reshape(prod, vec![d_out])?;
    g.add(flat, b)
}

/// X' = X ⊙ I_mul + I_add over [L, h, d_h], with the modal vectors
/// reshaped to [h, d_h] and broadcast over tokens.
pub fn infuse_kv(
    g: &mut Graph,
    x: NodeId,
    i_mul: NodeId,
    i_add: NodeId,
) -> Result<NodeId, TensorError> {
    let sh = g.shape(x).to_vec();
    if sh.len() != 3 {
        return Err(crate::tensor::err_out_of_range(
            "infuse_kv",
            format!("expected [L,h,d_h] input, got {sh:?}"),
        ));
    }
    let (h, dh) = (sh[1], sh[2]);
    let m = g.reshape(i_mul, vec![h, dh])?;
    let a = g.reshape(i_add, vec![h, dh])?;
    let scaled = g.mul(x, m)?;
    g.add(scaled, a)
}

/// Cosine similarity between each token's per-head slice of `v_raw`
/// and the per-head proxy vector: out[t, j] = cos(v_raw[t,j,:], proxy[j,:]).
/// Rows or proxies with zero norm yield cosine 0.
fn per_head_cosine(g: &mut Graph, v_raw: NodeId, proxy: NodeId) -> Result<NodeId, TensorError> {
    let dots_full = g.mul(v_raw, proxy)?;
    let dots = g.sum_axis(dots_full, 2)?; // [L, h]
    let v_sq = g.mul(v_raw, v_raw)?;
    let v_ss = g.sum_axis(v_sq, 2)?;
    let v_norm = g.sqrt(v_ss); // [L, h]
    let p_sq = g.mul(proxy, proxy)?;
    let p_ss = g.sum_axis(p_sq, 1)?;
    let p_norm = g.sqrt(p_ss); // [h]
    let denom = g.mul(v_norm, p_norm)?;
    let denom = g.max_scalar(denom, COS_NORM_FLOOR);
    g.div(dots, denom)
}

/// Adaptive head rescaling: gate = σ(L_gate + pooled cosine(V_raw, proxy));
/// the SAME gate multiplies both infused V and infused K.
/// Returns (V_r, K_r, gate).
pub fn head_rescale(
    g: &mut Graph,
    v_inf: NodeId,
    k_inf: NodeId,
    v_raw: NodeId,
    proxy: NodeId,
    l_gate: NodeId,
    pooling: RescalePooling,
) -> Result<(NodeId, NodeId, NodeId), TensorError> {
    let sh = g.shape(v_inf).to_vec();
    if sh.len() != 3 {
        return Err(crate::tensor::err_out_of_range(
            "head_rescale",
            format!("expected [L,h,d_h] input, got {sh:?}"),
        ));
    }
    let (l, h) = (sh[0], sh[1]);
    let cos = per_head_cosine(g, v_raw, proxy)?; // [L, h]
    let logit = match pooling {
        RescalePooling::PerToken => g.add(cos, l_gate)?, // [L, h]
        RescalePooling::MeanOverTokens => {
            let pooled = g.mean_axis(cos, 0)?; // [h]
            g.add(pooled, l_gate)? // [h]
        }
    };
    let gate = g.sigmoid(logit);
    let gate3 = match pooling {
        RescalePooling::PerToken => g.reshape(gate, vec![l, h, 1])?,
        RescalePooling::MeanOverTokens => g.reshape(gate, vec![1, h, 1])?,
    };
    let v_r = g.mul(v_inf, gate3)?;
    let k_r = g.mul(k_inf, gate3)?;
    Ok((v_r, k_r, gate))
}

/// Multi-head attention over infused K_r/V_r given [L, h, d_h] inputs.
/// Heads are concatenated to [L, d_T]; the caller applies the frozen
/// output projection.
pub fn infused_attention(
    g: &mut Graph,
    q: NodeId,
    k_r: NodeId,
    v_r: NodeId,
    mask: &[bool],
    scale: f64,
) -> Result<NodeId, TensorError> {
    let sh = g.shape(q).to_vec();
    if sh.len() != 3 {
        return Err(crate::tensor::err_out_of_range(
            "infused_attention",
            format!("expected [L,h,d_h] input, got {sh:?}"),
        ));
    }
    let (l, h, dh) = (sh[0], sh[1], sh[2]);
    let q2 = g.reshape(q, vec![l, h * dh])?;
    let k2 = g.reshape(k_r, vec![l, h * dh])?;
    let v2 = g.reshape(v_r, vec![l, h * dh])?;
    crate::lm::multi_head_attention(g, q2, k2, v2, mask, scale, h, dh)
}

/// H' = H ⊙ (I·W_f + b_f), broadcast over tokens (multiplicative only).
pub fn infuse_ff(
    g: &mut Graph,
    hidden: NodeId,
    modal: NodeId,
    w_f: NodeId,
    b_f: NodeId,
) -> Result<NodeId, TensorError> {
    let m = affine_project(g, modal, w_f, b_f)?;
    g.mul(hidden, m)
}

// ── the hook wiring infusion into the transformer ───────────────────────

/// [`LayerHook`] implementation that applies the full mechanism at the
/// configured layers and passes every other layer through untouched.
pub struct MiTHook<'a> {
    mit: &'a MiTConfig,
    lm: &'a LMConfig,
    bound: &'a Bound,
    /// Modal embedding as a [1, d_I] node on the same graph.
    modal: NodeId,
    /// Gates recorded per infused layer during the last forward
    /// (layer index, gate node).
    pub gates: Vec<(usize, NodeId)>,
}

impl<'a> MiTHook<'a> {
    pub fn new(mit: &'a MiTConfig, lm: &'a LMConfig, bound: &'a Bound, modal: NodeId) -> Self {
        Self { mit, lm, bound, modal, gates: Vec::new() }
    }

    fn node(&self, layer: usize, leaf: &str) -> Result<NodeId, TensorError> {
        let name = format!("infusion.layer{layer}.{leaf}");
        self.bound.get(&name).ok_or(crate::tensor::err_out_of_range(
            "infusion",
            format!("missing parameter '{name}'"),
        ))
    }

    fn infused(&self, layer: usize) -> bool {
        self.mit.infused_layers.contains(&layer)
    }
}

impl LayerHook for MiTHook<'_> {
    fn kv(
        &mut self,
        g: &mut Graph,
        layer: usize,
        k: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError> {
        if !self.infused(layer) || !self.mit.enable_kv {
            return Ok((k, v));
        }
        let (h, dh) = (self.lm.n_heads, self.lm.d_head);
        let l = g.shape(k)[0];
        let k3 = g.reshape(k, vec![l, h, dh])?;
        let v3 = g.reshape(v, vec![l, h, dh])?;

        let i_mul_v = {
            let w = self.node(layer, "w_d_v")?;
            let b = self.node(layer, "b_d_v")?;
            affine_project(g, self.modal, w, b)?
        };
        let i_add_v = {
            let w = self.node(layer, "w_a_v")?;
            let b = self.node(layer, "b_a_v")?;
            affine_project(g, self.modal, w, b)?
        };
        let i_mul_k = {
            let w = self.node(layer, "w_d_k")?;
            let b = self.node(layer, "b_d_k")?;
            affine_project(g, self.modal, w, b)?
        };
        let i_add_k = {
            let w = self.node(layer, "w_a_k")?;
            let b = self.node(layer, "b_a_k")?;
            affine_project(g, self.modal, w, b)?
        };
        let v_inf = infuse_kv(g, v3, i_mul_v, i_add_v)?;
        let k_inf = infuse_kv(g, k3, i_mul_k, i_add_k)?;

        let (v_fin, k_fin) = if self.mit.enable_rescale {
            let proxy = g.reshape(i_mul_v, vec![h, dh])?;
            let l_gate = self.node(layer, "l_gate")?;
            let (v_r, k_r, gate) =
                head_rescale(g, v_inf, k_inf, v3, proxy, l_gate, self.mit.rescale_pooling)?;
            self.gates.push((layer, gate));
            (v_r, k_r)
        } else {
            (v_inf, k_inf)
        };
        let kf = g.reshape(k_fin, vec![l, h * dh])?;
        let vf = g.reshape(v_fin, vec![l, h * dh])?;
        Ok((kf, vf))
    }

    fn ff_hidden(
        &mut self,
        g: &mut Graph,
        layer: usize,
        hidden: NodeId,
    ) -> Result<NodeId, TensorError> {
        if !self.infused(layer) || !self.mit.enable_ff {
            return Ok(hidden);
        }
        let w = self.node(layer, "w_f")?;
        let b = self.node(layer, "b_f")?;
        infuse_ff(g, hidden, self.modal, w, b)
    }
}

/// Names of every infusion parameter a config creates, in creation order.
pub fn infusion_param_names(mit: &MiTConfig) -> Vec<String> {
    let mut names = Vec::new();
    for &l in &mit.infused_layers {
        if mit.enable_kv {
            for side in ["k", "v"] {
                for leaf in ["w_d", "b_d", "w_a", "b_a"] {
                    names.push(format!("infusion.layer{l}.{leaf}_{side}"));
                }
            }
        }
        if mit.enable_rescale {
            names.push(format!("infusion.layer{l}.l_gate"));
        }
        if mit.enable_ff {
            names.push(format!("infusion.layer{l}.w_f"));
            names.push(format!("infusion.layer{l}.b_f"));
        }
    }
    names
}
