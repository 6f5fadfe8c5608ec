//! Frozen decoder-only micro-transformer.
//!
//! Pre-norm blocks with RMS normalization, learned absolute position
//! embeddings, multi-head causal attention, and a SwiGLU feed-forward.
//! Layer hooks expose the K/V projections and the feed-forward hidden
//! activations so conditioning modules can rewrite them in place.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::mathx;
use crate::params::{Bound, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Clone, Debug)]
pub struct ConfigError(pub String);

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnScale {
    /// 1/sqrt(d_head): the conventional per-head scaling.
    PerHead,
    /// 1/sqrt(d_model): scales by full model width instead.
    ModelWidth,
}

#[derive(Clone, Debug)]
pub struct LMConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_seq: usize,
    pub attn_scale: AttnScale,
    pub norm_eps: f64,
    /// Learned absolute position table. The reference scale omits it
    /// (rotary embeddings carry no parameters), so counting honors this.
    pub learned_pos: bool,
}

impl LMConfig {
    /// Desk-scale preset used throughout training and the test suite.
    pub fn toy() -> Self {
        Self {
            n_layers: 8,
            d_model: 64,
            n_heads: 4,
            d_head: 16,
            d_ff: 172,
            vocab: 256,
            max_seq: 128,
            attn_scale: AttnScale::PerHead,
            norm_eps: 1e-6,
            learned_pos: true,
        }
    }

    /// 7B-class reference geometry, used only for closed-form counting
    /// and cost extrapolation (never instantiated).
    pub fn paper_scale() -> Self {
        Self {
            n_layers: 32,
            d_model: 4096,
            n_heads: 32,
            d_head: 128,
            d_ff: 11008,
            vocab: 32000,
            max_seq: 2048,
            attn_scale: AttnScale::PerHead,
            norm_eps: 1e-6,
            learned_pos: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.vocab == 0 {
            return Err(ConfigError(format!("zero-sized model dimension")));
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(ConfigError(format!(
                "n_heads * d_head must equal d_model: {} * {} != {}",
                self.n_heads, self.d_head, self.d_model
            )));
        }
        if self.max_seq == 0 || self.d_ff == 0 {
            return Err(ConfigError(format!("max_seq and d_ff must be positive")));
        }
        Ok(())
    }

    pub fn scale_value(&self) -> f64 {
        match self.attn_scale {
            AttnScale::PerHead => 1.0 / mathx::sqrt(self.d_head as f64),
            AttnScale::ModelWidth => 1.0 / mathx::sqrt(self.d_model as f64),
        }
    }
}

#[derive(Clone, Debug)]
pub enum LMError {
    Config(ConfigError),
    Tensor(TensorError),
    TokenOutOfRange { position: usize, id: usize, vocab: usize },
    SequenceTooLong { len: usize, max_seq: usize },
    BadValidLen { valid_len: usize, len: usize },
    MissingParam(String),
}

impl From<TensorError> for LMError {
    fn from(e: TensorError) -> Self {
        LMError::Tensor(e)
    }
}

impl From<ConfigError> for LMError {
    fn from(e: ConfigError) -> Self {
        LMError::Config(e)
    }
}

impl core::fmt::Display for LMError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LMError::Config(c) => write!(f, "bad config: {}", c.0),
            LMError::Tensor(t) => write!(f, "tensor error: {t}"),
            LMError::TokenOutOfRange { position, id, vocab } => {
                write!(f, "token id {id} at position {position} out of range for vocab {vocab}")
            }
            LMError::SequenceTooLong { len, max_seq } => {
                write!(f, "sequence length {len} exceeds max_seq {max_seq}")
            }
            LMError::BadValidLen { valid_len, len } => {
                write!(f, "valid_len {valid_len} out of range for sequence of {len}")
            }
            LMError::MissingParam(name) => write!(f, "missing parameter '{name}'"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LMError {}

/// Per-layer interception points for conditioning modules.
///
/// `kv` receives the raw K and V projections ([len, d_model]) and returns
/// the tensors attention should actually use. `ff_hidden` receives the
/// SwiGLU hidden activations ([len, d_ff]) before the down-projection.
pub trait LayerHook {
    fn kv(
        &mut self,
        g: &mut Graph,
        layer: usize,
        k: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError>;

    fn ff_hidden(
        &mut self,
        g: &mut Graph,
        layer: usize,
        h: NodeId,
    ) -> Result<NodeId, TensorError>;
}

/// Hook that leaves every layer untouched.
pub struct NoopHook;

impl LayerHook for NoopHook {
    fn kv(
        &mut self,
        _g: &mut Graph,
        _layer: usize,
        k: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError> {
        Ok((k, v))
    }

    fn ff_hidden(
        &mut self,
        _g: &mut Graph,
        _layer: usize,
        h: NodeId,
    ) -> Result<NodeId, TensorError> {
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOpts {
    /// Number of real (non-pad) tokens; 0 means the whole sequence.
    pub valid_len: usize,
    /// Skip the vocabulary projection when heads only need hidden states.
    pub need_logits: bool,
    /// Extra embedding rows appended after the base vocabulary; token ids
    /// `vocab..vocab+n` gather from this [n, d_model] table instead.
    pub task_table: Option<NodeId>,
}

impl Default for ForwardOpts {
    fn default() -> Self {
        Self { valid_len: 0, need_logits: true, task_table: None }
    }
}

#[derive(Debug)]
pub struct LMOutput {
    /// Final-norm hidden states, [len, d_model].
    pub hidden: NodeId,
    /// Vocabulary logits, [len, vocab]; present iff `need_logits`.
    pub logits: Option<NodeId>,
    /// Hidden state of the last real token, [1, d_model].
    pub last_hidden: NodeId,
}

pub struct MicroLM {
    pub cfg: LMConfig,
    prefix: String,
}

impl MicroLM {
    pub fn new(cfg: LMConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self { cfg, prefix: String::from("lm") })
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{}", self.prefix, suffix)
    }

    /// Insert frozen, randomly initialized weights (the pretrained stand-in).
    pub fn init_params(&self, ps: &mut ParamSet, seed: u64) {
        let cfg = &self.cfg;
        let mut rng = SplitMix64::new(seed);
        let mat = |rng: &mut SplitMix64, r: usize, c: usize| {
            let data: Vec<f64> = (0..r * c).map(|_| rng.normal() * 0.02).collect();
            Tensor::new(vec![r, c], data)
        };
        ps.insert(&self.name("tok_embed"), mat(&mut rng, cfg.vocab, cfg.d_model));
        if cfg.learned_pos {
            ps.insert(&self.name("pos_embed"), mat(&mut rng, cfg.max_seq, cfg.d_model));
        }
        for l in 0..cfg.n_layers {
            let d = cfg.d_model;
            ps.insert(&self.name(&format!("layer{l}.attn.wq")), mat(&mut rng, d, d));
            ps.insert(&self.name(&format!("layer{l}.attn.wk")), mat(&mut rng, d, d));
            ps.insert(&self.name(&format!("layer{l}.attn.wv")), mat(&mut rng, d, d));
            ps.insert(&self.name(&format!("layer{l}.attn.wo")), mat(&mut rng, d, d));
            ps.insert(&self.name(&format!("layer{l}.norm1.g")), Tensor::full(vec![d], 1.0));
            ps.insert(&self.name(&format!("layer{l}.norm2.g")), Tensor::full(vec![d], 1.0));
            ps.insert(&self.name(&format!("layer{l}.ff.w_gate")), mat(&mut rng, d, cfg.d_ff));
            ps.insert(&self.name(&format!("layer{l}.ff.w_up")), mat(&mut rng, d, cfg.d_ff));
            ps.insert(&self.name(&format!("layer{l}.ff.w_down")), mat(&mut rng, cfg.d_ff, d));
        }
        ps.insert(&self.name("final_norm.g"), Tensor::full(vec![cfg.d_model], 1.0));
        ps.insert(&self.name("lm_head"), mat(&mut rng, cfg.d_model, cfg.vocab));
    }

    /// Closed-form parameter count for a geometry (matches enumeration).
    pub fn count_params(cfg: &LMConfig) -> u64 {
        let (d, f, v, s, n) = (
            cfg.d_model as u64,
            cfg.d_ff as u64,
            cfg.vocab as u64,
            cfg.max_seq as u64,
            cfg.n_layers as u64,
        );
        let embed = v * d + if cfg.learned_pos { s * d } else { 0 };
        let per_layer = 4 * d * d + 2 * d + 3 * d * f;
        embed + n * per_layer + d + d * v
    }

    fn node(&self, bound: &Bound, suffix: &str) -> Result<NodeId, LMError> {
        let name = self.name(suffix);
        bound.get(&name).ok_or(LMError::MissingParam(name))
    }

    /// Run the transformer over `tokens`, applying `hook` at every layer.
    /// Parameters come pre-entered on the graph via `bound`.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        tokens: &[usize],
        opts: &ForwardOpts,
        hook: &mut dyn LayerHook,
    ) -> Result<LMOutput, LMError> {
        let cfg = &self.cfg;
        let len = tokens.len();
        if len == 0 || len > cfg.max_seq {
            return Err(LMError::SequenceTooLong { len, max_seq: cfg.max_seq });
        }
        let valid_len = if opts.valid_len == 0 { len } else { opts.valid_len };
        if valid_len == 0 || valid_len > len {
            return Err(LMError::BadValidLen { valid_len, len });
        }
        let extra_rows = opts.task_table.map(|t| g.shape(t)[0]).unwrap_or(0);
        let effective_vocab = cfg.vocab + extra_rows;
        if let Some(position) = tokens.iter().position(|&t| t >= effective_vocab) {
            return Err(LMError::TokenOutOfRange {
                position,
                id: tokens[position],
                vocab: effective_vocab,
            });
        }

        let mut tok_table = self.node(bound, "tok_embed")?;
        if let Some(task_table) = opts.task_table {
            tok_table = g.concat(&[tok_table, task_table], 0)?;
        }
        let mut x = g.embed(tok_table, tokens)?;
        if cfg.learned_pos {
            let pos_table = self.node(bound, "pos_embed")?;
            let positions: Vec<usize> = (0..len).collect();
            let pos = g.embed(pos_table, &positions)?;
            x = g.add(x, pos)?;
        }

        let mask = causal_pad_mask(len, valid_len);
        let scale = cfg.scale_value();

        for l in 0..cfg.n_layers {
            let n1g = self.node(bound, &format!("layer{l}.norm1.g"))?;
            let n1 = rms_norm(g, x, n1g, cfg.norm_eps)?;
            let wq = self.node(bound, &format!("layer{l}.attn.wq"))?;
            let wk = self.node(bound, &format!("layer{l}.attn.wk"))?;
            let wv = self.node(bound, &format!("layer{l}.attn.wv"))?;
            let wo = self.node(bound, &format!("layer{l}.attn.wo"))?;
            let q = g.matmul(n1, wq)?;
            let k = g.matmul(n1, wk)?;
            let v = g.matmul(n1, wv)?;
            let (kf, vf) = hook.kv(g, l, k, v)?;
            let attn = multi_head_attention(g, q, kf, vf, &mask, scale, cfg.n_heads, cfg.d_head)?;
            let o = g.matmul(attn, wo)?;
            x = g.add(x, o)?;

            let n2g = self.node(bound, &format!("layer{l}.norm2.g"))?;
            let n2 = rms_norm(g, x, n2g, cfg.norm_eps)?;
            let wgate = self.node(bound, &format!("layer{l}.ff.w_gate"))?;
            let wup = self.node(bound, &format!("layer{l}.ff.w_up"))?;
            let wdown = self.node(bound, &format!("layer{l}.ff.w_down"))?;
            let gate_pre = g.matmul(n2, wgate)?;
            let gate = g.silu(gate_pre)?;
            let up = g.matmul(n2, wup)?;
            let h = g.mul(gate, up)?;
            let h = hook.ff_hidden(g, l, h)?;
            let ff = g.matmul(h, wdown)?;
            x = g.add(x, ff)?;
        }

        let fng = self.node(bound, "final_norm.g")?;
        let hidden = rms_norm(g, x, fng, cfg.norm_eps)?;
        let logits = if opts.need_logits {
            let head = self.node(bound, "lm_head")?;
            Some(g.matmul(hidden, head)?)
        } else {
            None
        };
        let last_hidden = g.slice(hidden, 0, valid_len - 1, valid_len)?;
        Ok(LMOutput { hidden, logits, last_hidden })
    }
}

/// RMS normalization with learned gain: x / sqrt(mean(x^2) + eps) * gain.
pub fn rms_norm(
    g: &mut Graph,
    x: NodeId,
    gain: NodeId,
    eps: f64,
) -> Result<NodeId, TensorError> {
    let rows = g.shape(x)[0];
    let sq = g.mul(x, x)?;
    let ms = g.mean_axis(sq, 1)?;
    let ms = g.reshape(ms, vec![rows, 1])?;
    let ms = g.add_scalar(ms, eps);
    let rms = g.sqrt(ms);
    let xn = g.div(x, rms)?;
    g.mul(xn, gain)
}

/// Causal mask with right-padding: query row i may attend key j only when
/// j <= i and j < valid_len. True entries are masked out.
pub fn causal_pad_mask(len: usize, valid_len: usize) -> Vec<bool> {
    let mut mask = vec![false; len * len];
    for i in 0..len {
        for j in 0..len {
            mask[i * len + j] = j > i || j >= valid_len;
        }
    }
    mask
}

/// Standard multi-head attention over already-projected Q/K/V, all
/// [len, d_model]. Attention maps are tagged for the activation counters.
pub fn multi_head_attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: &[bool],
    scale: f64,
    n_heads: usize,
    d_head: usize,
) -> Result<NodeId, TensorError> {
    let mut parts = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let qh = g.slice(q, 1, lo, hi)?;
        let kh = g.slice(k, 1, lo, hi)?;
        let vh = g.slice(v, 1, lo, hi)?;
        let kt = g.transpose2(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let masked = g.masked_fill(scores, mask, f64::NEG_INFINITY)?;
        let probs = g.softmax(masked)?;
        g.mark_attn_map(probs);
        parts.push(g.matmul(probs, vh)?);
    }
    g.concat(&parts, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> LMConfig {
        LMConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_head: 4,
            d_ff: 12,
            vocab: 16,
            max_seq: 8,
            attn_scale: AttnScale::PerHead,
            norm_eps: 1e-6,
            learned_pos: true,
        }
    }

    // ── independent straight-line forward (no graph) ───────────────────

    fn o_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for j in 0..n {
            for i in 0..m {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn o_rms(x: &mut [f64], gain: &[f64], d: usize, eps: f64) {
        for row in x.chunks_exact_mut(d) {
            let ms: f64 = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = (ms + eps).sqrt();
            for (v, gn) in row.iter_mut().zip(gain) {
                *v = *v / r * gn;
            }
        }
    }

    fn oracle_forward(cfg: &LMConfig, ps: &ParamSet, tokens: &[usize]) -> Vec<f64> {
        let len = tokens.len();
        let d = cfg.d_model;
        let get = |s: &str| &ps.get(&format!("lm.{s}")).unwrap().data;
        let mut x = vec![0.0; len * d];
        for (i, &t) in tokens.iter().enumerate() {
            for c in 0..d {
                x[i * d + c] = get("tok_embed")[t * d + c] + get("pos_embed")[i * d + c];
            }
        }
        let scale = 1.0 / (cfg.d_head as f64).sqrt();
        for l in 0..cfg.n_layers {
            let mut n1 = x.clone();
            o_rms(&mut n1, get(&format!("layer{l}.norm1.g")), d, cfg.norm_eps);
            let q = o_matmul(&n1, get(&format!("layer{l}.attn.wq")), len, d, d);
            let k = o_matmul(&n1, get(&format!("layer{l}.attn.wk")), len, d, d);
            let v = o_matmul(&n1, get(&format!("layer{l}.attn.wv")), len, d, d);
            let mut attn = vec![0.0; len * d];
            for h in 0..cfg.n_heads {
                let off = h * cfg.d_head;
                for i in 0..len {
                    // causal scores for row i
                    let mut w = vec![0.0; i + 1];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..=i {
                        let mut s = 0.0;
                        for c in 0..cfg.d_head {
                            s += q[i * d + off + c] * k[j * d + off + c];
                        }
                        w[j] = s * scale;
                        mx = mx.max(w[j]);
                    }
                    let mut z = 0.0;
                    for wj in w.iter_mut() {
                        *wj = (*wj - mx).exp();
                        z += *wj;
                    }
                    for (j, wj) in w.iter().enumerate() {
                        let p = wj / z;
                        for c in 0..cfg.d_head {
                            attn[i * d + off + c] += p * v[j * d + off + c];
                        }
                    }
                }
            }
            let o = o_matmul(&attn, get(&format!("layer{l}.attn.wo")), len, d, d);
            for (xv, ov) in x.iter_mut().zip(&o) {
                *xv += ov;
            }
            let mut n2 = x.clone();
            o_rms(&mut n2, get(&format!("layer{l}.norm2.g")), d, cfg.norm_eps);
            let gate = o_matmul(&n2, get(&format!("layer{l}.ff.w_gate")), len, d, cfg.d_ff);
            let up = o_matmul(&n2, get(&format!("layer{l}.ff.w_up")), len, d, cfg.d_ff);
            let mut h = vec![0.0; len * cfg.d_ff];
            for i in 0..h.len() {
                let s = 1.0 / (1.0 + (-gate[i]).exp());
                h[i] = gate[i] * s * up[i];
            }
            let ff = o_matmul(&h, get(&format!("layer{l}.ff.w_down")), len, cfg.d_ff, d);
            for (xv, fv) in x.iter_mut().zip(&ff) {
                *xv += fv;
            }
        }
        o_rms(&mut x, get("final_norm.g"), d, cfg.norm_eps);
        o_matmul(&x, get("lm_head"), len, d, cfg.vocab)
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let cfg = tiny_cfg();
        let lm = MicroLM::new(cfg.clone()).unwrap();
        let mut ps = ParamSet::new();
        lm.init_params(&mut ps, 42);
        let tokens = [3usize, 1, 14, 7, 0, 9];
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let out = lm
            .forward(&mut g, &bound, &tokens, &ForwardOpts::default(), &mut NoopHook)
            .unwrap();
        let logits = g.data(out.logits.unwrap());
        let want = oracle_forward(&cfg, &ps, &tokens);
        assert_eq!(logits.len(), want.len());
        let mut worst = 0.0f64;
        for (a, b) in logits.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-10, "max deviation from oracle {worst}");
    }

    #[test]
    fn padding_does_not_change_extraction() {
        let cfg = tiny_cfg();
        let lm = MicroLM::new(cfg).unwrap();
        let mut ps = ParamSet::new();
        lm.init_params(&mut ps, 7);
        let short = [5usize, 2, 11];
        let padded = [5usize, 2, 11, 0, 0, 0];

        let mut g1 = Graph::new();
        let b1 = Bound::new(&mut g1, &ps);
        let o1 = lm
            .forward(&mut g1, &b1, &short, &ForwardOpts::default(), &mut NoopHook)
            .unwrap();
        let mut g2 = Graph::new();
        let b2 = Bound::new(&mut g2, &ps);
        let opts = ForwardOpts { valid_len: 3, ..ForwardOpts::default() };
        let o2 = lm.forward(&mut g2, &b2, &padded, &opts, &mut NoopHook).unwrap();

        let a = g1.data(o1.last_hidden);
        let b = g2.data(o2.last_hidden);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn token_out_of_range_is_an_error() {
        let lm = MicroLM::new(tiny_cfg()).unwrap();
        let mut ps = ParamSet::new();
        lm.init_params(&mut ps, 1);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let err = lm
            .forward(&mut g, &bound, &[3, 99], &ForwardOpts::default(), &mut NoopHook)
            .unwrap_err();
        assert!(matches!(err, LMError::TokenOutOfRange { position: 1, id: 99, .. }));
    }

    #[test]
    fn sequence_too_long_is_an_error() {
        let lm = MicroLM::new(tiny_cfg()).unwrap();
        let mut ps = ParamSet::new();
        lm.init_params(&mut ps, 1);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let err = lm
            .forward(&mut g, &bound, &[0; 9], &ForwardOpts::default(), &mut NoopHook)
            .unwrap_err();
        assert!(matches!(err, LMError::SequenceTooLong { len: 9, max_seq: 8 }));
    }

    #[test]
    fn frozen_base_receives_no_gradients() {
        let lm = MicroLM::new(tiny_cfg()).unwrap();
        let mut ps = ParamSet::new();
        lm.init_params(&mut ps, 3);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let out = lm
            .forward(&mut g, &bound, &[1, 2, 3], &ForwardOpts::default(), &mut NoopHook)
            .unwrap();
        let loss = g.mean_all(out.hidden);
        g.backward(loss).unwrap();
        // no node on the tape carries a gradient: everything is frozen
        for i in 0..g.len() {
            assert!(g.grad(crate::tensor::NodeId(i)).is_none());
        }
    }

    #[test]
    fn count_matches_enumeration_for_toy() {
        let cfg = LMConfig::toy();
        let lm = MicroLM::new(cfg.clone()).unwrap();
        let mut ps = ParamSet::new();
        lm.init_params(&mut ps, 0);
        assert_eq!(MicroLM::count_params(&cfg), ps.total_scalars() as u64);
    }

    #[test]
    fn count_matches_reference_scale_total() {
        // 7B-class geometry: 6,738,415,616 parameters
        assert_eq!(MicroLM::count_params(&LMConfig::paper_scale()), 6_738_415_616);
    }

    #[test]
    fn config_validation_catches_head_mismatch() {
        let mut cfg = tiny_cfg();
        cfg.d_head = 3;
        assert!(MicroLM::new(cfg).is_err());
    }
}
