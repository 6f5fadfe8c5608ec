//! Modality encoders: a frozen convolutional toy image encoder (the
//! pretrained-CLIP stand-in) producing a global embedding plus multi-level
//! feature maps, and a trainable 3-block transformer encoder for
//! acoustic/facial feature sequences.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::lm::{multi_head_attention, rms_norm, ConfigError};
use crate::mathx;
use crate::params::{Bound, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Clone, Debug)]
pub enum EncoderError {
    BadDims { h: usize, w: usize },
    BadRange { value: f64 },
    EmptySequence,
    MissingParam(String),
    Config(ConfigError),
    Tensor(TensorError),
}

impl From<TensorError> for EncoderError {
    fn from(e: TensorError) -> Self {
        EncoderError::Tensor(e)
    }
}

impl core::fmt::Display for EncoderError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EncoderError::BadDims { h, w } => {
                write!(f, "image dims {h}x{w} must be positive and divisible by 16")
            }
            EncoderError::BadRange { value } => {
                write!(f, "pixel value {value} outside [0,1]")
            }
            EncoderError::EmptySequence => write!(f, "sequence encoder needs at least one step"),
            EncoderError::MissingParam(name) => write!(f, "missing parameter '{name}'"),
            EncoderError::Config(c) => write!(f, "bad encoder config: {}", c.0),
            EncoderError::Tensor(t) => write!(f, "tensor error: {t}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EncoderError {}

/// One pyramid level: row-major [rows, cols, channels] features.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Output of the frozen image encoder: strides {4, 8, 16} with channel
/// counts {16, 32, d_modal}, plus the pooled global embedding and the raw
/// pixels (the decoder's full-resolution skip — conv cells are 4 px wide,
/// too coarse to place mask boundaries on their own).
#[derive(Clone, Debug)]
pub struct ImageFeatures {
    pub global: Vec<f64>,
    pub levels: [FeatureMap; 3],
    pub raw: FeatureMap,
}

pub const IMG_CHANNELS: usize = 3;
const L1_CH: usize = 16;
const L2_CH: usize = 32;

impl ImageFeatures {
    /// The all-zero bundle with the shapes `encode` would produce for an
    /// h×w image. The text-only baseline feeds this to the heads in place
    /// of real features so that no pixel information reaches them.
    pub fn blind(d_modal: usize, h: usize, w: usize) -> Self {
        let zmap = |stride: usize, channels: usize| FeatureMap {
            rows: h / stride,
            cols: w / stride,
            channels,
            data: vec![0.0; (h / stride) * (w / stride) * channels],
        };
        ImageFeatures {
            global: vec![0.0; d_modal],
            levels: [zmap(4, L1_CH), zmap(8, L2_CH), zmap(16, d_modal)],
            raw: zmap(1, IMG_CHANNELS),
        }
    }
}

/// Frozen toy image encoder: three strided patch convolutions with tanh,
/// a sinusoidal position code folded into the deepest level (so the pooled
/// global vector keeps coarse location information), and a frozen linear
/// map over the mean-pooled final level.
pub struct ImageEncoder {
    pub d_modal: usize,
}

impl ImageEncoder {
    pub fn new(d_modal: usize) -> Result<Self, ConfigError> {
        if d_modal == 0 {
            return Err(ConfigError(String::from("d_modal must be positive")));
        }
        Ok(Self { d_modal })
    }

    /// Insert the frozen weights under `img_enc.*`.
    pub fn init_params(&self, ps: &mut ParamSet, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        let conv = |rng: &mut SplitMix64, k: usize, cin: usize, cout: usize| {
            let fan_in = (k * k * cin) as f64;
            let scale = 1.5 / mathx::sqrt(fan_in);
            let data: Vec<f64> = (0..k * k * cin * cout).map(|_| rng.normal() * scale).collect();
            Tensor::new(vec![k * k * cin, cout], data)
        };
        ps.insert("img_enc.conv1.w", conv(&mut rng, 4, IMG_CHANNELS, L1_CH));
        ps.insert("img_enc.conv1.b", Tensor::zeros(vec![L1_CH]));
        ps.insert("img_enc.conv2.w", conv(&mut rng, 2, L1_CH, L2_CH));
        ps.insert("img_enc.conv2.b", Tensor::zeros(vec![L2_CH]));
        ps.insert("img_enc.conv3.w", conv(&mut rng, 2, L2_CH, self.d_modal));
        ps.insert("img_enc.conv3.b", Tensor::zeros(vec![self.d_modal]));
        let pos: Vec<f64> = (0..4 * self.d_modal).map(|_| rng.normal() * 0.5).collect();
        ps.insert("img_enc.pos.w", Tensor::new(vec![4, self.d_modal], pos));
        let gscale = 1.0 / mathx::sqrt(self.d_modal as f64);
        let gw: Vec<f64> =
            (0..self.d_modal * self.d_modal).map(|_| rng.normal() * gscale).collect();
        ps.insert("img_enc.global.w", Tensor::new(vec![self.d_modal, self.d_modal], gw));
        ps.insert("img_enc.global.b", Tensor::zeros(vec![self.d_modal]));
    }

    /// Encode an [h, w, 3] image in [0,1]. Runs outside any graph: the
    /// encoder is frozen, so features are plain constants.
    pub fn encode(
        &self,
        ps: &ParamSet,
        img: &[f64],
        h: usize,
        w: usize,
    ) -> Result<ImageFeatures, EncoderError> {
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(EncoderError::BadDims { h, w });
        }
        assert_eq!(img.len(), h * w * IMG_CHANNELS, "image buffer size mismatch");
        if let Some(&bad) = img.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(EncoderError::BadRange { value: bad });
        }
        let p = |name: &str| &ps.get(name).expect("image encoder not initialized").data;

        let mut l1 = patch_conv(img, h, w, IMG_CHANNELS, 4, p("img_enc.conv1.w"), p("img_enc.conv1.b"), L1_CH);
        tanh_inplace(&mut l1.data);
        let mut l2 = patch_conv(&l1.data, l1.rows, l1.cols, L1_CH, 2, p("img_enc.conv2.w"), p("img_enc.conv2.b"), L2_CH);
        tanh_inplace(&mut l2.data);
        let mut l3 = patch_conv(&l2.data, l2.rows, l2.cols, L2_CH, 2, p("img_enc.conv3.w"), p("img_enc.conv3.b"), self.d_modal);
        // fold a deterministic position code into the deepest level so
        // mean pooling cannot erase coarse location
        let pos_w = p("img_enc.pos.w");
        for r in 0..l3.rows {
            for c in 0..l3.cols {
                let code = pos_code(r, c, l3.rows, l3.cols);
                let cell = &mut l3.data[(r * l3.cols + c) * self.d_modal..][..self.d_modal];
                for (j, x) in cell.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (k, &cv) in code.iter().enumerate() {
                        s += cv * pos_w[k * self.d_modal + j];
                    }
                    *x += s;
                }
            }
        }
        tanh_inplace(&mut l3.data);

        let cells = l3.rows * l3.cols;
        let mut pooled = vec![0.0; self.d_modal];
        for cell in l3.data.chunks_exact(self.d_modal) {
            for (a, &b) in pooled.iter_mut().zip(cell) {
                *a += b;
            }
        }
        for a in pooled.iter_mut() {
            *a /= cells as f64;
        }
        let gw = p("img_enc.global.w");
        let gb = p("img_enc.global.b");
        let mut global = gb.clone();
        for (k, &pv) in pooled.iter().enumerate() {
            for (j, gvar) in global.iter_mut().enumerate() {
                *gvar += pv * gw[k * self.d_modal + j];
            }
        }
        let raw = FeatureMap { rows: h, cols: w, channels: IMG_CHANNELS, data: img.to_vec() };
        Ok(ImageFeatures { global, levels: [l1, l2, l3], raw })
    }
}

/// Non-overlapping k×k patch convolution (stride = kernel size).
fn patch_conv(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> FeatureMap {
    let (rows, cols) = (h / k, w / k);
    let mut data = vec![0.0; rows * cols * cout];
    for r in 0..rows {
        for c in 0..cols {
            let out_cell = &mut data[(r * cols + c) * cout..(r * cols + c + 1) * cout];
            out_cell.copy_from_slice(bias);
            for kr in 0..k {
                for kc in 0..k {
                    let in_base = ((r * k + kr) * w + (c * k + kc)) * cin;
                    let w_base = (kr * k + kc) * cin;
                    for ci in 0..cin {
                        let xv = input[in_base + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &weight[(w_base + ci) * cout..(w_base + ci + 1) * cout];
                        for (o, &wv) in out_cell.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
    FeatureMap { rows, cols, channels: cout, data }
}

fn tanh_inplace(data: &mut [f64]) {
    for v in data.iter_mut() {
        *v = mathx::tanh(*v);
    }
}

/// Smooth 4-component position code over normalized cell centers.
fn pos_code(r: usize, c: usize, rows: usize, cols: usize) -> [f64; 4] {
    let pi = core::f64::consts::PI;
    let y = (r as f64 + 0.5) / rows as f64;
    let x = (c as f64 + 0.5) / cols as f64;
    [mathx::sin(pi * y), mathx::cos(pi * y), mathx::sin(pi * x), mathx::cos(pi * x)]
}

// ── trainable sequence encoder ──────────────────────────────────────────

/// Output nodes of the sequence encoder.
pub struct SeqFeatures {
    /// [L_seq, d_model] final hidden states.
    pub per_step: NodeId,
    /// [1, d_model] mean over steps.
    pub pooled: NodeId,
}

/// Three-block bidirectional transformer encoder for feature sequences
/// (acoustic/facial). Structure mirrors the decoder blocks: pre-RMS-norm,
/// 2-head attention (no causal mask), SwiGLU feed-forward.
pub struct SeqEncoder {
    pub prefix: String,
    pub d_in: usize,
    pub d_model: usize,
    pub max_steps: usize,
}

pub const SEQ_ENC_LAYERS: usize = 3;
pub const SEQ_ENC_HEADS: usize = 2;
const NORM_EPS: f64 = 1e-6;

impl SeqEncoder {
    pub fn new(prefix: &str, d_in: usize, d_model: usize, max_steps: usize) -> Result<Self, ConfigError> {
        if d_in == 0 || d_model == 0 || max_steps == 0 {
            return Err(ConfigError(String::from("sequence encoder dims must be positive")));
        }
        if d_model % SEQ_ENC_HEADS != 0 {
            return Err(ConfigError(format!(
                "d_model {d_model} must divide into {SEQ_ENC_HEADS} heads"
            )));
        }
        Ok(Self { prefix: String::from(prefix), d_in, d_model, max_steps })
    }

    fn d_ff(&self) -> usize {
        2 * self.d_model
    }

    /// Insert weights under `{prefix}.*`; trainable unless frozen.
    pub fn init_params(&self, ps: &mut ParamSet, seed: u64, trainable: bool) {
        let mut rng = SplitMix64::new(seed);
        let d = self.d_model;
        let mat = |rng: &mut SplitMix64, r: usize, c: usize, scale: f64| {
            let data: Vec<f64> = (0..r * c).map(|_| rng.normal() * scale).collect();
            let t = Tensor::new(vec![r, c], data);
            if trainable {
                t.trainable()
            } else {
                t
            }
        };
        let flag = |t: Tensor| if trainable { t.trainable() } else { t };
        let s = 1.0 / mathx::sqrt(d as f64);
        ps.insert(&format!("{}.in_proj.w", self.prefix), mat(&mut rng, self.d_in, d, 0.3));
        ps.insert(&format!("{}.in_proj.b", self.prefix), flag(Tensor::zeros(vec![d])));
        ps.insert(&format!("{}.pos", self.prefix), mat(&mut rng, self.max_steps, d, 0.1));
        for l in 0..SEQ_ENC_LAYERS {
            for nm in ["wq", "wk", "wv", "wo"] {
                ps.insert(&format!("{}.layer{l}.attn.{nm}", self.prefix), mat(&mut rng, d, d, s));
            }
            ps.insert(&format!("{}.layer{l}.norm1.g", self.prefix), flag(Tensor::full(vec![d], 1.0)));
            ps.insert(&format!("{}.layer{l}.norm2.g", self.prefix), flag(Tensor::full(vec![d], 1.0)));
            ps.insert(&format!("{}.layer{l}.ff.w_gate", self.prefix), mat(&mut rng, d, self.d_ff(), s));
            ps.insert(&format!("{}.layer{l}.ff.w_up", self.prefix), mat(&mut rng, d, self.d_ff(), s));
            ps.insert(&format!("{}.layer{l}.ff.w_down", self.prefix), mat(&mut rng, self.d_ff(), d, s));
        }
        ps.insert(&format!("{}.final_norm.g", self.prefix), flag(Tensor::full(vec![d], 1.0)));
    }

    /// Closed-form parameter count (matches enumeration).
    pub fn count_params(&self) -> u64 {
        let (d, f) = (self.d_model as u64, self.d_ff() as u64);
        let embed = self.d_in as u64 * d + d + self.max_steps as u64 * d;
        let per_layer = 4 * d * d + 2 * d + 3 * d * f;
        embed + SEQ_ENC_LAYERS as u64 * per_layer + d
    }

    fn node(&self, bound: &Bound, suffix: &str) -> Result<NodeId, EncoderError> {
        let name = format!("{}.{}", self.prefix, suffix);
        bound.get(&name).ok_or(EncoderError::MissingParam(name))
    }

    /// Encode an [L, d_in] feature sequence already flattened row-major.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: &[f64],
        steps: usize,
    ) -> Result<SeqFeatures, EncoderError> {
        if steps == 0 {
            return Err(EncoderError::EmptySequence);
        }
        if steps > self.max_steps {
            return Err(EncoderError::Config(ConfigError(format!(
                "sequence of {steps} steps exceeds max {}",
                self.max_steps
            ))));
        }
        assert_eq!(x.len(), steps * self.d_in, "sequence buffer size mismatch");
        let d = self.d_model;
        let input = g.constant(vec![steps, self.d_in], x.to_vec());
        let wi = self.node(bound, "in_proj.w")?;
        let bi = self.node(bound, "in_proj.b")?;
        let proj = g.matmul(input, wi)?;
        let mut h = g.add(proj, bi)?;
        let pos_table = self.node(bound, "pos")?;
        let ids: Vec<usize> = (0..steps).collect();
        let pos = g.embed(pos_table, &ids)?;
        h = g.add(h, pos)?;

        let mask = vec![false; steps * steps]; // bidirectional
        let scale = 1.0 / mathx::sqrt((d / SEQ_ENC_HEADS) as f64);
        for l in 0..SEQ_ENC_LAYERS {
            let n1g = self.node(bound, &format!("layer{l}.norm1.g"))?;
            let n1 = rms_norm(g, h, n1g, NORM_EPS)?;
            let wq = self.node(bound, &format!("layer{l}.attn.wq"))?;
            let wk = self.node(bound, &format!("layer{l}.attn.wk"))?;
            let wv = self.node(bound, &format!("layer{l}.attn.wv"))?;
            let wo = self.node(bound, &format!("layer{l}.attn.wo"))?;
            let q = g.matmul(n1, wq)?;
            let k = g.matmul(n1, wk)?;
            let v = g.matmul(n1, wv)?;
            let attn =
                multi_head_attention(g, q, k, v, &mask, scale, SEQ_ENC_HEADS, d / SEQ_ENC_HEADS)?;
            let o = g.matmul(attn, wo)?;
            h = g.add(h, o)?;

            let n2g = self.node(bound, &format!("layer{l}.norm2.g"))?;
            let n2 = rms_norm(g, h, n2g, NORM_EPS)?;
            let wgate = self.node(bound, &format!("layer{l}.ff.w_gate"))?;
            let wup = self.node(bound, &format!("layer{l}.ff.w_up"))?;
            let wdown = self.node(bound, &format!("layer{l}.ff.w_down"))?;
            let gate_pre = g.matmul(n2, wgate)?;
            let gate = g.silu(gate_pre)?;
            let up = g.matmul(n2, wup)?;
            let mid = g.mul(gate, up)?;
            let ff = g.matmul(mid, wdown)?;
            h = g.add(h, ff)?;
        }
        let fg = self.node(bound, "final_norm.g")?;
        let per_step = rms_norm(g, h, fg, NORM_EPS)?;
        let pooled_flat = g.mean_axis(per_step, 0)?;
        let pooled = g.reshape(pooled_flat, vec![1, d])?;
        Ok(SeqFeatures { per_step, pooled })
    }
}
