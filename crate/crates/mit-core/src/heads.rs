//! Task-side plumbing: prompt templates, the byte tokenizer, learned task
//! tokens appended to the vocabulary, embedding-extraction schemas, and the
//! three task heads (mask decoder, classifier, regressor).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::encoders::ImageFeatures;
use crate::lm::ConfigError;
use crate::params::{Bound, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, NodeId, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Seg,
    Cls,
    Msa,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Seg => "seg",
            Task::Cls => "cls",
            Task::Msa => "msa",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "seg" => Some(Task::Seg),
            "cls" => Some(Task::Cls),
            "msa" => Some(Task::Msa),
            _ => None,
        }
    }
}

/// Fixed per-task prompt templates; each has exactly one slot.
pub fn template(task: Task) -> &'static str {
    match task {
        Task::Seg => "Segment the {description} according to the text. #Segmentation:",
        Task::Cls => "Classify the image and text pair. Text: {text}. #Class:",
        Task::Msa => "Predict the sentiment of the utterance. Utterance: {text}. #Sentiment:",
    }
}

pub fn slot_name(task: Task) -> &'static str {
    match task {
        Task::Seg => "description",
        Task::Cls | Task::Msa => "text",
    }
}

#[derive(Clone, Debug)]
pub enum HeadError {
    MissingSlot { slot: &'static str },
    UnknownSlot { slot: String },
    TaskTokenAbsent,
    UnknownTaskToken { name: String },
    MissingParam(String),
    BadSchemaPosition { valid_len: usize },
    Config(ConfigError),
    Tensor(TensorError),
}

impl From<TensorError> for HeadError {
    fn from(e: TensorError) -> Self {
        HeadError::Tensor(e)
    }
}

impl core::fmt::Display for HeadError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            HeadError::MissingSlot { slot } => write!(f, "template slot '{{{slot}}}' not filled"),
            HeadError::UnknownSlot { slot } => write!(f, "template has no slot '{{{slot}}}'"),
            HeadError::TaskTokenAbsent => write!(f, "task-token schema but no task token in prompt"),
            HeadError::UnknownTaskToken { name } => write!(f, "task token '{name}' not registered"),
            HeadError::MissingParam(name) => write!(f, "missing parameter '{name}'"),
            HeadError::BadSchemaPosition { valid_len } => {
                write!(f, "cannot extract embedding from empty prompt (valid_len {valid_len})")
            }
            HeadError::Config(c) => write!(f, "bad head config: {}", c.0),
            HeadError::Tensor(t) => write!(f, "tensor error: {t}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for HeadError {}

/// Fill the task's single slot. Every `{slot}` occurrence must be covered
/// and every provided value must correspond to a slot in the template.
pub fn format_prompt(task: Task, slots: &[(&str, &str)]) -> Result<String, HeadError> {
    let required = slot_name(task);
    let mut value = None;
    for &(name, v) in slots {
        if name != required {
            return Err(HeadError::UnknownSlot { slot: String::from(name) });
        }
        value = Some(v);
    }
    let value = value.ok_or(HeadError::MissingSlot { slot: required })?;
    Ok(template(task).replace(&format!("{{{required}}}"), value))
}

/// Byte-level tokenizer: one token per UTF-8 byte, ids 0..=255.
pub fn tokenize_bytes(text: &str) -> Vec<usize> {
    text.bytes().map(|b| b as usize).collect()
}

pub const PAD_TOKEN: usize = 0;

/// Learned task tokens appended after the byte vocabulary. Registering n
/// tokens grows the effective vocabulary by exactly n.
pub struct TaskTokenTable {
    base_vocab: usize,
    d_model: usize,
    names: Vec<String>,
}

impl TaskTokenTable {
    pub fn new(base_vocab: usize, d_model: usize) -> Self {
        Self { base_vocab, d_model, names: Vec::new() }
    }

    /// Register a token and return its id.
    pub fn register(&mut self, name: &str) -> usize {
        assert!(
            self.names.iter().all(|n| n != name),
            "task token '{name}' registered twice"
        );
        self.names.push(String::from(name));
        self.base_vocab + self.names.len() - 1
    }

    pub fn id_of(&self, name: &str) -> Result<usize, HeadError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.base_vocab + i)
            .ok_or_else(|| HeadError::UnknownTaskToken { name: String::from(name) })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.base_vocab + self.names.len()
    }

    pub fn base_vocab(&self) -> usize {
        self.base_vocab
    }

    /// Insert the trainable embedding rows as `task_tokens`.
    pub fn init_params(&self, ps: &mut ParamSet, seed: u64) {
        assert!(!self.names.is_empty(), "no task tokens registered");
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f64> =
            (0..self.names.len() * self.d_model).map(|_| rng.normal() * 0.02).collect();
        ps.insert("task_tokens", Tensor::new(vec![self.names.len(), self.d_model], data).trainable());
    }

    pub fn node(&self, bound: &Bound) -> Result<NodeId, HeadError> {
        bound.get("task_tokens").ok_or(HeadError::MissingParam(String::from("task_tokens")))
    }
}

/// Where the task embedding is read from the final hidden states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedSchema {
    /// Hidden state of the last real token.
    LastToken,
    /// Hidden state at the first registered task token in the prompt.
    TaskToken,
}

impl EmbedSchema {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "last_token" => Some(EmbedSchema::LastToken),
            "task_token" => Some(EmbedSchema::TaskToken),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EmbedSchema::LastToken => "last_token",
            EmbedSchema::TaskToken => "task_token",
        }
    }
}

/// Slice the [1, d_model] task embedding out of `hidden` per schema.
pub fn extract_embedding(
    g: &mut Graph,
    hidden: NodeId,
    tokens: &[usize],
    valid_len: usize,
    schema: EmbedSchema,
    base_vocab: usize,
) -> Result<NodeId, HeadError> {
    let valid = if valid_len == 0 { tokens.len() } else { valid_len };
    if valid == 0 || valid > tokens.len() {
        return Err(HeadError::BadSchemaPosition { valid_len: valid });
    }
    let row = match schema {
        EmbedSchema::LastToken => valid - 1,
        EmbedSchema::TaskToken => tokens[..valid]
            .iter()
            .position(|&t| t >= base_vocab)
            .ok_or(HeadError::TaskTokenAbsent)?,
    };
    Ok(g.slice(hidden, 0, row, row + 1)?)
}

// ── classification / regression heads ───────────────────────────────────

/// Linear classifier over [task_emb ‖ global image embedding].
pub struct ClsHead {
    pub d_model: usize,
    pub d_modal: usize,
    pub classes: usize,
}

impl ClsHead {
    pub fn init_params(&self, ps: &mut ParamSet, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        let d_in = self.d_model + self.d_modal;
        let scale = 1.0 / crate::mathx::sqrt(d_in as f64);
        let w: Vec<f64> = (0..d_in * self.classes).map(|_| rng.normal() * scale).collect();
        ps.insert("head.cls.w", Tensor::new(vec![d_in, self.classes], w).trainable());
        ps.insert("head.cls.b", Tensor::zeros(vec![self.classes]).trainable());
    }

    /// `task_emb` [1, d_model], `global_img` [1, d_modal] → logits [1, k].
    pub fn logits(
        &self,
        g: &mut Graph,
        bound: &Bound,
        task_emb: NodeId,
        global_img: NodeId,
    ) -> Result<NodeId, HeadError> {
        let w = bound.get("head.cls.w").ok_or(HeadError::MissingParam(String::from("head.cls.w")))?;
        let b = bound.get("head.cls.b").ok_or(HeadError::MissingParam(String::from("head.cls.b")))?;
        let joint = g.concat(&[task_emb, global_img], 1)?;
        let z = g.matmul(joint, w)?;
        Ok(g.add(z, b)?)
    }
}

/// Linear regressor over the task embedding (no output clamp).
pub struct RegHead {
    pub d_model: usize,
}

impl RegHead {
    pub fn init_params(&self, ps: &mut ParamSet, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        let scale = 1.0 / crate::mathx::sqrt(self.d_model as f64);
        let w: Vec<f64> = (0..self.d_model).map(|_| rng.normal() * scale).collect();
        ps.insert("head.reg.w", Tensor::new(vec![self.d_model, 1], w).trainable());
        ps.insert("head.reg.b", Tensor::zeros(vec![1]).trainable());
    }

    /// `task_emb` [1, d_model] → prediction [1, 1].
    pub fn predict(
        &self,
        g: &mut Graph,
        bound: &Bound,
        task_emb: NodeId,
    ) -> Result<NodeId, HeadError> {
        let w = bound.get("head.reg.w").ok_or(HeadError::MissingParam(String::from("head.reg.w")))?;
        let b = bound.get("head.reg.b").ok_or(HeadError::MissingParam(String::from("head.reg.b")))?;
        let z = g.matmul(task_emb, w)?;
        Ok(g.add(z, b)?)
    }
}

// ── mask decoder ─────────────────────────────────────────────────────────

/// Lightweight mask decoder: three blocks, each consuming one feature level
/// (deepest first) plus a broadcast projection of the task embedding through
/// a pointwise (1×1) convolution and tanh, followed by 2× nearest-neighbor
/// upsampling. The block stack ends at a quarter of the pixel count, so the
/// final pointwise head runs at full resolution on bilinearly upsampled
/// block features concatenated with the raw pixels and one more task
/// projection — the raw skip is what lets mask boundaries land between
/// conv cells.
pub struct SegDecoder {
    pub d_model: usize,
    pub d_modal: usize,
    /// Channel widths of the three blocks.
    pub widths: [usize; 3],
    /// Width of the per-block task-embedding projection.
    pub task_dim: usize,
}

const SEG_LEVEL_CH: [usize; 2] = [32, 16]; // channels of levels 2 and 1

impl SegDecoder {
    pub fn toy(d_model: usize, d_modal: usize) -> Self {
        Self { d_model, d_modal, widths: [32, 24, 16], task_dim: 16 }
    }

    fn block_in_ch(&self, i: usize) -> usize {
        let feat = match i {
            0 => self.d_modal,
            1 => self.widths[0] + SEG_LEVEL_CH[0],
            _ => self.widths[1] + SEG_LEVEL_CH[1],
        };
        feat + self.task_dim
    }

    fn mask_in_ch(&self) -> usize {
        self.widths[2] + crate::encoders::IMG_CHANNELS + self.task_dim
    }

    pub fn init_params(&self, ps: &mut ParamSet, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        for i in 0..3 {
            let t_w: Vec<f64> =
                (0..self.d_model * self.task_dim).map(|_| rng.normal() * 0.3).collect();
            ps.insert(
                &format!("head.seg.block{i}.t_w"),
                Tensor::new(vec![self.d_model, self.task_dim], t_w).trainable(),
            );
            ps.insert(&format!("head.seg.block{i}.t_b"), Tensor::zeros(vec![self.task_dim]).trainable());
            let d_in = self.block_in_ch(i);
            let scale = 1.0 / crate::mathx::sqrt(d_in as f64);
            let w: Vec<f64> = (0..d_in * self.widths[i]).map(|_| rng.normal() * scale).collect();
            ps.insert(
                &format!("head.seg.block{i}.w"),
                Tensor::new(vec![d_in, self.widths[i]], w).trainable(),
            );
            ps.insert(&format!("head.seg.block{i}.b"), Tensor::zeros(vec![self.widths[i]]).trainable());
        }
        let t_w: Vec<f64> = (0..self.d_model * self.task_dim).map(|_| rng.normal() * 0.3).collect();
        ps.insert(
            "head.seg.mask.t_w",
            Tensor::new(vec![self.d_model, self.task_dim], t_w).trainable(),
        );
        ps.insert("head.seg.mask.t_b", Tensor::zeros(vec![self.task_dim]).trainable());
        let d_in = self.mask_in_ch();
        let scale = 1.0 / crate::mathx::sqrt(d_in as f64);
        let w: Vec<f64> = (0..d_in).map(|_| rng.normal() * scale).collect();
        ps.insert("head.seg.mask.w", Tensor::new(vec![d_in, 1], w).trainable());
        // Bias the head toward the empty mask: targets cover a few percent
        // of pixels, and starting sigmoid probabilities at 0.5 makes the
        // DICE denominator gradient collapse everything toward zero before
        // the intersection term can separate figure from ground.
        ps.insert("head.seg.mask.b", Tensor::full(vec![1], -3.0).trainable());
    }

    pub fn count_params(&self) -> u64 {
        let mut total = 0u64;
        for i in 0..3 {
            total += (self.d_model * self.task_dim + self.task_dim) as u64;
            total += (self.block_in_ch(i) * self.widths[i] + self.widths[i]) as u64;
        }
        total += (self.d_model * self.task_dim + self.task_dim) as u64;
        total + self.mask_in_ch() as u64 + 1
    }

    fn node(&self, bound: &Bound, name: &str) -> Result<NodeId, HeadError> {
        bound.get(name).ok_or_else(|| HeadError::MissingParam(String::from(name)))
    }

    /// Decode mask logits [H·W] from image features and the task embedding.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        feats: &ImageFeatures,
        task_emb: NodeId,
    ) -> Result<NodeId, HeadError> {
        // deepest level first; block i doubles resolution
        let order = [2usize, 1, 0];
        let mut x: Option<NodeId> = None;
        let mut rows = feats.levels[2].rows;
        let mut cols = feats.levels[2].cols;
        for (i, &li) in order.iter().enumerate() {
            let level = &feats.levels[li];
            assert_eq!((level.rows, level.cols), (rows, cols), "pyramid level shape drift");
            let cells = rows * cols;
            let feat = g.constant(vec![cells, level.channels], level.data.clone());
            let t_w = self.node(bound, &format!("head.seg.block{i}.t_w"))?;
            let t_b = self.node(bound, &format!("head.seg.block{i}.t_b"))?;
            let t_lin = g.matmul(task_emb, t_w)?;
            let t_aff = g.add(t_lin, t_b)?;
            let t_act = g.tanh(t_aff);
            let t_rep = g.repeat_rows(t_act, cells)?;
            let joined = match x {
                None => g.concat(&[feat, t_rep], 1)?,
                Some(prev) => g.concat(&[prev, feat, t_rep], 1)?,
            };
            let w = self.node(bound, &format!("head.seg.block{i}.w"))?;
            let b = self.node(bound, &format!("head.seg.block{i}.b"))?;
            let z = g.matmul(joined, w)?;
            let z = g.add(z, b)?;
            let act = g.tanh(z);
            let grid = g.reshape(act, vec![rows, cols, self.widths[i]])?;
            let up = g.upsample2d(grid, 2, false)?;
            rows *= 2;
            cols *= 2;
            x = Some(g.reshape(up, vec![rows * cols, self.widths[i]])?);
        }
        let x = x.expect("three blocks ran");
        // full-resolution head: bilinear feature upsample + raw-pixel skip
        let grid = g.reshape(x, vec![rows, cols, self.widths[2]])?;
        let up = g.upsample2d(grid, 2, true)?;
        rows *= 2;
        cols *= 2;
        assert_eq!((rows, cols), (feats.raw.rows, feats.raw.cols), "raw skip resolution");
        let x = g.reshape(up, vec![rows * cols, self.widths[2]])?;
        let raw = g.constant(vec![rows * cols, feats.raw.channels], feats.raw.data.clone());
        let t_w = self.node(bound, "head.seg.mask.t_w")?;
        let t_b = self.node(bound, "head.seg.mask.t_b")?;
        let t_lin = g.matmul(task_emb, t_w)?;
        let t_aff = g.add(t_lin, t_b)?;
        let t_act = g.tanh(t_aff);
        let t_rep = g.repeat_rows(t_act, rows * cols)?;
        let joined = g.concat(&[x, raw, t_rep], 1)?;
        let w = self.node(bound, "head.seg.mask.w")?;
        let b = self.node(bound, "head.seg.mask.b")?;
        let z = g.matmul(joined, w)?;
        let z = g.add(z, b)?;
        Ok(g.reshape(z, vec![rows * cols])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ImageEncoder;

    #[test]
    fn templates_are_pinned() {
        assert_eq!(
            template(Task::Seg),
            "Segment the {description} according to the text. #Segmentation:"
        );
        assert_eq!(template(Task::Cls), "Classify the image and text pair. Text: {text}. #Class:");
        assert_eq!(
            template(Task::Msa),
            "Predict the sentiment of the utterance. Utterance: {text}. #Sentiment:"
        );
    }

    #[test]
    fn format_prompt_substitutes_slot() {
        let p = format_prompt(Task::Seg, &[("description", "red ball")]).unwrap();
        assert_eq!(p, "Segment the red ball according to the text. #Segmentation:");
        let c = format_prompt(Task::Cls, &[("text", "a cat")]).unwrap();
        assert_eq!(c, "Classify the image and text pair. Text: a cat. #Class:");
    }

    #[test]
    fn format_prompt_rejects_missing_and_unknown_slots() {
        assert!(matches!(
            format_prompt(Task::Seg, &[]),
            Err(HeadError::MissingSlot { slot: "description" })
        ));
        assert!(matches!(
            format_prompt(Task::Msa, &[("utterance", "hi")]),
            Err(HeadError::UnknownSlot { .. })
        ));
    }

    #[test]
    fn byte_tokenizer_is_byte_identity() {
        let toks = tokenize_bytes("Ab 0!");
        assert_eq!(toks, vec![65, 98, 32, 48, 33]);
        assert!(tokenize_bytes("#Segmentation:").iter().all(|&t| t < 256));
    }

    #[test]
    fn task_tokens_extend_vocab_by_registration_count() {
        let mut table = TaskTokenTable::new(256, 16);
        let seg = table.register("<SEG>");
        let cls = table.register("<CLS>");
        assert_eq!((seg, cls), (256, 257));
        assert_eq!(table.vocab_size(), 258);
        assert_eq!(table.id_of("<SEG>").unwrap(), 256);
        assert!(matches!(
            table.id_of("<REG>"),
            Err(HeadError::UnknownTaskToken { .. })
        ));
        let mut ps = ParamSet::new();
        table.init_params(&mut ps, 3);
        assert_eq!(ps.get("task_tokens").unwrap().shape, vec![2, 16]);
        assert_eq!(ps.trainable_scalars(), 2 * 16);
    }

    #[test]
    fn extract_embedding_schemas() {
        let mut g = Graph::new();
        let hidden = g.constant(vec![4, 2], vec![0.0, 0.1, 1.0, 1.1, 2.0, 2.1, 3.0, 3.1]);
        // last real token at row 2 (valid_len 3)
        let last = extract_embedding(&mut g, hidden, &[5, 6, 7, 0], 3, EmbedSchema::LastToken, 256)
            .unwrap();
        assert_eq!(g.data(last), &[2.0, 2.1]);
        // task token id 256 sits at row 1
        let task =
            extract_embedding(&mut g, hidden, &[5, 256, 7, 0], 3, EmbedSchema::TaskToken, 256)
                .unwrap();
        assert_eq!(g.data(task), &[1.0, 1.1]);
        let err =
            extract_embedding(&mut g, hidden, &[5, 6, 7, 0], 3, EmbedSchema::TaskToken, 256)
                .unwrap_err();
        assert!(matches!(err, HeadError::TaskTokenAbsent));
    }

    #[test]
    fn cls_and_reg_heads_have_expected_shapes_and_grads() {
        let cls = ClsHead { d_model: 8, d_modal: 6, classes: 3 };
        let reg = RegHead { d_model: 8 };
        let mut ps = ParamSet::new();
        cls.init_params(&mut ps, 1);
        reg.init_params(&mut ps, 2);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let emb_t = Tensor::new(vec![1, 8], vec![0.1; 8]).trainable();
        let emb = g.leaf(&emb_t);
        let img = g.constant(vec![1, 6], vec![0.2; 6]);
        let logits = cls.logits(&mut g, &bound, emb, img).unwrap();
        assert_eq!(g.shape(logits), &[1, 3]);
        let pred = reg.predict(&mut g, &bound, emb).unwrap();
        assert_eq!(g.shape(pred), &[1, 1]);
        let l1 = g.mean_all(logits);
        let l2 = g.mean_all(pred);
        let total = g.add(l1, l2).unwrap();
        g.backward(total).unwrap();
        assert!(g.grad(bound.get("head.cls.w").unwrap()).is_some());
        assert!(g.grad(bound.get("head.reg.w").unwrap()).is_some());
        assert!(g.grad(emb).is_some());
    }

    fn toy_features(hw: usize) -> ImageFeatures {
        let enc = ImageEncoder::new(32).unwrap();
        let mut ps = ParamSet::new();
        enc.init_params(&mut ps, 5);
        let mut rng = SplitMix64::new(11);
        let img: Vec<f64> = (0..hw * hw * 3).map(|_| rng.next_f64()).collect();
        enc.encode(&ps, &img, hw, hw).unwrap()
    }

    #[test]
    fn seg_decoder_matches_input_resolution() {
        for hw in [32usize, 64] {
            let feats = toy_features(hw);
            let dec = SegDecoder::toy(8, 32);
            let mut ps = ParamSet::new();
            dec.init_params(&mut ps, 4);
            let mut g = Graph::new();
            let bound = Bound::new(&mut g, &ps);
            let emb_t = Tensor::new(vec![1, 8], vec![0.3; 8]).trainable();
            let emb = g.leaf(&emb_t);
            let logits = dec.forward(&mut g, &bound, &feats, emb).unwrap();
            assert_eq!(g.shape(logits), &[hw * hw]);
            assert!(g.data(logits).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn seg_decoder_gradient_reaches_task_embedding() {
        let feats = toy_features(32);
        let dec = SegDecoder::toy(8, 32);
        let mut ps = ParamSet::new();
        dec.init_params(&mut ps, 4);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let emb_t = Tensor::new(vec![1, 8], vec![0.3; 8]).trainable();
        let emb = g.leaf(&emb_t);
        let logits = dec.forward(&mut g, &bound, &feats, emb).unwrap();
        let loss = g.mean_all(logits);
        g.backward(loss).unwrap();
        let grad = g.grad(emb).expect("task embedding grad missing");
        assert!(grad.iter().any(|&v| v != 0.0));
        for i in 0..3 {
            assert!(g.grad(bound.get(&format!("head.seg.block{i}.w")).unwrap()).is_some());
        }
    }

    #[test]
    fn seg_decoder_count_matches_enumeration() {
        let dec = SegDecoder::toy(64, 32);
        let mut ps = ParamSet::new();
        dec.init_params(&mut ps, 4);
        assert_eq!(dec.count_params(), ps.total_scalars() as u64);
    }

    #[test]
    fn task_table_rows_reach_lm_embedding() {
        use crate::lm::{ForwardOpts, MicroLM, NoopHook};
        let cfg = crate::lm::LMConfig::toy();
        let lm = MicroLM::new(cfg.clone()).unwrap();
        let mut ps = ParamSet::new();
        lm.init_params(&mut ps, 1);
        let mut table = TaskTokenTable::new(cfg.vocab, cfg.d_model);
        let seg_id = table.register("<SEG>");
        table.init_params(&mut ps, 9);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let task_node = table.node(&bound).unwrap();
        let tokens = [72usize, 105, seg_id];
        let opts = ForwardOpts { task_table: Some(task_node), ..ForwardOpts::default() };
        let out = lm.forward(&mut g, &bound, &tokens, &opts, &mut NoopHook).unwrap();
        let loss = g.mean_all(out.last_hidden);
        g.backward(loss).unwrap();
        let grad = g.grad(task_node).expect("task token rows frozen out of graph");
        assert!(grad.iter().any(|&v| v != 0.0));
        // without the table the id is rejected
        let mut g2 = Graph::new();
        let bound2 = Bound::new(&mut g2, &ps);
        let err = lm
            .forward(&mut g2, &bound2, &tokens, &ForwardOpts::default(), &mut crate::lm::NoopHook)
            .unwrap_err();
        assert!(matches!(err, crate::lm::LMError::TokenOutOfRange { .. }));
    }
}
