//! End-to-end task pipelines: frozen language model + modality encoders +
//! infusion + task head, assembled per task with a single loss entry point
//! shared by the trainer and the evaluators.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::encoders::{EncoderError, ImageEncoder, ImageFeatures, SeqEncoder};
use crate::heads::{
    extract_embedding, format_prompt, slot_name, tokenize_bytes, ClsHead, EmbedSchema, HeadError,
    RegHead, SegDecoder, Task, TaskTokenTable,
};
use crate::infusion::{init_infusion, MiTConfig, MiTHook};
use crate::lm::{ConfigError, ForwardOpts, LMConfig, LMError, LayerHook, MicroLM, NoopHook};
use crate::loss::{cross_entropy_logits, dice_loss, mse_loss};
use crate::metrics;
use crate::params::{Bound, ParamSet};
use crate::rng::SplitMix64;
use crate::synth::{
    ClsSample, MsaSample, SegSample, CLS_CLASSES, MSA_ACOUSTIC_DIM, MSA_FACIAL_DIM, MSA_MAX_STEPS,
    SEG_IMG,
};
use crate::tensor::{Graph, NodeId, TensorError};
use crate::train::{TrainConfig, TrainError, TrainOutcome};

#[derive(Clone, Debug)]
pub enum PipelineError {
    Lm(LMError),
    Head(HeadError),
    Encoder(EncoderError),
    Config(ConfigError),
    Tensor(TensorError),
    Data(String),
}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for PipelineError {
            fn from(e: $ty) -> Self {
                PipelineError::$variant(e)
            }
        }
    };
}
from_err!(Lm, LMError);
from_err!(Head, HeadError);
from_err!(Encoder, EncoderError);
from_err!(Config, ConfigError);
from_err!(Tensor, TensorError);

impl core::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PipelineError::Lm(e) => write!(f, "{e}"),
            PipelineError::Head(e) => write!(f, "{e}"),
            PipelineError::Encoder(e) => write!(f, "{e}"),
            PipelineError::Config(e) => write!(f, "bad pipeline config: {}", e.0),
            PipelineError::Tensor(e) => write!(f, "{e}"),
            PipelineError::Data(msg) => write!(f, "bad data: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PipelineError {}

/// Which non-text modalities feed the fused infusion vector (MSA only;
/// the vision tasks always use the image).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MsaModalities {
    pub acoustic: bool,
    pub facial: bool,
}

impl Default for MsaModalities {
    fn default() -> Self {
        Self { acoustic: true, facial: true }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub task: Task,
    pub lm: LMConfig,
    /// None trains the text-only baseline: besides dropping the infusion
    /// hook, every modal input to the heads is zeroed (image features for
    /// seg/cls, sequence encoders for msa), so the baseline carries no
    /// image/acoustic/facial information at all and any score above the
    /// text-only floor certifies information flow through the conditioning
    /// path rather than through a head-side shortcut.
    pub mit: Option<MiTConfig>,
    pub schema: EmbedSchema,
    /// Width of the modal embedding and of the modality encoders.
    pub d_modal: usize,
    pub msa_modalities: MsaModalities,
    /// Seed for every parameter initialization in the bundle.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn toy(task: Task) -> Self {
        let mit = MiTConfig::toy();
        Self {
            task,
            lm: LMConfig::toy(),
            d_modal: mit.d_modal,
            mit: Some(mit),
            schema: match task {
                Task::Seg | Task::Cls => EmbedSchema::TaskToken,
                Task::Msa => EmbedSchema::LastToken,
            },
            msa_modalities: MsaModalities::default(),
            seed: 7,
        }
    }
}

/// Task datasets the pipeline consumes.
#[derive(Clone, Debug)]
pub enum TaskData {
    Seg(Vec<SegSample>),
    Cls(Vec<ClsSample>),
    Msa(Vec<MsaSample>),
}

impl TaskData {
    pub fn len(&self) -> usize {
        match self {
            TaskData::Seg(v) => v.len(),
            TaskData::Cls(v) => v.len(),
            TaskData::Msa(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            TaskData::Seg(_) => Task::Seg,
            TaskData::Cls(_) => Task::Cls,
            TaskData::Msa(_) => Task::Msa,
        }
    }
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    lm: MicroLM,
    table: TaskTokenTable,
    task_token_id: Option<usize>,
    img_enc: Option<ImageEncoder>,
    seg_dec: Option<SegDecoder>,
    cls_head: Option<ClsHead>,
    reg_head: Option<RegHead>,
    enc_acoustic: Option<SeqEncoder>,
    enc_facial: Option<SeqEncoder>,
    /// Frozen image features keyed by sample index; one pipeline serves
    /// one dataset.
    feature_cache: RefCell<BTreeMap<usize, Rc<ImageFeatures>>>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        if let Some(mit) = &cfg.mit {
            mit.validate(&cfg.lm)?;
            if mit.d_modal != cfg.d_modal {
                return Err(PipelineError::Config(ConfigError(format!(
                    "infusion d_modal {} disagrees with encoder width {}",
                    mit.d_modal, cfg.d_modal
                ))));
            }
        }
        let lm = MicroLM::new(cfg.lm.clone())?;
        let mut table = TaskTokenTable::new(cfg.lm.vocab, cfg.lm.d_model);
        // The learned task token exists only under the task-token schema;
        // the last-token schema reads the prompt's final byte instead.
        let task_token_id = match cfg.schema {
            EmbedSchema::LastToken => None,
            EmbedSchema::TaskToken => Some(table.register(match cfg.task {
                Task::Seg => "<SEG>",
                Task::Cls => "<CLS>",
                Task::Msa => "<MSA>",
            })),
        };
        let mut pipe = Self {
            lm,
            table,
            task_token_id,
            img_enc: None,
            seg_dec: None,
            cls_head: None,
            reg_head: None,
            enc_acoustic: None,
            enc_facial: None,
            feature_cache: RefCell::new(BTreeMap::new()),
            cfg,
        };
        let cfg = &pipe.cfg;
        // Like the sequence encoders below, the image encoder only exists
        // when infusion does; the text-only ablation (mit: None) replaces
        // its output with a shared zeroed bundle so the heads never see a
        // pixel.
        let img_enc = match (&cfg.mit, cfg.task) {
            (Some(_), Task::Seg | Task::Cls) => Some(ImageEncoder::new(cfg.d_modal)?),
            _ => None,
        };
        match cfg.task {
            Task::Seg => {
                pipe.img_enc = img_enc;
                pipe.seg_dec = Some(SegDecoder::toy(cfg.lm.d_model, cfg.d_modal));
            }
            Task::Cls => {
                pipe.img_enc = img_enc;
                pipe.cls_head = Some(ClsHead {
                    d_model: cfg.lm.d_model,
                    d_modal: cfg.d_modal,
                    classes: CLS_CLASSES,
                });
            }
            Task::Msa => {
                pipe.reg_head = Some(RegHead { d_model: cfg.lm.d_model });
                // The sequence encoders only exist to feed infusion; the
                // text-only ablation (mit: None) drops them entirely.
                if cfg.mit.is_some() {
                    if !cfg.msa_modalities.acoustic && !cfg.msa_modalities.facial {
                        return Err(PipelineError::Config(ConfigError(String::from(
                            "infusion enabled but every msa modality is off; use mit: None",
                        ))));
                    }
                    if cfg.msa_modalities.acoustic {
                        pipe.enc_acoustic = Some(SeqEncoder::new(
                            "enc.acoustic",
                            MSA_ACOUSTIC_DIM,
                            cfg.d_modal,
                            MSA_MAX_STEPS,
                        )?);
                    }
                    if cfg.msa_modalities.facial {
                        pipe.enc_facial = Some(SeqEncoder::new(
                            "enc.facial",
                            MSA_FACIAL_DIM,
                            cfg.d_modal,
                            MSA_MAX_STEPS,
                        )?);
                    }
                }
            }
        }
        Ok(pipe)
    }

    pub fn task_token_id(&self) -> Option<usize> {
        self.task_token_id
    }

    /// Insert every tensor of the bundle: frozen backbone and image
    /// encoder, trainable infusion / heads / encoders / task tokens.
    pub fn init_params(&self, ps: &mut ParamSet) {
        let sub = |k: u64| SplitMix64::derive(self.cfg.seed, k);
        self.lm.init_params(ps, sub(0));
        if let Some(enc) = &self.img_enc {
            enc.init_params(ps, sub(1));
        }
        if !self.table.is_empty() {
            self.table.init_params(ps, sub(2));
        }
        if let Some(mit) = &self.cfg.mit {
            init_infusion(ps, mit, &self.cfg.lm);
        }
        if let Some(dec) = &self.seg_dec {
            dec.init_params(ps, sub(3));
        }
        if let Some(head) = &self.cls_head {
            head.init_params(ps, sub(4));
        }
        if let Some(head) = &self.reg_head {
            head.init_params(ps, sub(5));
        }
        if let Some(enc) = &self.enc_acoustic {
            enc.init_params(ps, sub(6), true);
        }
        if let Some(enc) = &self.enc_facial {
            enc.init_params(ps, sub(7), true);
        }
    }

    fn prompt_tokens(&self, slot_value: &str) -> Result<Vec<usize>, PipelineError> {
        let prompt = format_prompt(self.cfg.task, &[(slot_name(self.cfg.task), slot_value)])?;
        let mut tokens = tokenize_bytes(&prompt);
        if let Some(id) = self.task_token_id {
            tokens.push(id);
        }
        if tokens.len() > self.cfg.lm.max_seq {
            return Err(PipelineError::Data(format!(
                "prompt of {} tokens exceeds max_seq {}",
                tokens.len(),
                self.cfg.lm.max_seq
            )));
        }
        Ok(tokens)
    }

    /// Encode (or fetch) the frozen image features for one sample.
    fn image_features(
        &self,
        ps: &ParamSet,
        idx: usize,
        image: &[f64],
    ) -> Result<Rc<ImageFeatures>, PipelineError> {
        if let Some(f) = self.feature_cache.borrow().get(&idx) {
            return Ok(Rc::clone(f));
        }
        let enc = self.img_enc.as_ref().expect("image task");
        let feats = Rc::new(enc.encode(ps, image, SEG_IMG, SEG_IMG)?);
        self.feature_cache.borrow_mut().insert(idx, Rc::clone(&feats));
        Ok(feats)
    }

    fn cached_features(&self, idx: usize) -> Result<Rc<ImageFeatures>, PipelineError> {
        self.feature_cache.borrow().get(&idx).map(Rc::clone).ok_or_else(|| {
            PipelineError::Data(format!("image features for sample {idx} not precomputed"))
        })
    }

    /// Precompute the frozen image features for every sample so that loss
    /// construction inside the training loop never needs the parameter
    /// set (the encoder is frozen, so once is enough).
    pub fn warm_cache(&self, ps: &ParamSet, data: &TaskData) -> Result<(), PipelineError> {
        match data {
            TaskData::Seg(samples) => {
                for (i, s) in samples.iter().enumerate() {
                    self.image_features(ps, i, &s.image)?;
                }
            }
            TaskData::Cls(samples) => {
                for (i, s) in samples.iter().enumerate() {
                    self.image_features(ps, i, &s.image)?;
                }
            }
            TaskData::Msa(_) => {}
        }
        Ok(())
    }

    /// Run the (possibly infused) language model over a prompt and pull
    /// the task embedding per the configured schema.
    fn task_embedding(
        &self,
        g: &mut Graph,
        bound: &Bound,
        tokens: &[usize],
        modal: Option<NodeId>,
    ) -> Result<NodeId, PipelineError> {
        let task_table = if self.table.is_empty() { None } else { Some(self.table.node(bound)?) };
        let opts = ForwardOpts { need_logits: false, task_table, ..ForwardOpts::default() };
        let mut noop = NoopHook;
        let mut mit_hook = match (&self.cfg.mit, modal) {
            (Some(mit), Some(node)) => Some(MiTHook::new(mit, &self.cfg.lm, bound, node)),
            _ => None,
        };
        let hook: &mut dyn LayerHook = match mit_hook.as_mut() {
            Some(h) => h,
            None => &mut noop,
        };
        let out = self.lm.forward(g, bound, tokens, &opts, hook)?;
        Ok(extract_embedding(
            g,
            out.hidden,
            tokens,
            tokens.len(),
            self.cfg.schema,
            self.cfg.lm.vocab,
        )?)
    }

    /// Fused modal vector for one MSA sample: sum of the enabled
    /// encoders' pooled outputs, a trainable node on the graph.
    fn msa_modal(
        &self,
        g: &mut Graph,
        bound: &Bound,
        s: &MsaSample,
    ) -> Result<Option<NodeId>, PipelineError> {
        let mut acc: Option<NodeId> = None;
        if let Some(enc) = &self.enc_acoustic {
            acc = Some(enc.forward(g, bound, &s.acoustic, s.steps)?.pooled);
        }
        if let Some(enc) = &self.enc_facial {
            let pooled = enc.forward(g, bound, &s.facial, s.steps)?.pooled;
            acc = Some(match acc {
                None => pooled,
                Some(a) => g.add(a, pooled)?,
            });
        }
        Ok(acc)
    }

    /// Build the scalar training loss for one sample. Image tasks require
    /// `warm_cache` to have run for this dataset.
    pub fn sample_loss(
        &self,
        g: &mut Graph,
        bound: &Bound,
        data: &TaskData,
        idx: usize,
    ) -> Result<NodeId, PipelineError> {
        if data.task() != self.cfg.task {
            return Err(PipelineError::Data(format!(
                "pipeline for {} fed {} data",
                self.cfg.task.name(),
                data.task().name()
            )));
        }
        if idx >= data.len() {
            return Err(PipelineError::Data(format!(
                "sample index {idx} out of range for {} samples",
                data.len()
            )));
        }
        match data {
            TaskData::Seg(samples) => {
                let s = &samples[idx];
                let feats = self.cached_features(idx)?;
                let tokens = self.prompt_tokens(&s.description)?;
                let modal = self
                    .cfg
                    .mit
                    .is_some()
                    .then(|| g.constant(vec![1, self.cfg.d_modal], feats.global.clone()));
                let emb = self.task_embedding(g, bound, &tokens, modal)?;
                let logits = self.seg_dec.as_ref().expect("seg").forward(g, bound, &feats, emb)?;
                let probs = g.sigmoid(logits);
                let target = g.constant(vec![SEG_IMG * SEG_IMG], s.mask.clone());
                Ok(dice_loss(g, probs, target)?)
            }
            TaskData::Cls(samples) => {
                let s = &samples[idx];
                let feats = self.cached_features(idx)?;
                let tokens = self.prompt_tokens(&s.text)?;
                let global = g.constant(vec![1, self.cfg.d_modal], feats.global.clone());
                let modal = self.cfg.mit.is_some().then_some(global);
                let emb = self.task_embedding(g, bound, &tokens, modal)?;
                let logits = self.cls_head.as_ref().expect("cls").logits(g, bound, emb, global)?;
                Ok(cross_entropy_logits(g, logits, s.label)?)
            }
            TaskData::Msa(samples) => {
                let s = &samples[idx];
                let tokens = self.prompt_tokens(&s.text)?;
                let modal = match &self.cfg.mit {
                    Some(_) => self.msa_modal(g, bound, s)?,
                    None => None,
                };
                let emb = self.task_embedding(g, bound, &tokens, modal)?;
                let pred = self.reg_head.as_ref().expect("msa").predict(g, bound, emb)?;
                let target = g.constant(vec![1, 1], vec![s.label]);
                Ok(mse_loss(g, pred, target)?)
            }
        }
    }

    /// Train over the given sample indices of `data`.
    pub fn train(
        &self,
        ps: &mut ParamSet,
        data: &TaskData,
        indices: &[usize],
        tcfg: &TrainConfig,
    ) -> Result<TrainOutcome, TrainError> {
        self.train_with(ps, data, indices, tcfg, |_, _| Ok(()))
    }

    /// `train` plus a per-epoch observer over the updated parameters.
    pub fn train_with<E>(
        &self,
        ps: &mut ParamSet,
        data: &TaskData,
        indices: &[usize],
        tcfg: &TrainConfig,
        on_epoch: E,
    ) -> Result<TrainOutcome, TrainError>
    where
        E: FnMut(&ParamSet, &crate::train::EpochStats) -> Result<(), TrainError>,
    {
        self.warm_cache(ps, data).map_err(|e| TrainError::Build(format!("{e}")))?;
        crate::train::train_loop_with(
            ps,
            tcfg,
            indices.len(),
            |g, bound, k| {
                self.sample_loss(g, bound, data, indices[k])
                    .map_err(|e| TrainError::Build(format!("{e}")))
            },
            on_epoch,
        )
    }

    /// Binary mask prediction (sigmoid at threshold 0.5, i.e. logit > 0).
    pub fn predict_seg(
        &self,
        ps: &ParamSet,
        idx: usize,
        s: &SegSample,
    ) -> Result<Vec<bool>, PipelineError> {
        let feats = self.image_features(ps, idx, &s.image)?;
        let tokens = self.prompt_tokens(&s.description)?;
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, ps);
        let modal = self
            .cfg
            .mit
            .is_some()
            .then(|| g.constant(vec![1, self.cfg.d_modal], feats.global.clone()));
        let emb = self.task_embedding(&mut g, &bound, &tokens, modal)?;
        let logits = self.seg_dec.as_ref().expect("seg").forward(&mut g, &bound, &feats, emb)?;
        Ok(g.data(logits).iter().map(|&z| z > 0.0).collect())
    }

    pub fn predict_cls(
        &self,
        ps: &ParamSet,
        idx: usize,
        s: &ClsSample,
    ) -> Result<usize, PipelineError> {
        let feats = self.image_features(ps, idx, &s.image)?;
        let tokens = self.prompt_tokens(&s.text)?;
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, ps);
        let global = g.constant(vec![1, self.cfg.d_modal], feats.global.clone());
        let modal = self.cfg.mit.is_some().then_some(global);
        let emb = self.task_embedding(&mut g, &bound, &tokens, modal)?;
        let logits = self.cls_head.as_ref().expect("cls").logits(&mut g, &bound, emb, global)?;
        let row = g.data(logits);
        Ok(row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("nonempty logits"))
    }

    pub fn predict_msa(&self, ps: &ParamSet, s: &MsaSample) -> Result<f64, PipelineError> {
        let tokens = self.prompt_tokens(&s.text)?;
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, ps);
        let modal = match &self.cfg.mit {
            Some(_) => self.msa_modal(&mut g, &bound, s)?,
            None => None,
        };
        let emb = self.task_embedding(&mut g, &bound, &tokens, modal)?;
        let pred = self.reg_head.as_ref().expect("msa").predict(&mut g, &bound, emb)?;
        Ok(g.data(pred)[0])
    }

    /// Task-appropriate metrics over the given indices of `data`.
    pub fn evaluate(
        &self,
        ps: &ParamSet,
        data: &TaskData,
        indices: &[usize],
    ) -> Result<EvalReport, PipelineError> {
        match data {
            TaskData::Seg(samples) => {
                let mut dice_sum = 0.0;
                let mut iou = metrics::IoUAccumulator::new();
                for &i in indices {
                    let s = &samples[i];
                    let pred = self.predict_seg(ps, i, s)?;
                    let truth: Vec<bool> = s.mask.iter().map(|&v| v == 1.0).collect();
                    dice_sum += metrics::dice_score(&pred, &truth);
                    iou.add(&pred, &truth);
                }
                Ok(EvalReport::Seg {
                    n: indices.len(),
                    mean_dice: dice_sum / indices.len().max(1) as f64,
                    oiou: iou.value(),
                })
            }
            TaskData::Cls(samples) => {
                let mut preds = Vec::with_capacity(indices.len());
                let mut truths = Vec::with_capacity(indices.len());
                for &i in indices {
                    preds.push(self.predict_cls(ps, i, &samples[i])?);
                    truths.push(samples[i].label);
                }
                Ok(EvalReport::Cls {
                    n: indices.len(),
                    accuracy: metrics::accuracy(&preds, &truths),
                    macro_f1: metrics::macro_f1(&preds, &truths, CLS_CLASSES),
                })
            }
            TaskData::Msa(samples) => {
                let mut preds = Vec::with_capacity(indices.len());
                let mut truths = Vec::with_capacity(indices.len());
                for &i in indices {
                    preds.push(self.predict_msa(ps, &samples[i])?);
                    truths.push(samples[i].label);
                }
                Ok(EvalReport::Msa {
                    n: indices.len(),
                    mae: metrics::mae(&preds, &truths),
                    rmse: metrics::rmse(&preds, &truths),
                    corr: metrics::pearson_corr(&preds, &truths),
                    acc2: metrics::acc2(&preds, &truths),
                    acc7: metrics::acc7(&preds, &truths),
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum EvalReport {
    Seg { n: usize, mean_dice: f64, oiou: f64 },
    Cls { n: usize, accuracy: f64, macro_f1: f64 },
    Msa { n: usize, mae: f64, rmse: f64, corr: f64, acc2: f64, acc7: f64 },
}

impl core::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EvalReport::Seg { n, mean_dice, oiou } => {
                write!(f, "seg n={n} dice={mean_dice:.4} oiou={oiou:.4}")
            }
            EvalReport::Cls { n, accuracy, macro_f1 } => {
                write!(f, "cls n={n} acc={accuracy:.4} macro_f1={macro_f1:.4}")
            }
            EvalReport::Msa { n, mae, rmse, corr, acc2, acc7 } => {
                write!(
                    f,
                    "msa n={n} mae={mae:.4} rmse={rmse:.4} corr={corr:.4} acc2={acc2:.4} acc7={acc7:.4}"
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_cls, gen_msa, gen_seg};

    fn build(cfg: PipelineConfig) -> (Pipeline, ParamSet) {
        let pipe = Pipeline::new(cfg).expect("valid config");
        let mut ps = ParamSet::new();
        pipe.init_params(&mut ps);
        (pipe, ps)
    }

    fn loss_value(pipe: &Pipeline, ps: &ParamSet, data: &TaskData, idx: usize) -> f64 {
        pipe.warm_cache(ps, data).expect("encode");
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, ps);
        let loss = pipe.sample_loss(&mut g, &bound, data, idx).expect("loss");
        g.data(loss)[0]
    }

    fn no_rescale_cfg(task: Task) -> PipelineConfig {
        let mut cfg = PipelineConfig::toy(task);
        if let Some(mit) = cfg.mit.as_mut() {
            mit.enable_rescale = false;
        }
        cfg
    }

    fn base_cfg(task: Task) -> PipelineConfig {
        PipelineConfig { mit: None, ..PipelineConfig::toy(task) }
    }

    #[test]
    fn zero_init_infusion_leaves_seg_loss_unchanged() {
        let data = TaskData::Seg(gen_seg(2, 11));
        let (infused, ps_a) = build(no_rescale_cfg(Task::Seg));
        let (plain, ps_b) = build(base_cfg(Task::Seg));
        for idx in 0..2 {
            let a = loss_value(&infused, &ps_a, &data, idx);
            let b = loss_value(&plain, &ps_b, &data, idx);
            assert!(a.is_finite() && a > 0.0 && a <= 1.0, "dice loss {a}");
            assert_eq!(a.to_bits(), b.to_bits(), "sample {idx}");
        }
    }

    #[test]
    fn zero_init_infusion_leaves_cls_and_msa_loss_unchanged() {
        let cls = TaskData::Cls(gen_cls(2, 13));
        let (infused, ps_a) = build(no_rescale_cfg(Task::Cls));
        let (plain, ps_b) = build(base_cfg(Task::Cls));
        let a = loss_value(&infused, &ps_a, &cls, 0);
        assert!(a.is_finite() && a > 0.0);
        assert_eq!(a.to_bits(), loss_value(&plain, &ps_b, &cls, 0).to_bits());

        let msa = TaskData::Msa(gen_msa(2, 17));
        let (infused, ps_a) = build(no_rescale_cfg(Task::Msa));
        let (plain, ps_b) = build(base_cfg(Task::Msa));
        let a = loss_value(&infused, &ps_a, &msa, 0);
        assert!(a.is_finite() && a >= 0.0);
        assert_eq!(a.to_bits(), loss_value(&plain, &ps_b, &msa, 0).to_bits());
    }

    #[test]
    fn head_rescale_shifts_init_loss_only_slightly() {
        let data = TaskData::Seg(gen_seg(1, 19));
        let (gated, ps_a) = build(PipelineConfig::toy(Task::Seg));
        let (plain, ps_b) = build(base_cfg(Task::Seg));
        let a = loss_value(&gated, &ps_a, &data, 0);
        let b = loss_value(&plain, &ps_b, &data, 0);
        assert!((a - b).abs() < 1e-2, "gate at init moved loss {b} -> {a}");
    }

    #[test]
    fn gradients_stay_off_frozen_backbone() {
        let data = TaskData::Seg(gen_seg(1, 23));
        let (pipe, ps) = build(PipelineConfig::toy(Task::Seg));
        pipe.warm_cache(&ps, &data).unwrap();
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let loss = pipe.sample_loss(&mut g, &bound, &data, 0).unwrap();
        g.backward(loss).unwrap();
        let grad_of = |name: &str| g.grad(bound.get(name).unwrap());
        assert!(grad_of("lm.layer0.attn.wq").is_none());
        assert!(grad_of("lm.tok_embed").is_none());
        assert!(grad_of("img_enc.conv1.w").is_none());
        let live = |name: &str| grad_of(name).unwrap().iter().any(|&v| v != 0.0);
        assert!(live("task_tokens"));
        assert!(live("head.seg.block0.w"));
        assert!(live("infusion.layer3.w_d_v"));
        assert!(live("infusion.layer3.l_gate"));
    }

    #[test]
    fn msa_encoder_gradients_flow_through_infusion_weights() {
        let data = TaskData::Msa(gen_msa(1, 29));
        let (pipe, ps) = build(PipelineConfig::toy(Task::Msa));
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        let loss = pipe.sample_loss(&mut g, &bound, &data, 0).unwrap();
        g.backward(loss).unwrap();
        let grad_of = |name: &str| g.grad(bound.get(name).unwrap()).expect("trainable");
        // Zero-initialized infusion weights block the modal path at init,
        // so the encoders see exactly-zero gradients while the infusion
        // weights themselves already learn.
        assert!(grad_of("enc.acoustic.in_proj.w").iter().all(|&v| v == 0.0));
        assert!(grad_of("infusion.layer3.w_d_v").iter().any(|&v| v != 0.0));
        assert!(grad_of("head.reg.w").iter().any(|&v| v != 0.0));
    }

    #[test]
    fn evaluate_reports_task_metrics() {
        let seg = TaskData::Seg(gen_seg(2, 31));
        let (pipe, ps) = build(PipelineConfig::toy(Task::Seg));
        match pipe.evaluate(&ps, &seg, &[0, 1]).unwrap() {
            EvalReport::Seg { n, mean_dice, oiou } => {
                assert_eq!(n, 2);
                assert!((0.0..=1.0).contains(&mean_dice));
                assert!((0.0..=1.0).contains(&oiou));
            }
            other => panic!("wrong report {other}"),
        }
        let msa = TaskData::Msa(gen_msa(3, 37));
        let (pipe, ps) = build(PipelineConfig::toy(Task::Msa));
        match pipe.evaluate(&ps, &msa, &[0, 1, 2]).unwrap() {
            EvalReport::Msa { n, mae, .. } => {
                assert_eq!(n, 3);
                assert!(mae.is_finite());
            }
            other => panic!("wrong report {other}"),
        }
    }

    #[test]
    fn cls_prediction_is_argmax_over_two_classes() {
        let data = gen_cls(2, 41);
        let (pipe, ps) = build(PipelineConfig::toy(Task::Cls));
        for (i, s) in data.iter().enumerate() {
            let p = pipe.predict_cls(&ps, i, s).unwrap();
            assert!(p < CLS_CLASSES);
        }
    }

    #[test]
    fn short_training_run_updates_trainables_only() {
        let data = TaskData::Msa(gen_msa(4, 43));
        let (pipe, mut ps) = build(PipelineConfig::toy(Task::Msa));
        let frozen_before = ps.get("lm.layer0.attn.wq").unwrap().data.clone();
        let head_before = ps.get("head.reg.w").unwrap().data.clone();
        let tcfg = TrainConfig { epochs: 1, batch: 2, ..TrainConfig::default() };
        let out = pipe.train(&mut ps, &data, &[0, 1, 2, 3], &tcfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.steps, 2);
        assert!(out.history[0].mean_loss.is_finite());
        assert_eq!(ps.get("lm.layer0.attn.wq").unwrap().data, frozen_before);
        assert_ne!(ps.get("head.reg.w").unwrap().data, head_before);
    }

    #[test]
    fn config_mismatches_are_rejected() {
        let mut cfg = PipelineConfig::toy(Task::Seg);
        cfg.d_modal = 16; // disagrees with MiTConfig::toy()
        assert!(Pipeline::new(cfg).is_err());

        let mut cfg = PipelineConfig::toy(Task::Msa);
        cfg.msa_modalities = MsaModalities { acoustic: false, facial: false };
        assert!(Pipeline::new(cfg).is_err());

        let data = TaskData::Cls(gen_cls(1, 47));
        let (pipe, ps) = build(PipelineConfig::toy(Task::Seg));
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &ps);
        assert!(pipe.sample_loss(&mut g, &bound, &data, 0).is_err());
    }
}
