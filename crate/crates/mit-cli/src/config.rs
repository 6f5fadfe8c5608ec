//! Run configuration: a single JSON document with sections {model,
//! infusion, task, train, data, cost}. Every field has a default equal to
//! the toy preset, unknown keys are rejected, and the fully-resolved form
//! (defaults applied, layer policy expanded to explicit indices) is echoed
//! into every output directory so runs are reproducible from artifacts.

use mit_core::heads::{EmbedSchema, Task};
use mit_core::infusion::{select_layers, LayerPolicy, MiTConfig, RescalePooling};
use mit_core::lm::{AttnScale, LMConfig};
use mit_core::pipeline::{MsaModalities, PipelineConfig};
use mit_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Invalid configuration (maps to exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Serialize, Deserialize, Clone, Debug, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub infusion: InfusionSection,
    pub task: TaskSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub cost: CostSection,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_seq: usize,
    /// "per_head" (1/sqrt(d_head)) or "model_width" (1/sqrt(d_model)).
    pub attn_scale: String,
    pub norm_eps: f64,
    pub learned_pos: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let lm = LMConfig::toy();
        Self {
            n_layers: lm.n_layers,
            d_model: lm.d_model,
            n_heads: lm.n_heads,
            d_head: lm.d_head,
            d_ff: lm.d_ff,
            vocab: lm.vocab,
            max_seq: lm.max_seq,
            attn_scale: String::from("per_head"),
            norm_eps: lm.norm_eps,
            learned_pos: lm.learned_pos,
        }
    }
}

/// Which transformer layers receive infusion: an explicit 0-indexed list
/// (`[3, 5, 7]`) or a policy string (`"paper_default"`,
/// `"last_third_stride:2"`). Echoed configs always carry the explicit list.
#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(untagged)]
pub enum LayersSpec {
    Explicit(Vec<usize>),
    Policy(String),
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct InfusionSection {
    /// false trains the no-infusion ablation (frozen text-only backbone).
    pub enabled: bool,
    pub d_modal: usize,
    pub layers: LayersSpec,
    pub enable_kv: bool,
    pub enable_ff: bool,
    pub enable_rescale: bool,
    pub gate_init: f64,
    /// "per_token" or "mean_over_tokens".
    pub rescale_pooling: String,
}

impl Default for InfusionSection {
    fn default() -> Self {
        let mit = MiTConfig::toy();
        Self {
            enabled: true,
            d_modal: mit.d_modal,
            layers: LayersSpec::Policy(String::from("last_third_stride:2")),
            enable_kv: mit.enable_kv,
            enable_ff: mit.enable_ff,
            enable_rescale: mit.enable_rescale,
            gate_init: mit.gate_init,
            rescale_pooling: String::from("per_token"),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// "seg", "cls" or "msa".
    pub task: String,
    /// "task_token" or "last_token"; null picks the per-task toy preset
    /// (task_token for seg/cls, last_token for msa).
    pub schema: Option<String>,
    pub msa_acoustic: bool,
    pub msa_facial: bool,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self { task: String::from("seg"), schema: None, msa_acoustic: true, msa_facial: true }
    }
}

/// Desk-scale optimizer defaults. `seed` is the root seed for parameter
/// init and the epoch shuffle; dataset randomness is pinned separately in
/// the dataset artifacts (gen-data --seed) and in [`DataSection`].
#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Held-out fraction carved off the dataset for per-epoch metrics.
    pub test_frac: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr0: 3e-3,
            decay_factor: 0.1,
            decay_every: 10,
            epochs: 30,
            batch: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 7,
            test_frac: 0.25,
        }
    }
}

/// Sample count and generation seed for commands that synthesize their own
/// data (ablate, schema-sweep). `train` takes data from --data instead.
#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { n: 160, seed: 7 }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    /// Token count for single-point reports.
    pub l_tok: usize,
    /// Prefix length for the prefix-conditioning rows; null means P = L.
    pub prefix: Option<usize>,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { l_tok: 64, prefix: None }
    }
}

/// Config resolved against mit-core's concrete types, plus the echo form.
pub struct Resolved {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    /// Input config with defaults applied and layers made explicit.
    pub echo: RunConfig,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(s).map_err(|e| cfg_err(format!("invalid config: {e}")))
    }

    pub fn lm(&self) -> Result<LMConfig, ConfigError> {
        let m = &self.model;
        let attn_scale = match m.attn_scale.as_str() {
            "per_head" => AttnScale::PerHead,
            "model_width" => AttnScale::ModelWidth,
            other => {
                return Err(cfg_err(format!(
                    "model.attn_scale '{other}' is not 'per_head' or 'model_width'"
                )))
            }
        };
        Ok(LMConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_head: m.d_head,
            d_ff: m.d_ff,
            vocab: m.vocab,
            max_seq: m.max_seq,
            attn_scale,
            norm_eps: m.norm_eps,
            learned_pos: m.learned_pos,
        })
    }

    /// Infused layer indices, explicit form.
    pub fn layers(&self, n_layers: usize) -> Result<Vec<usize>, ConfigError> {
        let policy = match &self.infusion.layers {
            LayersSpec::Explicit(v) => LayerPolicy::Explicit(v.clone()),
            LayersSpec::Policy(s) => parse_policy(s)?,
        };
        select_layers(n_layers, &policy).map_err(|e| cfg_err(format!("infusion.layers: {e}")))
    }

    pub fn mit(&self) -> Result<Option<MiTConfig>, ConfigError> {
        if !self.infusion.enabled {
            return Ok(None);
        }
        let i = &self.infusion;
        let rescale_pooling = match i.rescale_pooling.as_str() {
            "per_token" => RescalePooling::PerToken,
            "mean_over_tokens" => RescalePooling::MeanOverTokens,
            other => {
                return Err(cfg_err(format!(
                    "infusion.rescale_pooling '{other}' is not 'per_token' or 'mean_over_tokens'"
                )))
            }
        };
        Ok(Some(MiTConfig {
            d_modal: i.d_modal,
            infused_layers: self.layers(self.model.n_layers)?,
            enable_kv: i.enable_kv,
            enable_ff: i.enable_ff,
            enable_rescale: i.enable_rescale,
            gate_init: i.gate_init,
            rescale_pooling,
        }))
    }

    pub fn task(&self) -> Result<Task, ConfigError> {
        Task::parse(&self.task.task)
            .ok_or_else(|| cfg_err(format!("task.task '{}' is not seg, cls or msa", self.task.task)))
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let t = &self.train;
        if t.epochs == 0 || t.batch == 0 {
            return Err(cfg_err("train.epochs and train.batch must be at least 1"));
        }
        if !(t.test_frac > 0.0 && t.test_frac < 1.0) {
            return Err(cfg_err(format!(
                "train.test_frac {} must lie strictly between 0 and 1",
                t.test_frac
            )));
        }
        let task = self.task()?;
        let schema = match &self.task.schema {
            Some(s) => EmbedSchema::parse(s).ok_or_else(|| {
                cfg_err(format!("task.schema '{s}' is not task_token or last_token"))
            })?,
            None => match task {
                Task::Seg | Task::Cls => EmbedSchema::TaskToken,
                Task::Msa => EmbedSchema::LastToken,
            },
        };
        let pipeline = PipelineConfig {
            task,
            lm: self.lm()?,
            mit: self.mit()?,
            schema,
            d_modal: self.infusion.d_modal,
            msa_modalities: MsaModalities {
                acoustic: self.task.msa_acoustic,
                facial: self.task.msa_facial,
            },
            seed: t.seed,
        };
        let train = TrainConfig {
            lr0: t.lr0,
            decay_factor: t.decay_factor,
            decay_every: t.decay_every,
            epochs: t.epochs,
            batch: t.batch,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: t.seed,
        };
        let mut echo = self.clone();
        echo.infusion.layers = LayersSpec::Explicit(self.layers(self.model.n_layers)?);
        echo.task.schema = Some(String::from(schema.name()));
        Ok(Resolved { pipeline, train, echo })
    }

    /// Pretty JSON of the resolved config, as written to output dirs.
    pub fn echo_json(&self) -> Result<String, ConfigError> {
        let resolved = self.resolve()?;
        serde_json::to_string_pretty(&resolved.echo)
            .map_err(|e| cfg_err(format!("serializing config: {e}")))
    }
}

fn parse_policy(s: &str) -> Result<LayerPolicy, ConfigError> {
    if s == "paper_default" {
        return Ok(LayerPolicy::PaperDefault);
    }
    if let Some(rest) = s.strip_prefix("last_third_stride:") {
        let stride: usize = rest
            .parse()
            .map_err(|_| cfg_err(format!("bad stride '{rest}' in infusion.layers")))?;
        return Ok(LayerPolicy::LastThirdStride { stride });
    }
    Err(cfg_err(format!(
        "infusion.layers '{s}' is not 'paper_default', 'last_third_stride:N' or an index list"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_resolves_to_toy_preset() {
        let rc = RunConfig::default();
        let r = rc.resolve().expect("default resolves");
        assert_eq!(r.pipeline.lm.d_model, LMConfig::toy().d_model);
        let mit = r.pipeline.mit.expect("infusion on by default");
        assert_eq!(mit.infused_layers, MiTConfig::toy().infused_layers);
        assert_eq!(mit.gate_init, 10.0);
        assert_eq!(r.train.epochs, 30);
    }

    #[test]
    fn empty_json_equals_default() {
        let rc = RunConfig::from_json("{}").expect("empty object");
        assert_eq!(rc.train.lr0, RunConfig::default().train.lr0);
    }

    #[test]
    fn unknown_keys_rejected_at_both_levels() {
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lr": 0.1}}"#).is_err());
    }

    #[test]
    fn layer_policy_strings_expand() {
        let rc = RunConfig::from_json(r#"{"infusion": {"layers": "last_third_stride:2"}}"#)
            .expect("parse");
        assert_eq!(rc.layers(8).expect("expand"), vec![3, 5, 7]);
        let rc = RunConfig::from_json(r#"{"infusion": {"layers": [1, 4]}}"#).expect("parse");
        assert_eq!(rc.layers(8).expect("explicit"), vec![1, 4]);
        let rc = RunConfig::from_json(r#"{"infusion": {"layers": "sideways"}}"#).expect("parse");
        assert!(rc.layers(8).is_err());
    }

    #[test]
    fn echo_is_explicit_and_reparses_identically() {
        let rc = RunConfig::default();
        let echo = rc.echo_json().expect("echo");
        let back = RunConfig::from_json(&echo).expect("echo reparses");
        match &back.infusion.layers {
            LayersSpec::Explicit(v) => assert_eq!(*v, vec![3, 5, 7]),
            LayersSpec::Policy(p) => panic!("echo kept policy {p}"),
        }
        assert_eq!(back.echo_json().expect("idempotent"), echo);
    }

    #[test]
    fn schema_default_follows_the_task() {
        let seg = RunConfig::default().resolve().expect("seg");
        assert_eq!(seg.pipeline.schema, EmbedSchema::TaskToken);
        let rc = RunConfig::from_json(r#"{"task": {"task": "msa"}}"#).expect("parse");
        let msa = rc.resolve().expect("msa");
        assert_eq!(msa.pipeline.schema, EmbedSchema::LastToken);
        assert_eq!(msa.echo.task.schema.as_deref(), Some("last_token"));
        let rc = RunConfig::from_json(r#"{"task": {"task": "msa", "schema": "task_token"}}"#)
            .expect("parse");
        assert_eq!(rc.resolve().expect("msa").pipeline.schema, EmbedSchema::TaskToken);
    }

    #[test]
    fn disabled_infusion_resolves_to_none() {
        let rc = RunConfig::from_json(r#"{"infusion": {"enabled": false}}"#).expect("parse");
        assert!(rc.resolve().expect("resolves").pipeline.mit.is_none());
    }

    #[test]
    fn bad_enums_are_config_errors() {
        for json in [
            r#"{"task": {"task": "draw"}}"#,
            r#"{"task": {"schema": "middle_token"}}"#,
            r#"{"model": {"attn_scale": "loud"}}"#,
            r#"{"infusion": {"rescale_pooling": "max"}}"#,
            r#"{"train": {"test_frac": 1.5}}"#,
        ] {
            let rc = RunConfig::from_json(json).expect("syntactically fine");
            assert!(rc.resolve().is_err(), "{json} should fail resolve");
        }
    }
}
