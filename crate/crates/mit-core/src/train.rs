//! Training harness: the stepped learning-rate schedule, Adam over the
//! trainable subset, and a deterministic per-sample-graph training loop
//! with gradient accumulation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::{Bound, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, NodeId, TensorError};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    /// Epochs between decays.
    pub decay_every: usize,
    pub epochs: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seed for the per-epoch sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 4e-5,
            decay_factor: 0.1,
            decay_every: 10,
            epochs: 30,
            batch: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub enum TrainError {
    EpochOutOfRange { epoch: usize, epochs: usize },
    FrozenGradient { name: String },
    UnknownParam { name: String },
    NonFinite { epoch: usize, step: u64, what: String },
    Graph(TensorError),
    Build(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Graph(e)
    }
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::EpochOutOfRange { epoch, epochs } => {
                write!(f, "epoch {epoch} outside schedule of {epochs} epochs")
            }
            TrainError::FrozenGradient { name } => {
                write!(f, "gradient supplied for frozen tensor '{name}'")
            }
            TrainError::UnknownParam { name } => write!(f, "gradient for unknown tensor '{name}'"),
            TrainError::NonFinite { epoch, step, what } => {
                write!(f, "non-finite {what} at epoch {epoch}, optimizer step {step}")
            }
            TrainError::Graph(t) => write!(f, "graph error: {t}"),
            TrainError::Build(msg) => write!(f, "forward build failed: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

/// Stepped decay: lr0 * factor^(epoch / every).
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64, TrainError> {
    if epoch >= cfg.epochs {
        return Err(TrainError::EpochOutOfRange { epoch, epochs: cfg.epochs });
    }
    let k = (epoch / cfg.decay_every) as i32;
    Ok(cfg.lr0 * crate::mathx::powi(cfg.decay_factor, k))
}

/// First/second moments per tensor plus the global step counter and the
/// running beta powers for bias correction.
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
    b1t: f64,
    b2t: f64,
}

impl AdamState {
    pub fn new() -> Self {
        Self { m: BTreeMap::new(), v: BTreeMap::new(), t: 0, b1t: 1.0, b2t: 1.0 }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One Adam update from accumulated gradients. Tensors without a gradient
/// entry are left untouched; a gradient for a frozen or unknown tensor is
/// an error.
pub fn adam_step(
    ps: &mut ParamSet,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    for name in grads.keys() {
        match ps.get(name) {
            None => return Err(TrainError::UnknownParam { name: name.clone() }),
            Some(t) if !t.requires_grad => {
                return Err(TrainError::FrozenGradient { name: name.clone() })
            }
            Some(t) => debug_assert_eq!(t.data.len(), grads[name].len()),
        }
    }
    state.t += 1;
    state.b1t *= cfg.beta1;
    state.b2t *= cfg.beta2;
    let bc1 = 1.0 - state.b1t;
    let bc2 = 1.0 - state.b2t;
    for (name, grad) in grads {
        let tensor = ps.get_mut(name).expect("validated above");
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
        for i in 0..grad.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            tensor.data[i] -= lr * mh / (crate::mathx::sqrt(vh) + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub steps: u64,
}

/// Deterministic training loop. Each sample gets its own graph; batch
/// gradients are the mean of per-sample gradients; sample order is a
/// seeded shuffle per epoch. `build` constructs the scalar loss for one
/// sample index against the already-bound parameters.
pub fn train_loop<F>(
    ps: &mut ParamSet,
    cfg: &TrainConfig,
    n_samples: usize,
    build: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&mut Graph, &Bound, usize) -> Result<NodeId, TrainError>,
{
    train_loop_with(ps, cfg, n_samples, build, |_, _| Ok(()))
}

/// `train_loop` plus a per-epoch observer (metrics, logging) that sees the
/// updated parameters after each epoch's last step.
pub fn train_loop_with<F, E>(
    ps: &mut ParamSet,
    cfg: &TrainConfig,
    n_samples: usize,
    mut build: F,
    mut on_epoch: E,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&mut Graph, &Bound, usize) -> Result<NodeId, TrainError>,
    E: FnMut(&ParamSet, &EpochStats) -> Result<(), TrainError>,
{
    assert!(n_samples > 0, "cannot train on an empty dataset");
    assert!(cfg.batch > 0, "batch size must be positive");
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch)?;
        let mut order_rng = SplitMix64::new(SplitMix64::derive(cfg.seed, epoch as u64));
        let order = order_rng.shuffled_indices(n_samples);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mut g = Graph::new();
                let bound = Bound::new(&mut g, ps);
                let loss = build(&mut g, &bound, i)?;
                let lval = g.data(loss)[0];
                if !lval.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        step: state.t + 1,
                        what: alloc::format!("loss on sample {i}"),
                    });
                }
                epoch_loss += lval;
                g.backward(loss)?;
                for (name, id) in bound.iter() {
                    if let Some(grad) = g.grad(id) {
                        let acc = grads
                            .entry(String::from(name))
                            .or_insert_with(|| vec![0.0; grad.len()]);
                        for (a, &gv) in acc.iter_mut().zip(grad) {
                            *a += gv * inv;
                        }
                    }
                }
            }
            for (name, gvec) in &grads {
                if gvec.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFinite {
                        epoch,
                        step: state.t + 1,
                        what: alloc::format!("gradient of '{name}'"),
                    });
                }
            }
            adam_step(ps, &grads, &mut state, lr, cfg)?;
        }
        let stats = EpochStats { epoch, lr, mean_loss: epoch_loss / n_samples as f64 };
        on_epoch(&*ps, &stats)?;
        history.push(stats);
    }
    Ok(TrainOutcome { history, steps: state.t })
}

/// Deterministic 90/10 train/test split of 0..n (test gets at least one).
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(n >= 2, "need at least two samples to split");
    let mut rng = SplitMix64::new(SplitMix64::derive(seed, 0x5917));
    let order = rng.shuffled_indices(n);
    let n_test = (n / 10).max(1);
    let (test, train) = order.split_at(n_test);
    (train.to_vec(), test.to_vec())
}
