//! Central-difference gradient verification against tape gradients.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::params::ParamSet;
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step h; probes are f(x+h) and f(x-h).
    pub step: f64,
    /// Maximum allowed relative error per coordinate.
    pub tolerance: f64,
    /// Cap on coordinates probed per tensor (0 = probe all). Larger
    /// tensors are subsampled with a seeded shuffle.
    pub max_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, max_per_tensor: 64, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter and coordinate of the largest relative error.
    pub worst: Option<(String, usize)>,
    pub failures: Vec<GradCheckFailure>,
    /// Per-tensor worst relative error, in parameter order.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Debug)]
pub enum GradCheckError {
    /// A loss probe or analytic gradient came back NaN/inf.
    NonFinite { param: String, index: usize, what: &'static str },
    /// A trainable parameter has no analytic gradient entry.
    MissingGrad { param: String },
}

impl core::fmt::Display for GradCheckError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GradCheckError::NonFinite { param, index, what } => {
                write!(f, "non-finite {what} at parameter '{param}' index {index}")
            }
            GradCheckError::MissingGrad { param } => {
                write!(f, "no analytic gradient recorded for trainable parameter '{param}'")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GradCheckError {}

/// Denominator floor for [`relative_error`]. Central differences on an
/// O(1) loss at step 1e-5 carry absolute noise around |f|*eps/h ~ 1e-11,
/// so coordinates with gradients near that scale cannot meet a purely
/// relative tolerance no matter how correct the backward pass is. The
/// floor compares such coordinates absolutely instead; a proportional
/// bug (wrong factor, dropped term) in a gradient of any magnitude down
/// to ~1e-9 still fails the 1e-4 tolerance through this floor.
pub const DENOM_FLOOR: f64 = 1e-5;

/// |a - n| / max(|a|, |n|, DENOM_FLOOR)
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Probe every trainable tensor in `params` with central differences and
/// compare against `analytic` gradients (keyed by parameter name).
///
/// `eval` must recompute the scalar loss from the current parameter values;
/// it is called twice per probed coordinate.
pub fn check_gradients<F>(
    params: &mut ParamSet,
    analytic: &BTreeMap<String, Vec<f64>>,
    cfg: &GradCheckConfig,
    mut eval: F,
) -> Result<GradCheckReport, GradCheckError>
where
    F: FnMut(&ParamSet) -> f64,
{
    let names: Vec<String> = params
        .iter()
        .filter(|(_, t)| t.requires_grad)
        .map(|(n, _)| String::from(n))
        .collect();
    let mut report = GradCheckReport::default();

    for (t_idx, name) in names.iter().enumerate() {
        let grads = analytic
            .get(name)
            .ok_or_else(|| GradCheckError::MissingGrad { param: name.clone() })?
            .clone();
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(GradCheckError::NonFinite {
                param: name.clone(),
                index: bad,
                what: "analytic gradient",
            });
        }
        let n = params.get(name).unwrap().numel();
        assert_eq!(grads.len(), n, "gradient length mismatch for {name}");

        let mut indices: Vec<usize> = if cfg.max_per_tensor == 0 || n <= cfg.max_per_tensor {
            (0..n).collect()
        } else {
            let mut rng = SplitMix64::new(SplitMix64::derive(cfg.seed, t_idx as u64));
            let mut shuffled = rng.shuffled_indices(n);
            shuffled.truncate(cfg.max_per_tensor);
            shuffled
        };
        indices.sort_unstable();

        let mut tensor_max = 0.0f64;
        for &i in &indices {
            let orig = params.get(name).unwrap().data[i];
            params.get_mut(name).unwrap().data[i] = orig + cfg.step;
            let f_plus = eval(&*params);
            params.get_mut(name).unwrap().data[i] = orig - cfg.step;
            let f_minus = eval(&*params);
            params.get_mut(name).unwrap().data[i] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(GradCheckError::NonFinite {
                    param: name.clone(),
                    index: i,
                    what: "loss probe",
                });
            }
            let numeric = (f_plus - f_minus) / (2.0 * cfg.step);
            let rel = relative_error(grads[i], numeric);
            report.checked += 1;
            tensor_max = tensor_max.max(rel);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i));
            }
            if rel > cfg.tolerance {
                report.failures.push(GradCheckFailure {
                    param: name.clone(),
                    index: i,
                    analytic: grads[i],
                    numeric,
                    rel_err: rel,
                });
            }
        }
        report.per_tensor.push((name.clone(), tensor_max));
    }
    Ok(report)
}
