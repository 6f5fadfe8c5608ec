//! Evaluation metrics computed on plain values (no autodiff involved).

use alloc::vec;

use crate::mathx;

/// DICE coefficient of two binary masks; two empty masks score 1.
pub fn dice_score(pred: &[bool], target: &[bool]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let inter = pred.iter().zip(target).filter(|(&p, &t)| p && t).count();
    let total = pred.iter().filter(|&&p| p).count() + target.iter().filter(|&&t| t).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Overall IoU: intersections and unions are pooled across the whole
/// dataset before dividing, not averaged per sample.
#[derive(Default, Clone, Copy, Debug)]
pub struct IoUAccumulator {
    intersection: u64,
    union: u64,
}

impl IoUAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &[bool], target: &[bool]) {
        assert_eq!(pred.len(), target.len());
        for (&p, &t) in pred.iter().zip(target) {
            self.intersection += (p && t) as u64;
            self.union += (p || t) as u64;
        }
    }

    pub fn value(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

pub fn accuracy(pred: &[usize], target: &[usize]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(target).filter(|(p, t)| p == t).count();
    hits as f64 / pred.len() as f64
}

/// Macro-averaged F1 over `k` classes. A class absent from both predictions
/// and targets is skipped; a class with zero precision+recall scores 0.
pub fn macro_f1(pred: &[usize], target: &[usize], k: usize) -> f64 {
    assert_eq!(pred.len(), target.len());
    let mut tp = vec![0u64; k];
    let mut fp = vec![0u64; k];
    let mut fnn = vec![0u64; k];
    for (&p, &t) in pred.iter().zip(target) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnn[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut counted = 0;
    for c in 0..k {
        let support = tp[c] + fp[c] + fnn[c];
        if support == 0 {
            continue;
        }
        counted += 1;
        let denom = 2 * tp[c] + fp[c] + fnn[c];
        if denom > 0 {
            sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    if counted == 0 {
        0.0
    } else {
        sum / counted as f64
    }
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| mathx::abs(p - t)).sum();
    s / pred.len() as f64
}

pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    mathx::sqrt(s / pred.len() as f64)
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson_corr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let ma: f64 = a.iter().sum::<f64>() / n as f64;
    let mb: f64 = b.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / mathx::sqrt(va * vb)
}

/// Binary sentiment accuracy (positive vs negative sign), skipping samples
/// whose true score is exactly neutral.
pub fn acc2(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let mut hits = 0usize;
    let mut total = 0usize;
    for (&p, &t) in pred.iter().zip(target) {
        if t == 0.0 {
            continue;
        }
        total += 1;
        if (p > 0.0) == (t > 0.0) {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Seven-class accuracy: scores are clamped to [-3, 3] and rounded to the
/// nearest integer bucket before comparison.
pub fn acc7(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    let bucket = |x: f64| -> i32 {
        let c = x.clamp(-3.0, 3.0);
        mathx::round(c) as i32
    };
    let hits = pred
        .iter()
        .zip(target)
        .filter(|(&p, &t)| bucket(p) == bucket(t))
        .count();
    hits as f64 / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_hand_case() {
        let p = [true, true, false, false];
        let t = [false, true, true, true];
        assert!((dice_score(&p, &t) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dice_empty_masks_are_perfect() {
        assert_eq!(dice_score(&[false, false], &[false, false]), 1.0);
    }

    #[test]
    fn oiou_pools_before_dividing() {
        // sample A: inter 1 union 1; sample B: inter 0 union 2
        // mean IoU would be 0.5; overall IoU = 1/3
        let mut acc = IoUAccumulator::new();
        acc.add(&[true], &[true]);
        acc.add(&[true, false], &[false, true]);
        assert!((acc.value() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_hand_case() {
        // class 0: tp=1 fp=1 fn=0 -> f1 = 2/3
        // class 1: tp=1 fp=0 fn=1 -> f1 = 2/3
        let pred = [0, 0, 1];
        let tgt = [0, 1, 1];
        assert!((macro_f1(&pred, &tgt, 2) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mae_rmse_hand_case() {
        let p = [3.0, 0.0];
        let t = [0.0, 4.0];
        assert!((mae(&p, &t) - 3.5).abs() < 1e-12);
        assert!((rmse(&p, &t) - mathx::sqrt(12.5)).abs() < 1e-12);
    }

    #[test]
    fn corr_perfect_line() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 4.0, 6.0];
        assert!((pearson_corr(&a, &b) - 1.0).abs() < 1e-12);
        let c = [-2.0, -4.0, -6.0];
        assert!((pearson_corr(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn corr_degenerate_is_zero() {
        assert_eq!(pearson_corr(&[1.0, 1.0], &[0.0, 5.0]), 0.0);
    }

    #[test]
    fn acc2_skips_neutral() {
        let p = [0.5, -0.5, 2.0];
        let t = [1.0, 0.0, -1.0];
        // neutral skipped; hits: first yes, third no -> 0.5
        assert!((acc2(&p, &t) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn acc7_buckets() {
        let p = [2.6, -3.9, 0.2];
        let t = [3.0, -3.0, 0.0];
        assert!((acc7(&p, &t) - 1.0).abs() < 1e-12);
    }
}
