//! Differentiable training losses, built from graph primitives.

use crate::tensor::{Graph, NodeId, TensorError};

/// Smoothing constant keeping soft-DICE finite on empty masks.
pub const DICE_EPS: f64 = 1e-6;

/// Soft DICE loss: 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps).
/// `pred` holds probabilities in [0,1]; `target` is a same-shape constant
/// of {0,1} values (anything else is rejected).
pub fn dice_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
    if g.shape(pred) != g.shape(target) {
        return Err(crate::tensor::err_out_of_range(
            "dice_loss",
            alloc::format!("pred {:?} vs target {:?}", g.shape(pred), g.shape(target)),
        ));
    }
    if let Some(&bad) = g.data(target).iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(crate::tensor::err_out_of_range(
            "dice_loss",
            alloc::format!("target value {bad} is not binary"),
        ));
    }
    let pt = g.mul(pred, target)?;
    let inter = g.sum_all(pt);
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, DICE_EPS);
    let sp = g.sum_all(pred);
    let st = g.sum_all(target);
    let den = g.add(sp, st)?;
    let den = g.add_scalar(den, DICE_EPS);
    let dice = g.div(num, den)?;
    let neg = g.neg(dice);
    Ok(g.add_scalar(neg, 1.0))
}

/// Cross-entropy of a single target class from raw logits (shape [k]),
/// computed via a max-shifted log-sum-exp. The shift is a constant; the
/// gradient is exactly softmax(logits) - onehot(target).
pub fn cross_entropy_logits(
    g: &mut Graph,
    logits: NodeId,
    target: usize,
) -> Result<NodeId, TensorError> {
    let flat = g.reshape(logits, alloc::vec![g.data(logits).len()])?;
    let k = g.data(flat).len();
    if target >= k {
        return Err(crate::tensor::err_out_of_range(
            "cross_entropy",
            alloc::format!("target {target} out of range for {k} classes"),
        ));
    }
    let m = g.data(flat).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = g.add_scalar(flat, -m);
    let e = g.exp(shifted);
    let s = g.sum_all(e);
    let lse = g.ln(s);
    let lt = g.slice(flat, 0, target, target + 1)?;
    let diff = g.sub(lse, lt)?;
    Ok(g.add_scalar(diff, m))
}

/// Batch cross-entropy: mean of per-row [`cross_entropy_logits`] over
/// logits [n, k] and n target indices.
pub fn cross_entropy_batch(
    g: &mut Graph,
    logits: NodeId,
    targets: &[usize],
) -> Result<NodeId, TensorError> {
    let sh = g.shape(logits).to_vec();
    if sh.len() != 2 || sh[0] != targets.len() || targets.is_empty() {
        return Err(crate::tensor::err_out_of_range(
            "cross_entropy_batch",
            alloc::format!("logits {sh:?} vs {} targets", targets.len()),
        ));
    }
    let mut acc: Option<NodeId> = None;
    for (i, &t) in targets.iter().enumerate() {
        let row = g.slice(logits, 0, i, i + 1)?;
        let l = cross_entropy_logits(g, row, t)?;
        acc = Some(match acc {
            None => l,
            Some(a) => g.add(a, l)?,
        });
    }
    Ok(g.scale(acc.expect("targets nonempty"), 1.0 / targets.len() as f64))
}

/// Mean squared error against a same-shape constant target.
pub fn mse_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
    if g.data(pred).is_empty() {
        return Err(crate::tensor::err_out_of_range(
            "mse_loss",
            alloc::string::String::from("empty prediction"),
        ));
    }
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean_all(sq))
}

/// Root mean squared error; sqrt of [`mse_loss`].
pub fn rmse_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
    let mse = mse_loss(g, pred, target)?;
    Ok(g.sqrt(mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn dice_loss_hand_case() {
        // |P|=2, |T|=3, intersection 1 -> dice 0.4, loss 0.6
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::new(vec![4], vec![1.0, 1.0, 0.0, 0.0]));
        let t = g.leaf(&Tensor::new(vec![4], vec![0.0, 1.0, 1.0, 1.0]));
        let l = dice_loss(&mut g, p, t).unwrap();
        assert!((g.data(l)[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn dice_loss_perfect_match_is_zero() {
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::new(vec![3], vec![1.0, 0.0, 1.0]));
        let t = g.leaf(&Tensor::new(vec![3], vec![1.0, 0.0, 1.0]));
        let l = dice_loss(&mut g, p, t).unwrap();
        assert!(g.data(l)[0].abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut g = Graph::new();
        let logits = g.leaf(&Tensor::new(vec![4], vec![0.0; 4]));
        let l = cross_entropy_logits(&mut g, logits, 2).unwrap();
        let want = crate::mathx::ln(4.0);
        assert!((g.data(l)[0] - want).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot() {
        let mut g = Graph::new();
        let logits =
            g.leaf(&Tensor::new(vec![3], vec![1.0, 2.0, 0.5]).trainable());
        let l = cross_entropy_logits(&mut g, logits, 1).unwrap();
        g.backward(l).unwrap();
        let z: f64 = [1.0, 2.0, 0.5].iter().map(|&x| crate::mathx::exp(x)).sum();
        let sm: alloc::vec::Vec<f64> =
            [1.0, 2.0, 0.5].iter().map(|&x| crate::mathx::exp(x) / z).collect();
        let grad = g.grad(logits).unwrap();
        for i in 0..3 {
            let want = sm[i] - if i == 1 { 1.0 } else { 0.0 };
            assert!((grad[i] - want).abs() < 1e-12, "grad[{i}] {} vs {want}", grad[i]);
        }
    }

    #[test]
    fn dice_loss_rejects_non_binary_target() {
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::new(vec![2], vec![0.5, 0.5]));
        let t = g.leaf(&Tensor::new(vec![2], vec![0.0, 0.7]));
        assert!(dice_loss(&mut g, p, t).is_err());
        let mism = g.leaf(&Tensor::new(vec![1], vec![1.0]));
        assert!(dice_loss(&mut g, p, mism).is_err());
    }

    #[test]
    fn batch_cross_entropy_matches_scalar_loop() {
        let mut g = Graph::new();
        let data = vec![0.3, -1.2, 0.8, 2.0, 0.1, -0.4, 1.5, 0.0, -2.0, 0.6, 0.2, 0.9];
        let logits = g.leaf(&Tensor::new(vec![3, 4], data.clone()));
        let targets = [2usize, 0, 3];
        let batch = cross_entropy_batch(&mut g, logits, &targets).unwrap();
        let mut want = 0.0;
        for (row, &t) in data.chunks(4).zip(&targets) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| crate::mathx::exp(x - m)).sum();
            want += m + crate::mathx::ln(z) - row[t];
        }
        want /= 3.0;
        assert!((g.data(batch)[0] - want).abs() < 1e-12);
        // bad target index is an error
        let bad = cross_entropy_batch(&mut g, logits, &[0, 1, 9]);
        assert!(bad.is_err());
    }

    #[test]
    fn rmse_rejects_empty_input() {
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::new(vec![0], vec![]));
        let t = g.leaf(&Tensor::new(vec![0], vec![]));
        assert!(rmse_loss(&mut g, p, t).is_err());
    }

    #[test]
    fn rmse_hand_case() {
        // errors 3 and 4 -> sqrt(25/2)
        let mut g = Graph::new();
        let p = g.leaf(&Tensor::new(vec![2], vec![3.0, 0.0]));
        let t = g.leaf(&Tensor::new(vec![2], vec![0.0, 4.0]));
        let l = rmse_loss(&mut g, p, t).unwrap();
        assert!((g.data(l)[0] - crate::mathx::sqrt(12.5)).abs() < 1e-12);
    }
}
