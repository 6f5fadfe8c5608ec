use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    broadcast_shapes, err_out_of_range, numel, pad_left, shape_err, Tensor, TensorError,
};
use crate::mathx;

/// Handle to a node on a [`Graph`] tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    AddScalar { a: NodeId },
    MaxScalar { a: NodeId, c: f64 },
    Neg { a: NodeId },
    Exp { a: NodeId },
    Ln { a: NodeId },
    Sqrt { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    Relu { a: NodeId },
    Softmax { a: NodeId },
    MaskedFill { a: NodeId, mask: Vec<bool> },
    Reshape { a: NodeId },
    Transpose2 { a: NodeId },
    Sum { a: NodeId },
    Mean { a: NodeId },
    SumAxis { a: NodeId, axis: usize },
    MeanAxis { a: NodeId, axis: usize },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize, end: usize },
    Embed { table: NodeId, ids: Vec<usize> },
    RepeatRows { a: NodeId, n: usize },
    Upsample2 { a: NodeId, factor: usize, bilinear: bool },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Allocation counters for the cost model's empirical activation check.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphStats {
    pub nodes: usize,
    pub floats_allocated: u64,
    pub attn_map_floats: u64,
}

/// A tape of op nodes in topological (insertion) order. Backward visits
/// nodes in exact reverse insertion order.
pub struct Graph {
    nodes: Vec<Node>,
    floats_allocated: u64,
    attn_map_floats: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), floats_allocated: 0, attn_map_floats: 0 }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool, op: Op) -> NodeId {
        debug_assert_eq!(numel(&shape), data.len());
        self.floats_allocated += data.len() as u64;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { shape, data, grad: None, needs_grad, op });
        id
    }

    /// Enter a parameter or input tensor onto the tape.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape.clone(), t.data.clone(), t.requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        assert_eq!(numel(&shape), data.len());
        self.push(shape, data, false, Op::Constant)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(vec![1], vec![v], false, Op::Constant)
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value_tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.nodes.len(),
            floats_allocated: self.floats_allocated,
            attn_map_floats: self.attn_map_floats,
        }
    }

    /// Tag a node as an attention map for the activation counters.
    pub fn mark_attn_map(&mut self, id: NodeId) {
        self.attn_map_floats += self.nodes[id.0].data.len() as u64;
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── binary ops with broadcasting ───────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary("div", a, b, |x, y| x / y, |a, b| Op::Div { a, b })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId, TensorError> {
        let out_shape = broadcast_shapes(name, &self.nodes[a.0].shape, &self.nodes[b.0].shape)?;
        let data = broadcast_apply(
            &self.nodes[a.0].data,
            &self.nodes[a.0].shape,
            &self.nodes[b.0].data,
            &self.nodes[b.0].shape,
            &out_shape,
            f,
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out_shape, data, ng, op(a, b)))
    }

    // ── matmul ─────────────────────────────────────────────────────────

    /// 2-D matrix product: [m,k] @ [k,n] -> [m,n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(shape_err("matmul", ash, bsh));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let data = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], data, ng, Op::Matmul { a, b }))
    }

    // ── scalar-parameter ops ───────────────────────────────────────────

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let (shape, ng) = (self.nodes[a.0].shape.clone(), self.needs(a));
        self.push(shape, data, ng, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x + c).collect();
        let (shape, ng) = (self.nodes[a.0].shape.clone(), self.needs(a));
        self.push(shape, data, ng, Op::AddScalar { a })
    }

    /// Elementwise max(x, c). Used as a divide-by-zero guard in cosine
    /// similarity; the subgradient passes through when x >= c.
    pub fn max_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| if x > c { x } else { c }).collect();
        let (shape, ng) = (self.nodes[a.0].shape.clone(), self.needs(a));
        self.push(shape, data, ng, Op::MaxScalar { a, c })
    }

    // ── unary ops ──────────────────────────────────────────────────────

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let (shape, ng) = (self.nodes[a.0].shape.clone(), self.needs(a));
        self.push(shape, data, ng, op)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| -x, Op::Neg { a })
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, mathx::exp, Op::Exp { a })
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, mathx::ln, Op::Ln { a })
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, mathx::sqrt, Op::Sqrt { a })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, mathx::sigmoid, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, mathx::tanh, Op::Tanh { a })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu { a })
    }

    /// x * sigmoid(x), composed from registered primitives.
    pub fn silu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let s = self.sigmoid(a);
        self.mul(a, s)
    }

    // ── softmax / masking ──────────────────────────────────────────────

    /// Numerically stable softmax over the last axis (max-subtraction).
    /// A row whose maximum is -inf (fully masked) yields all zeros.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.is_empty() {
            return Err(err_out_of_range("softmax", format!("rank-0 input")));
        }
        let w = *shape.last().unwrap();
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for (row_in, row_out) in src.chunks_exact(w).zip(data.chunks_exact_mut(w)) {
            let mx = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !mx.is_finite() {
                continue;
            }
            let mut sum = 0.0;
            for (o, &x) in row_out.iter_mut().zip(row_in) {
                *o = mathx::exp(x - mx);
                sum += *o;
            }
            let inv = 1.0 / sum;
            for o in row_out.iter_mut() {
                *o *= inv;
            }
        }
        let ng = self.needs(a);
        Ok(self.push(shape, data, ng, Op::Softmax { a }))
    }

    /// Replace elements where `mask` is true with `value` (typically -inf
    /// before softmax). The mask is a constant; no gradient flows to it.
    pub fn masked_fill(
        &mut self,
        a: NodeId,
        mask: &[bool],
        value: f64,
    ) -> Result<NodeId, TensorError> {
        let n = self.nodes[a.0].data.len();
        if mask.len() != n {
            return Err(err_out_of_range(
                "masked_fill",
                format!("mask length {} != tensor numel {}", mask.len(), n),
            ));
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let (shape, ng) = (self.nodes[a.0].shape.clone(), self.needs(a));
        Ok(self.push(shape, data, ng, Op::MaskedFill { a, mask: mask.to_vec() }))
    }

    // ── shape ops ──────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        if numel(&shape) != self.nodes[a.0].data.len() {
            return Err(shape_err("reshape", &self.nodes[a.0].shape, &shape));
        }
        let data = self.nodes[a.0].data.clone();
        let ng = self.needs(a);
        Ok(self.push(shape, data, ng, Op::Reshape { a }))
    }

    pub fn transpose2(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let sh = &self.nodes[a.0].shape;
        if sh.len() != 2 {
            return Err(err_out_of_range("transpose", format!("expected rank 2, got {sh:?}")));
        }
        let (r, c) = (sh[0], sh[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(vec![c, r], data, ng, Op::Transpose2 { a }))
    }

    // ── reductions ─────────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let ng = self.needs(a);
        self.push(vec![1], vec![s], ng, Op::Sum { a })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum::<f64>() / n;
        let ng = self.needs(a);
        self.push(vec![1], vec![s], ng, Op::Mean { a })
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        self.reduce_axis(a, axis, true)
    }

    fn reduce_axis(&mut self, a: NodeId, axis: usize, mean: bool) -> Result<NodeId, TensorError> {
        let sh = self.nodes[a.0].shape.clone();
        if axis >= sh.len() {
            return Err(err_out_of_range(
                if mean { "mean_axis" } else { "sum_axis" },
                format!("axis {axis} out of range for shape {sh:?}"),
            ));
        }
        let outer: usize = sh[..axis].iter().product();
        let mid = sh[axis];
        let inner: usize = sh[axis + 1..].iter().product();
        let mut out_shape: Vec<usize> = sh.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        if mean {
            let inv = 1.0 / mid as f64;
            for d in data.iter_mut() {
                *d *= inv;
            }
        }
        let ng = self.needs(a);
        let op = if mean { Op::MeanAxis { a, axis } } else { Op::SumAxis { a, axis } };
        Ok(self.push(out_shape, data, ng, op))
    }

    // ── concat / slice / gather ────────────────────────────────────────

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(err_out_of_range("concat", format!("no parts")));
        }
        let first = self.nodes[parts[0].0].shape.clone();
        if axis >= first.len() {
            return Err(err_out_of_range(
                "concat",
                format!("axis {axis} out of range for shape {first:?}"),
            ));
        }
        let mut axis_total = 0;
        for p in parts {
            let sh = &self.nodes[p.0].shape;
            if sh.len() != first.len()
                || sh.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err("concat", &first, sh));
            }
            axis_total += sh[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let out_row = axis_total * inner;
        let mut data = vec![0.0; outer * out_row];
        let mut offset = 0;
        for p in parts {
            let sh_axis = self.nodes[p.0].shape[axis];
            let src = &self.nodes[p.0].data;
            let chunk = sh_axis * inner;
            for o in 0..outer {
                data[o * out_row + offset..o * out_row + offset + chunk]
                    .copy_from_slice(&src[o * chunk..(o + 1) * chunk]);
            }
            offset += chunk;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out_shape, data, ng, Op::Concat { parts: parts.to_vec(), axis }))
    }

    pub fn slice(
        &mut self,
        a: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<NodeId, TensorError> {
        let sh = self.nodes[a.0].shape.clone();
        if axis >= sh.len() || start >= end || end > sh[axis] {
            return Err(err_out_of_range(
                "slice",
                format!("range {start}..{end} on axis {axis} of shape {sh:?}"),
            ));
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let src_row = sh[axis] * inner;
        let dst_row = (end - start) * inner;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; outer * dst_row];
        for o in 0..outer {
            data[o * dst_row..(o + 1) * dst_row]
                .copy_from_slice(&src[o * src_row + start * inner..o * src_row + end * inner]);
        }
        let mut out_shape = sh;
        out_shape[axis] = end - start;
        let ng = self.needs(a);
        Ok(self.push(out_shape, data, ng, Op::Slice { a, axis, start, end }))
    }

    /// Gather rows of a [rows, d] table by index; gradient scatters back.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let sh = &self.nodes[table.0].shape;
        if sh.len() != 2 {
            return Err(err_out_of_range("embed", format!("table must be rank 2, got {sh:?}")));
        }
        let (rows, d) = (sh[0], sh[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(err_out_of_range(
                "embed",
                format!("index {bad} out of range for table with {rows} rows"),
            ));
        }
        let src = &self.nodes[table.0].data;
        let mut data = vec![0.0; ids.len() * d];
        for (k, &i) in ids.iter().enumerate() {
            data[k * d..(k + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
        }
        let ng = self.needs(table);
        Ok(self.push(vec![ids.len(), d], data, ng, Op::Embed { table, ids: ids.to_vec() }))
    }

    /// Tile a [d] or [1, d] row into [n, d].
    pub fn repeat_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId, TensorError> {
        let sh = &self.nodes[a.0].shape;
        let d = match sh.len() {
            1 => sh[0],
            2 if sh[0] == 1 => sh[1],
            _ => return Err(err_out_of_range("repeat_rows", format!("need [d] or [1,d], got {sh:?}"))),
        };
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            data[r * d..(r + 1) * d].copy_from_slice(src);
        }
        let ng = self.needs(a);
        Ok(self.push(vec![n, d], data, ng, Op::RepeatRows { a, n }))
    }

    /// Spatial upsample of an [H, W, C] tensor by an integer factor.
    pub fn upsample2d(
        &mut self,
        a: NodeId,
        factor: usize,
        bilinear: bool,
    ) -> Result<NodeId, TensorError> {
        let sh = self.nodes[a.0].shape.clone();
        if sh.len() != 3 || factor == 0 {
            return Err(err_out_of_range(
                "upsample2d",
                format!("need [H,W,C] and factor >= 1, got {sh:?} factor {factor}"),
            ));
        }
        let (h, w, c) = (sh[0], sh[1], sh[2]);
        let (oh, ow) = (h * factor, w * factor);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; oh * ow * c];
        if bilinear {
            for y in 0..oh {
                let (y0, y1, wy) = bilinear_coords(y, factor, h);
                for x in 0..ow {
                    let (x0, x1, wx) = bilinear_coords(x, factor, w);
                    let dst = &mut data[(y * ow + x) * c..(y * ow + x + 1) * c];
                    for ch in 0..c {
                        let v00 = src[(y0 * w + x0) * c + ch];
                        let v01 = src[(y0 * w + x1) * c + ch];
                        let v10 = src[(y1 * w + x0) * c + ch];
                        let v11 = src[(y1 * w + x1) * c + ch];
                        dst[ch] = v00 * (1.0 - wy) * (1.0 - wx)
                            + v01 * (1.0 - wy) * wx
                            + v10 * wy * (1.0 - wx)
                            + v11 * wy * wx;
                    }
                }
            }
        } else {
            for y in 0..oh {
                for x in 0..ow {
                    let s = ((y / factor) * w + x / factor) * c;
                    data[(y * ow + x) * c..(y * ow + x + 1) * c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(vec![oh, ow, c], data, ng, Op::Upsample2 { a, factor, bilinear }))
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate onto
    /// every reachable node with `needs_grad`; leaves keep theirs for
    /// retrieval via [`Graph::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.nodes[loss.0].shape.clone() });
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.take().unwrap();
            let op = self.nodes[i].op.clone();
            self.apply_backward(i, &g, &op);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn add_to_grad(&mut self, id: NodeId, src: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let n = self.nodes[id.0].data.len();
        debug_assert_eq!(n, src.len());
        let g = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; n]);
        for (a, b) in g.iter_mut().zip(src) {
            *a += b;
        }
    }

    fn bcast_grad(&mut self, id: NodeId, full: &[f64], out_shape: &[usize]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let reduced = reduce_to_shape(full, out_shape, &self.nodes[id.0].shape);
        self.add_to_grad(id, &reduced);
    }

    fn apply_backward(&mut self, i: usize, g: &[f64], op: &Op) {
        let out_shape = self.nodes[i].shape.clone();
        match *op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.needs(a) {
                    // dA[i,p] = sum_j g[i,j] * B[p,j]
                    let bd = &self.nodes[b.0].data;
                    let mut da = vec![0.0; m * k];
                    for row in 0..m {
                        let grow = &g[row * n..(row + 1) * n];
                        let darow = &mut da[row * k..(row + 1) * k];
                        for (p, d) in darow.iter_mut().enumerate() {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut s = 0.0;
                            for (x, y) in grow.iter().zip(brow) {
                                s += x * y;
                            }
                            *d = s;
                        }
                    }
                    self.add_to_grad(a, &da);
                }
                if self.needs(b) {
                    // dB[p,j] = sum_i A[i,p] * g[i,j]
                    let ad = &self.nodes[a.0].data;
                    let mut db = vec![0.0; k * n];
                    for row in 0..m {
                        let grow = &g[row * n..(row + 1) * n];
                        let arow = &ad[row * k..(row + 1) * k];
                        for (p, &av) in arow.iter().enumerate() {
                            if av == 0.0 {
                                continue;
                            }
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for (d, &gv) in dbrow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    self.add_to_grad(b, &db);
                }
            }
            Op::Add { a, b } => {
                self.bcast_grad(a, g, &out_shape);
                self.bcast_grad(b, g, &out_shape);
            }
            Op::Sub { a, b } => {
                self.bcast_grad(a, g, &out_shape);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.bcast_grad(b, &neg, &out_shape);
            }
            Op::Mul { a, b } => {
                if self.needs(a) {
                    let bexp =
                        expand_to(&self.nodes[b.0].data, &self.nodes[b.0].shape, &out_shape);
                    let da: Vec<f64> = g.iter().zip(&bexp).map(|(x, y)| x * y).collect();
                    self.bcast_grad(a, &da, &out_shape);
                }
                if self.needs(b) {
                    let aexp =
                        expand_to(&self.nodes[a.0].data, &self.nodes[a.0].shape, &out_shape);
                    let db: Vec<f64> = g.iter().zip(&aexp).map(|(x, y)| x * y).collect();
                    self.bcast_grad(b, &db, &out_shape);
                }
            }
            Op::Div { a, b } => {
                let bexp = expand_to(&self.nodes[b.0].data, &self.nodes[b.0].shape, &out_shape);
                if self.needs(a) {
                    let da: Vec<f64> = g.iter().zip(&bexp).map(|(x, y)| x / y).collect();
                    self.bcast_grad(a, &da, &out_shape);
                }
                if self.needs(b) {
                    let aexp =
                        expand_to(&self.nodes[a.0].data, &self.nodes[a.0].shape, &out_shape);
                    let db: Vec<f64> = g
                        .iter()
                        .zip(aexp.iter().zip(&bexp))
                        .map(|(x, (av, bv))| -x * av / (bv * bv))
                        .collect();
                    self.bcast_grad(b, &db, &out_shape);
                }
            }
            Op::Scale { a, c } => {
                let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                self.add_to_grad(a, &da);
            }
            Op::AddScalar { a } => self.add_to_grad(a, g),
            Op::MaxScalar { a, c } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(gv, &x)| if x >= c { *gv } else { 0.0 })
                    .collect();
                self.add_to_grad(a, &da);
            }
            Op::Neg { a } => {
                let da: Vec<f64> = g.iter().map(|x| -x).collect();
                self.add_to_grad(a, &da);
            }
            Op::Exp { a } => {
                let da: Vec<f64> = g.iter().zip(&self.nodes[i].data).map(|(x, y)| x * y).collect();
                self.add_to_grad(a, &da);
            }
            Op::Ln { a } => {
                let da: Vec<f64> =
                    g.iter().zip(&self.nodes[a.0].data).map(|(x, y)| x / y).collect();
                self.add_to_grad(a, &da);
            }
            Op::Sqrt { a } => {
                // d sqrt = g / (2 sqrt(x)); subgradient 0 at x = 0.
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[i].data)
                    .map(|(x, &s)| if s > 0.0 { x / (2.0 * s) } else { 0.0 })
                    .collect();
                self.add_to_grad(a, &da);
            }
            Op::Sigmoid { a } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[i].data)
                    .map(|(x, &s)| x * s * (1.0 - s))
                    .collect();
                self.add_to_grad(a, &da);
            }
            Op::Tanh { a } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[i].data)
                    .map(|(x, &t)| x * (1.0 - t * t))
                    .collect();
                self.add_to_grad(a, &da);
            }
            Op::Relu { a } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                    .collect();
                self.add_to_grad(a, &da);
            }
            Op::Softmax { a } => {
                let w = *out_shape.last().unwrap();
                let s = &self.nodes[i].data;
                let mut da = vec![0.0; s.len()];
                for ((srow, grow), drow) in s
                    .chunks_exact(w)
                    .zip(g.chunks_exact(w))
                    .zip(da.chunks_exact_mut(w))
                {
                    let dot: f64 = srow.iter().zip(grow).map(|(x, y)| x * y).sum();
                    for ((d, &sv), &gv) in drow.iter_mut().zip(srow).zip(grow) {
                        *d = sv * (gv - dot);
                    }
                }
                self.add_to_grad(a, &da);
            }
            Op::MaskedFill { a, ref mask } => {
                let da: Vec<f64> =
                    g.iter().zip(mask).map(|(x, &m)| if m { 0.0 } else { *x }).collect();
                self.add_to_grad(a, &da);
            }
            Op::Reshape { a } => self.add_to_grad(a, g),
            Op::Transpose2 { a } => {
                let (c, r) = (out_shape[0], out_shape[1]);
                let mut da = vec![0.0; g.len()];
                for i2 in 0..c {
                    for j2 in 0..r {
                        da[j2 * c + i2] = g[i2 * r + j2];
                    }
                }
                self.add_to_grad(a, &da);
            }
            Op::Sum { a } => {
                let da = vec![g[0]; self.nodes[a.0].data.len()];
                self.add_to_grad(a, &da);
            }
            Op::Mean { a } => {
                let n = self.nodes[a.0].data.len();
                let da = vec![g[0] / n as f64; n];
                self.add_to_grad(a, &da);
            }
            Op::SumAxis { a, axis } | Op::MeanAxis { a, axis } => {
                let sh = self.nodes[a.0].shape.clone();
                let outer: usize = sh[..axis].iter().product();
                let mid = sh[axis];
                let inner: usize = sh[axis + 1..].iter().product();
                let scale = if matches!(op, Op::MeanAxis { .. }) { 1.0 / mid as f64 } else { 1.0 };
                let mut da = vec![0.0; outer * mid * inner];
                for o in 0..outer {
                    let grow = &g[o * inner..(o + 1) * inner];
                    for m in 0..mid {
                        let dst = &mut da[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                        for (d, &gv) in dst.iter_mut().zip(grow) {
                            *d = gv * scale;
                        }
                    }
                }
                self.add_to_grad(a, &da);
            }
            Op::Concat { ref parts, axis } => {
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let out_row = out_shape[axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let p_axis = self.nodes[p.0].shape[axis];
                    let chunk = p_axis * inner;
                    if self.needs(p) {
                        let mut dp = vec![0.0; outer * chunk];
                        for o in 0..outer {
                            dp[o * chunk..(o + 1) * chunk].copy_from_slice(
                                &g[o * out_row + offset..o * out_row + offset + chunk],
                            );
                        }
                        self.add_to_grad(p, &dp);
                    }
                    offset += chunk;
                }
            }
            Op::Slice { a, axis, start, end } => {
                let sh = self.nodes[a.0].shape.clone();
                let outer: usize = sh[..axis].iter().product();
                let inner: usize = sh[axis + 1..].iter().product();
                let src_row = sh[axis] * inner;
                let dst_row = (end - start) * inner;
                let mut da = vec![0.0; self.nodes[a.0].data.len()];
                for o in 0..outer {
                    da[o * src_row + start * inner..o * src_row + end * inner]
                        .copy_from_slice(&g[o * dst_row..(o + 1) * dst_row]);
                }
                self.add_to_grad(a, &da);
            }
            Op::Embed { table, ref ids } => {
                let d = self.nodes[table.0].shape[1];
                let mut dt = vec![0.0; self.nodes[table.0].data.len()];
                for (k, &id) in ids.iter().enumerate() {
                    for (dst, &gv) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[k * d..(k + 1) * d])
                    {
                        *dst += gv;
                    }
                }
                self.add_to_grad(table, &dt);
            }
            Op::RepeatRows { a, n } => {
                let d = self.nodes[a.0].data.len();
                let mut da = vec![0.0; d];
                for r in 0..n {
                    for (dst, &gv) in da.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dst += gv;
                    }
                }
                self.add_to_grad(a, &da);
            }
            Op::Upsample2 { a, factor, bilinear } => {
                let sh = self.nodes[a.0].shape.clone();
                let (h, w, c) = (sh[0], sh[1], sh[2]);
                let (oh, ow) = (h * factor, w * factor);
                let mut da = vec![0.0; h * w * c];
                if bilinear {
                    for y in 0..oh {
                        let (y0, y1, wy) = bilinear_coords(y, factor, h);
                        for x in 0..ow {
                            let (x0, x1, wx) = bilinear_coords(x, factor, w);
                            let grow = &g[(y * ow + x) * c..(y * ow + x + 1) * c];
                            for ch in 0..c {
                                let gv = grow[ch];
                                da[(y0 * w + x0) * c + ch] += gv * (1.0 - wy) * (1.0 - wx);
                                da[(y0 * w + x1) * c + ch] += gv * (1.0 - wy) * wx;
                                da[(y1 * w + x0) * c + ch] += gv * wy * (1.0 - wx);
                                da[(y1 * w + x1) * c + ch] += gv * wy * wx;
                            }
                        }
                    }
                } else {
                    for y in 0..oh {
                        for x in 0..ow {
                            let s = ((y / factor) * w + x / factor) * c;
                            for ch in 0..c {
                                da[s + ch] += g[(y * ow + x) * c + ch];
                            }
                        }
                    }
                }
                self.add_to_grad(a, &da);
            }
        }
    }
}

/// src coordinate pair and interpolation weight for bilinear upsampling
/// (half-pixel centers, clamped at borders).
fn bilinear_coords(out: usize, factor: usize, src_len: usize) -> (usize, usize, f64) {
    let s = (out as f64 + 0.5) / factor as f64 - 0.5;
    if s <= 0.0 {
        return (0, 0, 0.0);
    }
    let s0 = s as usize; // floor for s >= 0
    if s0 + 1 >= src_len {
        return (src_len - 1, src_len - 1, 0.0);
    }
    (s0, s0 + 1, s - s0 as f64)
}

/// Row-major [m,k] @ [k,n] with an i-k-j loop so the inner updates run over
/// contiguous rows.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Apply `f` elementwise over broadcast operands, producing `out_shape`.
fn broadcast_apply(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let n = numel(out_shape);
    // Fast path: identical shapes.
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    // Fast path: b repeats as a suffix block of a (e.g. [L,d] op [d]).
    if a_shape == out_shape && is_suffix_repeat(b_shape, out_shape) && !b.is_empty() {
        let bn = b.len();
        return a.iter().enumerate().map(|(i, &x)| f(x, b[i % bn])).collect();
    }
    if b_shape == out_shape && is_suffix_repeat(a_shape, out_shape) && !a.is_empty() {
        let an = a.len();
        return b.iter().enumerate().map(|(i, &y)| f(a[i % an], y)).collect();
    }
    // Fast path: b matches a on leading axes with trailing 1s (e.g. [L,h,1]).
    if a_shape == out_shape {
        if let Some(block) = inner_ones_block(b_shape, out_shape) {
            return a.iter().enumerate().map(|(i, &x)| f(x, b[i / block])).collect();
        }
    }
    if b_shape == out_shape {
        if let Some(block) = inner_ones_block(a_shape, out_shape) {
            return b.iter().enumerate().map(|(i, &y)| f(a[i / block], y)).collect();
        }
    }
    // Generic strided walk.
    let nd = out_shape.len();
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut out = vec![0.0; n];
    let mut coords = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in out.iter_mut() {
        *o = f(a[ia], b[ib]);
        for d in (0..nd).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            coords[d] = 0;
        }
    }
    out
}

/// Expand `data` of `shape` to `out_shape` by broadcasting.
pub(crate) fn expand_to(data: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if shape == out_shape {
        return data.to_vec();
    }
    broadcast_apply(&[0.0], &[1], data, shape, out_shape, |_, y| y)
}

/// Sum `grad` (of `out_shape`) down to `target_shape`, the adjoint of
/// broadcasting.
pub(crate) fn reduce_to_shape(grad: &[f64], out_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if out_shape == target_shape {
        return grad.to_vec();
    }
    let tn = numel(target_shape);
    let mut out = vec![0.0; tn];
    if is_suffix_repeat(target_shape, out_shape) && tn > 0 {
        for (i, &g) in grad.iter().enumerate() {
            out[i % tn] += g;
        }
        return out;
    }
    if let Some(block) = inner_ones_block(target_shape, out_shape) {
        for (i, &g) in grad.iter().enumerate() {
            out[i / block] += g;
        }
        return out;
    }
    let nd = out_shape.len();
    let st = broadcast_strides(target_shape, out_shape);
    let mut coords = vec![0usize; nd];
    let mut it = 0usize;
    for &g in grad {
        out[it] += g;
        for d in (0..nd).rev() {
            coords[d] += 1;
            it += st[d];
            if coords[d] < out_shape[d] {
                break;
            }
            it -= st[d] * out_shape[d];
            coords[d] = 0;
        }
    }
    out
}

/// True when `small` right-aligns against `out` with only leading 1s, so its
/// data tiles as a repeating suffix block.
fn is_suffix_repeat(small: &[usize], out: &[usize]) -> bool {
    let p = pad_left(small, out.len());
    let first_real = p.iter().position(|&d| d != 1).unwrap_or(p.len());
    p[first_real..] == out[first_real..]
}

/// If `small` equals `out` on leading axes and is all-1 on trailing axes,
/// return the trailing block size; else None.
fn inner_ones_block(small: &[usize], out: &[usize]) -> Option<usize> {
    let p = pad_left(small, out.len());
    let mut boundary = p.len();
    for i in (0..p.len()).rev() {
        if p[i] == 1 && out[i] != 1 {
            boundary = i;
        } else {
            break;
        }
    }
    if boundary == p.len() {
        return None;
    }
    if p[..boundary] != out[..boundary] {
        return None;
    }
    Some(out[boundary..].iter().product())
}

/// Per-axis element strides of `shape` broadcast into `out_shape`
/// (0 on expanded axes).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let p = pad_left(shape, nd);
    let mut own = vec![0usize; nd];
    let mut acc = 1usize;
    for d in (0..nd).rev() {
        own[d] = if p[d] == 1 { 0 } else { acc };
        acc *= p[d];
    }
    own
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn add_componentwise() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[2], &[1.0, 2.0]));
        let b = g.leaf(&t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.data(c), &[4.0, 6.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[2], &[0.0, 0.0]));
        let s = g.softmax(a).unwrap();
        assert_eq!(g.data(s), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_against_triple_loop_oracle() {
        let mut rng = crate::rng::SplitMix64::new(11);
        let a: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        // independent triple-loop oracle
        let mut expect = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..3 {
                    s += a[i * 3 + p] * b[p * 2 + j];
                }
                expect[i * 2 + j] = s;
            }
        }
        let mut g = Graph::new();
        let na = g.leaf(&t(&[2, 3], &a));
        let nb = g.leaf(&t(&[3, 2], &b));
        let c = g.matmul(na, nb).unwrap();
        for (got, want) in g.data(c).iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "matmul {got} vs oracle {want}");
        }
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[2, 3], &[0.0; 6]));
        let b = g.leaf(&t(&[2, 2], &[0.0; 4]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).trainable());
        let loss = g.sum_all(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn product_rule_grad() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]).trainable());
        let y = g.leaf(&t(&[3], &[5.0, -1.0, 0.25]));
        let p = g.mul(x, y).unwrap();
        let loss = g.sum_all(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0, -1.0, 0.25]);
    }

    #[test]
    fn frozen_leaves_get_no_grad() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]));
        let y = g.leaf(&t(&[2], &[3.0, 4.0]).trainable());
        let p = g.mul(x, y).unwrap();
        let loss = g.sum_all(p);
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_none());
        assert!(g.grad(y).is_some());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]).trainable());
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut rng = crate::rng::SplitMix64::new(5);
            let xv: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let wv: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
            let mut g = Graph::new();
            let x = g.leaf(&t(&[3, 4], &xv).trainable());
            let w = g.leaf(&t(&[4, 5], &wv).trainable());
            let y = g.matmul(x, w).unwrap();
            let s = g.sigmoid(y);
            let loss = g.mean_all(s);
            g.backward(loss).unwrap();
            (g.grad(x).unwrap().to_vec(), g.grad(w).unwrap().to_vec())
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert!(a1.iter().zip(&a2).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(b1.iter().zip(&b2).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn broadcast_row_mul_matches_tiling() {
        let mut rng = crate::rng::SplitMix64::new(21);
        let a: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let mut g = Graph::new();
        let na = g.leaf(&t(&[3, 4], &a));
        let nb = g.leaf(&t(&[4], &b));
        let m = g.mul(na, nb).unwrap();
        let tiled: Vec<f64> = (0..12).map(|i| a[i] * b[i % 4]).collect();
        assert_eq!(g.data(m), tiled.as_slice());
    }

    #[test]
    fn inner_ones_broadcast() {
        // [2,2,3] * [2,2,1]
        let a: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let b = vec![2.0, 3.0, 4.0, 5.0];
        let mut g = Graph::new();
        let na = g.leaf(&t(&[2, 2, 3], &a));
        let nb = g.leaf(&t(&[2, 2, 1], &b));
        let m = g.mul(na, nb).unwrap();
        let expect: Vec<f64> = (0..12).map(|i| a[i] * b[i / 3]).collect();
        assert_eq!(g.data(m), expect.as_slice());
    }

    #[test]
    fn generic_broadcast_middle_axis() {
        // [2,1,3] + [1,2,1] -> [2,2,3]
        let a = vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        let b = vec![100.0, 200.0];
        let mut g = Graph::new();
        let na = g.leaf(&t(&[2, 1, 3], &a));
        let nb = g.leaf(&t(&[1, 2, 1], &b));
        let s = g.add(na, nb).unwrap();
        assert_eq!(g.shape(s), &[2, 2, 3]);
        let d = g.data(s);
        assert_eq!(d[0], 101.0);
        assert_eq!(d[3], 201.0);
        assert_eq!(d[6], 110.0);
        assert_eq!(d[11], 230.0);
    }

    #[test]
    fn slice_and_concat_roundtrip() {
        let a: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let mut g = Graph::new();
        let na = g.leaf(&t(&[4, 6], &a));
        let left = g.slice(na, 1, 0, 3).unwrap();
        let right = g.slice(na, 1, 3, 6).unwrap();
        let back = g.concat(&[left, right], 1).unwrap();
        assert_eq!(g.data(back), a.as_slice());
    }

    #[test]
    fn embed_gathers_and_scatters() {
        let mut g = Graph::new();
        let table = g.leaf(&t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).trainable());
        let e = g.embed(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.data(e), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = g.sum_all(e);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embed_rejects_out_of_range() {
        let mut g = Graph::new();
        let table = g.leaf(&t(&[3, 2], &[0.0; 6]));
        assert!(g.embed(table, &[3]).is_err());
    }

    #[test]
    fn masked_fill_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[4], &[1.0, 2.0, 3.0, 4.0]).trainable());
        let m = g
            .masked_fill(x, &[false, true, false, true], f64::NEG_INFINITY)
            .unwrap();
        let s = g.softmax(m).unwrap();
        let loss = g.sum_all(s);
        g.backward(loss).unwrap();
        let gx = g.grad(x).unwrap();
        assert_eq!(gx[1], 0.0);
        assert_eq!(gx[3], 0.0);
    }

    #[test]
    fn upsample_nearest_values() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[1, 2, 1], &[1.0, 2.0]));
        let u = g.upsample2d(a, 2, false).unwrap();
        assert_eq!(g.shape(u), &[2, 4, 1]);
        assert_eq!(g.data(u), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn upsample_bilinear_grad_conserves_mass() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).trainable());
        let u = g.upsample2d(a, 2, true).unwrap();
        let loss = g.sum_all(u);
        g.backward(loss).unwrap();
        let total: f64 = g.grad(a).unwrap().iter().sum();
        assert!((total - 16.0).abs() < 1e-12, "grad mass {total}");
    }
}
