//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are created in topological order by construction; `backward`
//! walks them once in reverse, accumulating gradients into the nodes
//! that need them. Parameter leaves are deduplicated per graph and
//! flushed into the owning [`ParamStore`] after the backward pass.

use std::collections::HashMap;

use super::{invalid, ParamStore, Tensor, TensorError};

pub type NodeId = usize;

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    ConcatLast(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    MeanRows(NodeId),
    PickRow(NodeId, usize),
    Reshape(NodeId),
    EmbedBag(NodeId, Vec<Vec<u32>>),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    AvgPool2d(NodeId, usize),
    WeightedCe {
        logits: NodeId,
        labels: Vec<usize>,
        weights: [f64; 2],
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Parameter node ids for one gated multimodal unit.
#[derive(Debug, Clone, Copy)]
pub struct GmuParams {
    pub w_text: NodeId,
    pub b_text: NodeId,
    pub w_vision: NodeId,
    pub b_vision: NodeId,
    pub w_gate: NodeId,
    pub b_gate: NodeId,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    param_leaves: HashMap<usize, NodeId>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last backward target w.r.t. node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<NodeId, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Constant leaf (inputs, precomputed features).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Trainable leaf bound to a store parameter; one node per
    /// parameter per graph, however often it is referenced.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId, TensorError> {
        let idx = store.index_of(name)?;
        if let Some(&id) = self.param_leaves.get(&idx) {
            return Ok(id);
        }
        let id = self.push(store.by_index(idx).value.clone(), Op::Param(idx), true);
        self.param_leaves.insert(idx, id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        mm_nn_acc(ta.data(), tb.data(), &mut out, n, k, m);
        let requires = self.requires(a) || self.requires(b);
        self.push_checked(
            "matmul",
            Tensor::from_vec(&[n, m], out)?,
            Op::MatMul(a, b),
            requires,
        )
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let t = &self.nodes[x].value;
        if t.rank() != 2 {
            return Err(invalid("transpose", format!("rank {} input", t.rank())));
        }
        let (n, m) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = t.data()[i * m + j];
            }
        }
        let requires = self.requires(x);
        self.push_checked(
            "transpose",
            Tensor::from_vec(&[m, n], out)?,
            Op::Transpose(x),
            requires,
        )
    }

    /// `x + b`, with `b` broadcast over every leading dimension.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (tx, tb) = (&self.nodes[x].value, &self.nodes[b].value);
        if tb.rank() != 1 || tx.last_dim() != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: tx.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let d = tb.shape()[0];
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let shape = tx.shape().to_vec();
        let requires = self.requires(x) || self.requires(b);
        self.push_checked(
            "add_bias",
            Tensor::from_vec(&shape, out)?,
            Op::AddBias(x, b),
            requires,
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let requires = self.requires(a) || self.requires(b);
        self.push_checked(
            "add",
            Tensor::from_vec(&shape, out)?,
            Op::Add(a, b),
            requires,
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let requires = self.requires(a) || self.requires(b);
        self.push_checked(
            "mul",
            Tensor::from_vec(&shape, out)?,
            Op::Mul(a, b),
            requires,
        )
    }

    /// `mul·x + add`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x].value;
        let out: Vec<f64> = tx.data().iter().map(|v| mul * v + add).collect();
        let shape = tx.shape().to_vec();
        let requires = self.requires(x);
        self.push_checked(
            "affine",
            Tensor::from_vec(&shape, out)?,
            Op::Affine(x, mul),
            requires,
        )
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary(x, "tanh", f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.unary(x, "relu", |v| v.max(0.0), Op::Relu(x))
    }

    fn unary(
        &mut self,
        x: NodeId,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x].value;
        let out: Vec<f64> = tx.data().iter().map(|&v| f(v)).collect();
        let shape = tx.shape().to_vec();
        let requires = self.requires(x);
        self.push_checked(name, Tensor::from_vec(&shape, out)?, op, requires)
    }

    /// Numerically stable softmax over the last dimension, rows
    /// summing to one.
    pub fn softmax_lastdim(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.softmax_impl(x, None)
    }

    /// Softmax with key positions excluded from the distribution:
    /// `exclude[j]` removes position j of every row.
    pub fn softmax_lastdim_masked(
        &mut self,
        x: NodeId,
        exclude: &[bool],
    ) -> Result<NodeId, TensorError> {
        self.softmax_impl(x, Some(exclude.to_vec()))
    }

    fn softmax_impl(
        &mut self,
        x: NodeId,
        exclude: Option<Vec<bool>>,
    ) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x].value;
        let d = tx.last_dim();
        if d == 0 {
            return Err(invalid("softmax", "empty last dimension"));
        }
        if let Some(mask) = &exclude {
            if mask.len() != d {
                return Err(invalid(
                    "softmax",
                    format!("mask length {} vs last dim {d}", mask.len()),
                ));
            }
            if mask.iter().all(|&m| m) {
                return Err(invalid("softmax", "every position is excluded"));
            }
        }
        let keep = |j: usize| exclude.as_ref().map_or(true, |m| !m[j]);
        let mut out = vec![0.0; tx.len()];
        for (row_in, row_out) in tx.data().chunks(d).zip(out.chunks_mut(d)) {
            let max = row_in
                .iter()
                .enumerate()
                .filter(|&(j, _)| keep(j))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..d {
                if keep(j) {
                    row_out[j] = (row_in[j] - max).exp();
                    sum += row_out[j];
                }
            }
            for v in row_out.iter_mut() {
                *v /= sum;
            }
        }
        let shape = tx.shape().to_vec();
        let requires = self.requires(x);
        self.push_checked(
            "softmax",
            Tensor::from_vec(&shape, out)?,
            Op::Softmax(x),
            requires,
        )
    }

    /// Concatenation along the last dimension; all leading dims must
    /// agree.
    pub fn concat_lastdim(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let mismatch = ta.rank() != tb.rank()
            || ta.rank() == 0
            || ta.shape()[..ta.rank() - 1] != tb.shape()[..tb.rank() - 1];
        if mismatch {
            return Err(TensorError::ShapeMismatch {
                op: "concat_lastdim",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (da, db) = (ta.last_dim(), tb.last_dim());
        let rows = ta.leading();
        let mut out = Vec::with_capacity(rows * (da + db));
        for i in 0..rows {
            out.extend_from_slice(&ta.data()[i * da..(i + 1) * da]);
            out.extend_from_slice(&tb.data()[i * db..(i + 1) * db]);
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().expect("rank checked above") = da + db;
        let requires = self.requires(a) || self.requires(b);
        self.push_checked(
            "concat_lastdim",
            Tensor::from_vec(&shape, out)?,
            Op::ConcatLast(a, b),
            requires,
        )
    }

    /// Stacks rank-2 blocks along the first dimension.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(invalid("concat_rows", "no parts"));
        }
        let d = self.nodes[parts[0]].value.last_dim();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = &self.nodes[p].value;
            if t.rank() != 2 || t.last_dim() != d {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.nodes[parts[0]].value.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            rows += t.shape()[0];
            out.extend_from_slice(t.data());
        }
        let requires = parts.iter().any(|&p| self.requires(p));
        self.push_checked(
            "concat_rows",
            Tensor::from_vec(&[rows, d], out)?,
            Op::ConcatRows(parts.to_vec()),
            requires,
        )
    }

    /// Column means of a non-empty [n, d] matrix.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x].value;
        if tx.rank() != 2 || tx.shape()[0] == 0 {
            return Err(invalid(
                "mean_rows",
                format!("need a non-empty matrix, got {:?}", tx.shape()),
            ));
        }
        let (n, d) = (tx.shape()[0], tx.shape()[1]);
        let mut out = vec![0.0; d];
        for row in tx.data().chunks(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let requires = self.requires(x);
        self.push_checked(
            "mean_rows",
            Tensor::from_vec(&[d], out)?,
            Op::MeanRows(x),
            requires,
        )
    }

    /// Extracts row `row` of a matrix as a vector.
    pub fn pick_row(&mut self, x: NodeId, row: usize) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x].value;
        if tx.rank() != 2 || row >= tx.shape()[0] {
            return Err(invalid(
                "pick_row",
                format!("row {row} of shape {:?}", tx.shape()),
            ));
        }
        let d = tx.shape()[1];
        let out = tx.data()[row * d..(row + 1) * d].to_vec();
        let requires = self.requires(x);
        self.push_checked(
            "pick_row",
            Tensor::from_vec(&[d], out)?,
            Op::PickRow(x, row),
            requires,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let value = self.nodes[x].value.reshaped(shape)?;
        let requires = self.requires(x);
        self.push_checked("reshape", value, Op::Reshape(x), requires)
    }

    /// `out[i] = Σ_{j ∈ bags[i]} table[j]`; the trainable route from a
    /// hashed-feature vocabulary into dense rows.
    pub fn embed_bag(&mut self, table: NodeId, bags: Vec<Vec<u32>>) -> Result<NodeId, TensorError> {
        let tt = &self.nodes[table].value;
        if tt.rank() != 2 {
            return Err(invalid("embed_bag", "table must be rank 2"));
        }
        let (buckets, d) = (tt.shape()[0], tt.shape()[1]);
        let mut out = vec![0.0; bags.len() * d];
        for (i, bag) in bags.iter().enumerate() {
            for &j in bag {
                let j = j as usize;
                if j >= buckets {
                    return Err(invalid(
                        "embed_bag",
                        format!("bucket {j} out of range {buckets}"),
                    ));
                }
                let row = &tt.data()[j * d..(j + 1) * d];
                for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let n = bags.len();
        let requires = self.requires(table);
        self.push_checked(
            "embed_bag",
            Tensor::from_vec(&[n, d], out)?,
            Op::EmbedBag(table, bags),
            requires,
        )
    }

    /// 2-D convolution over one [C, H, W] image with zero padding.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        let (tx, tw, tb) = (
            &self.nodes[x].value,
            &self.nodes[w].value,
            &self.nodes[b].value,
        );
        if tx.rank() != 3 || tw.rank() != 4 || tb.rank() != 1 {
            return Err(invalid(
                "conv2d",
                format!(
                    "expected x[C,H,W] w[O,C,KH,KW] b[O], got {:?} {:?} {:?}",
                    tx.shape(),
                    tw.shape(),
                    tb.shape()
                ),
            ));
        }
        let (c, h, wdt) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (o, wc, kh, kw) = (tw.shape()[0], tw.shape()[1], tw.shape()[2], tw.shape()[3]);
        if wc != c || tb.shape()[0] != o || stride == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        if h + 2 * pad < kh || wdt + 2 * pad < kw {
            return Err(invalid("conv2d", "kernel larger than padded input"));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wdt + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; o * oh * ow];
        conv2d_forward(
            tx.data(),
            tw.data(),
            tb.data(),
            &mut out,
            ConvDims {
                c,
                h,
                w: wdt,
                o,
                kh,
                kw,
                oh,
                ow,
                stride,
                pad,
            },
        );
        let requires = self.requires(x) || self.requires(w) || self.requires(b);
        self.push_checked(
            "conv2d",
            Tensor::from_vec(&[o, oh, ow], out)?,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            requires,
        )
    }

    /// Non-overlapping average pooling with square windows; trailing
    /// rows and columns that do not fill a window are dropped.
    pub fn avg_pool2d(&mut self, x: NodeId, size: usize) -> Result<NodeId, TensorError> {
        let tx = &self.nodes[x].value;
        if tx.rank() != 3 || size == 0 {
            return Err(invalid(
                "avg_pool2d",
                format!("expected [C,H,W] and size ≥ 1, got {:?}", tx.shape()),
            ));
        }
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        if h < size || w < size {
            return Err(invalid("avg_pool2d", "window larger than input"));
        }
        let (oh, ow) = (h / size, w / size);
        let norm = 1.0 / (size * size) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let plane = &tx.data()[ch * h * w..(ch + 1) * h * w];
            let oplane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..size {
                        let row = (oy * size + dy) * w + ox * size;
                        for dx in 0..size {
                            acc += plane[row + dx];
                        }
                    }
                    oplane[oy * ow + ox] = acc * norm;
                }
            }
        }
        let requires = self.requires(x);
        self.push_checked(
            "avg_pool2d",
            Tensor::from_vec(&[c, oh, ow], out)?,
            Op::AvgPool2d(x, size),
            requires,
        )
    }

    /// Mean over the batch of `w[label_i] · (−log softmax(logits_i)[label_i])`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        weights: [f64; 2],
    ) -> Result<NodeId, TensorError> {
        let tl = &self.nodes[logits].value;
        if tl.rank() != 2 || tl.shape()[1] != 2 || tl.shape()[0] != labels.len() {
            return Err(invalid(
                "weighted_cross_entropy",
                format!("logits {:?} vs {} labels", tl.shape(), labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(invalid("weighted_cross_entropy", "empty batch"));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(invalid(
                "weighted_cross_entropy",
                format!("class weights must be positive, got {weights:?}"),
            ));
        }
        let mut total = 0.0;
        for (row, &label) in tl.data().chunks(2).zip(labels) {
            if label > 1 {
                return Err(TensorError::BadLabel(label));
            }
            let max = row[0].max(row[1]);
            let lse = max + ((row[0] - max).exp() + (row[1] - max).exp()).ln();
            total += weights[label] * (lse - row[label]);
        }
        let loss = total / labels.len() as f64;
        let requires = self.requires(logits);
        self.push_checked(
            "weighted_cross_entropy",
            Tensor::scalar(loss),
            Op::WeightedCe {
                logits,
                labels: labels.to_vec(),
                weights,
            },
            requires,
        )
    }

    /// `x·W + b`, broadcasting over all leading dimensions of `x`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (tx, tw) = (&self.nodes[x].value, &self.nodes[w].value);
        if tw.rank() != 2 || tx.last_dim() != tw.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        let out_dim = tw.shape()[1];
        let rank = tx.rank();
        let mut out_shape = tx.shape().to_vec();
        if rank == 0 {
            out_shape = vec![out_dim];
        } else {
            *out_shape.last_mut().expect("non-empty") = out_dim;
        }
        let flat_rows = tx.leading();
        let in_dim = tx.last_dim();
        let x2 = if rank == 2 {
            x
        } else {
            self.reshape(x, &[flat_rows, in_dim])?
        };
        let y2 = self.matmul(x2, w)?;
        let y2b = self.add_bias(y2, b)?;
        if rank == 2 {
            Ok(y2b)
        } else {
            self.reshape(y2b, &out_shape)
        }
    }

    /// Gated multimodal unit: tanh projections of each modality, a
    /// sigmoid gate over their concatenation, and the gated blend
    /// `h = z·h_text + (1−z)·h_vision`. Returns `(h, gate)`.
    pub fn gmu(
        &mut self,
        f_text: NodeId,
        f_vision: NodeId,
        p: GmuParams,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let ht_pre = self.dense(f_text, p.w_text, p.b_text)?;
        let h_text = self.tanh(ht_pre)?;
        let hv_pre = self.dense(f_vision, p.w_vision, p.b_vision)?;
        let h_vision = self.tanh(hv_pre)?;
        let both = self.concat_lastdim(f_text, f_vision)?;
        let gate_pre = self.dense(both, p.w_gate, p.b_gate)?;
        let gate = self.sigmoid(gate_pre)?;
        let gated_text = self.mul(gate, h_text)?;
        let inverse_gate = self.affine(gate, -1.0, 1.0)?;
        let gated_vision = self.mul(inverse_gate, h_vision)?;
        let h = self.add(gated_text, gated_vision)?;
        Ok((h, gate))
    }

    /// `softmax(QKᵀ/√d)·V` with optional key positions excluded from
    /// the softmax. Every output row is a convex combination of V's
    /// rows.
    pub fn scaled_dot_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        exclude_keys: Option<&[bool]>,
    ) -> Result<NodeId, TensorError> {
        let (tq, tk, tv) = (
            &self.nodes[q].value,
            &self.nodes[k].value,
            &self.nodes[v].value,
        );
        if tq.rank() != 2 || tk.rank() != 2 || tv.rank() != 2 {
            return Err(invalid("attention", "Q, K, V must be rank 2"));
        }
        let d = tq.shape()[1];
        let m = tk.shape()[0];
        if d == 0 || m == 0 {
            return Err(invalid("attention", "empty key dimension or key set"));
        }
        if tk.shape()[1] != d {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                left: tq.shape().to_vec(),
                right: tk.shape().to_vec(),
            });
        }
        if tv.shape()[0] != m {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                left: tk.shape().to_vec(),
                right: tv.shape().to_vec(),
            });
        }
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.affine(scores, 1.0 / (d as f64).sqrt(), 0.0)?;
        let attn = match exclude_keys {
            Some(mask) => self.softmax_lastdim_masked(scaled, mask)?,
            None => self.softmax_lastdim(scaled)?,
        };
        self.matmul(attn, v)
    }

    /// Mean over sequence positions of an [n, d] feature matrix.
    pub fn global_average_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.mean_rows(x)
    }

    /// Reverse accumulation from a scalar node. Gradients are kept on
    /// the graph; flush parameter gradients with [`Graph::accumulate_grads`].
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        if self.nodes[loss].value.len() != 1 {
            return Err(invalid(
                "backward",
                format!("target must be scalar, got {:?}", self.nodes[loss].value.shape()),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let seed_shape = self.nodes[loss].value.shape().to_vec();
        self.grads[loss] = Some(Tensor::filled(&seed_shape, 1.0));

        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(gy) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &gy)?;
            self.grads[id] = Some(gy);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: NodeId, contribution: Tensor) {
        match &mut self.grads[target] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, id: NodeId, gy: &Tensor) -> Result<(), TensorError> {
        match &self.nodes[id].op {
            Op::Input | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (n, k) = {
                    let ta = &self.nodes[a].value;
                    (ta.shape()[0], ta.shape()[1])
                };
                let m = self.nodes[b].value.shape()[1];
                if self.requires(a) {
                    let mut da = vec![0.0; n * k];
                    mm_nt_acc(gy.data(), self.nodes[b].value.data(), &mut da, n, m, k);
                    self.accumulate(a, Tensor::from_vec(&[n, k], da)?);
                }
                if self.requires(b) {
                    let mut db = vec![0.0; k * m];
                    mm_tn_acc(self.nodes[a].value.data(), gy.data(), &mut db, n, k, m);
                    self.accumulate(b, Tensor::from_vec(&[k, m], db)?);
                }
            }
            &Op::Transpose(x) => {
                if self.requires(x) {
                    let (m, n) = (gy.shape()[0], gy.shape()[1]);
                    let mut dx = vec![0.0; n * m];
                    for i in 0..m {
                        for j in 0..n {
                            dx[j * m + i] = gy.data()[i * n + j];
                        }
                    }
                    self.accumulate(x, Tensor::from_vec(&[n, m], dx)?);
                }
            }
            &Op::AddBias(x, b) => {
                if self.requires(x) {
                    self.accumulate(x, gy.clone());
                }
                if self.requires(b) {
                    let d = self.nodes[b].value.shape()[0];
                    let mut db = vec![0.0; d];
                    for row in gy.data().chunks(d) {
                        for (o, &g) in db.iter_mut().zip(row) {
                            *o += g;
                        }
                    }
                    self.accumulate(b, Tensor::from_vec(&[d], db)?);
                }
            }
            &Op::Add(a, b) => {
                if self.requires(a) {
                    self.accumulate(a, gy.clone());
                }
                if self.requires(b) {
                    self.accumulate(b, gy.clone());
                }
            }
            &Op::Mul(a, b) => {
                if self.requires(a) {
                    let da: Vec<f64> = gy
                        .data()
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .map(|(g, v)| g * v)
                        .collect();
                    let shape = gy.shape().to_vec();
                    self.accumulate(a, Tensor::from_vec(&shape, da)?);
                }
                if self.requires(b) {
                    let db: Vec<f64> = gy
                        .data()
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(g, v)| g * v)
                        .collect();
                    let shape = gy.shape().to_vec();
                    self.accumulate(b, Tensor::from_vec(&shape, db)?);
                }
            }
            &Op::Affine(x, mul) => {
                if self.requires(x) {
                    let dx: Vec<f64> = gy.data().iter().map(|g| g * mul).collect();
                    let shape = gy.shape().to_vec();
                    self.accumulate(x, Tensor::from_vec(&shape, dx)?);
                }
            }
            &Op::Tanh(x) => {
                if self.requires(x) {
                    let y = self.nodes[id].value.data();
                    let dx: Vec<f64> = gy
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(g, &v)| g * (1.0 - v * v))
                        .collect();
                    let shape = gy.shape().to_vec();
                    self.accumulate(x, Tensor::from_vec(&shape, dx)?);
                }
            }
            &Op::Sigmoid(x) => {
                if self.requires(x) {
                    let y = self.nodes[id].value.data();
                    let dx: Vec<f64> = gy
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(g, &v)| g * v * (1.0 - v))
                        .collect();
                    let shape = gy.shape().to_vec();
                    self.accumulate(x, Tensor::from_vec(&shape, dx)?);
                }
            }
            &Op::Relu(x) => {
                if self.requires(x) {
                    let y = self.nodes[id].value.data();
                    let dx: Vec<f64> = gy
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    let shape = gy.shape().to_vec();
                    self.accumulate(x, Tensor::from_vec(&shape, dx)?);
                }
            }
            &Op::Softmax(x) => {
                if self.requires(x) {
                    let y = self.nodes[id].value.data();
                    let d = self.nodes[id].value.last_dim();
                    let mut dx = vec![0.0; y.len()];
                    for ((yrow, grow), drow) in y
                        .chunks(d)
                        .zip(gy.data().chunks(d))
                        .zip(dx.chunks_mut(d))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                        for j in 0..d {
                            drow[j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    let shape = gy.shape().to_vec();
                    self.accumulate(x, Tensor::from_vec(&shape, dx)?);
                }
            }
            &Op::ConcatLast(a, b) => {
                let da = self.nodes[a].value.last_dim();
                let db = self.nodes[b].value.last_dim();
                let rows = self.nodes[a].value.leading();
                if self.requires(a) {
                    let mut ga = Vec::with_capacity(rows * da);
                    for i in 0..rows {
                        ga.extend_from_slice(&gy.data()[i * (da + db)..i * (da + db) + da]);
                    }
                    let shape = self.nodes[a].value.shape().to_vec();
                    self.accumulate(a, Tensor::from_vec(&shape, ga)?);
                }
                if self.requires(b) {
                    let mut gb = Vec::with_capacity(rows * db);
                    for i in 0..rows {
                        gb.extend_from_slice(
                            &gy.data()[i * (da + db) + da..(i + 1) * (da + db)],
                        );
                    }
                    let shape = self.nodes[b].value.shape().to_vec();
                    self.accumulate(b, Tensor::from_vec(&shape, gb)?);
                }
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let d = self.nodes[id].value.last_dim();
                let mut offset = 0;
                for p in parts {
                    let rows = self.nodes[p].value.shape()[0];
                    if self.requires(p) {
                        let gp = gy.data()[offset * d..(offset + rows) * d].to_vec();
                        self.accumulate(p, Tensor::from_vec(&[rows, d], gp)?);
                    }
                    offset += rows;
                }
            }
            &Op::MeanRows(x) => {
                if self.requires(x) {
                    let (n, d) = (
                        self.nodes[x].value.shape()[0],
                        self.nodes[x].value.shape()[1],
                    );
                    let scale = 1.0 / n as f64;
                    let mut dx = vec![0.0; n * d];
                    for row in dx.chunks_mut(d) {
                        for (o, &g) in row.iter_mut().zip(gy.data()) {
                            *o = g * scale;
                        }
                    }
                    self.accumulate(x, Tensor::from_vec(&[n, d], dx)?);
                }
            }
            &Op::PickRow(x, row) => {
                if self.requires(x) {
                    let (n, d) = (
                        self.nodes[x].value.shape()[0],
                        self.nodes[x].value.shape()[1],
                    );
                    let mut dx = vec![0.0; n * d];
                    dx[row * d..(row + 1) * d].copy_from_slice(gy.data());
                    self.accumulate(x, Tensor::from_vec(&[n, d], dx)?);
                }
            }
            &Op::Reshape(x) => {
                if self.requires(x) {
                    let shape = self.nodes[x].value.shape().to_vec();
                    self.accumulate(x, Tensor::from_vec(&shape, gy.data().to_vec())?);
                }
            }
            Op::EmbedBag(table, bags) => {
                let table = *table;
                if self.requires(table) {
                    let bags = bags.clone();
                    let (buckets, d) = (
                        self.nodes[table].value.shape()[0],
                        self.nodes[table].value.shape()[1],
                    );
                    let mut dt = vec![0.0; buckets * d];
                    for (i, bag) in bags.iter().enumerate() {
                        let grow = &gy.data()[i * d..(i + 1) * d];
                        for &j in bag {
                            let j = j as usize;
                            for (o, &g) in dt[j * d..(j + 1) * d].iter_mut().zip(grow) {
                                *o += g;
                            }
                        }
                    }
                    self.accumulate(table, Tensor::from_vec(&[buckets, d], dt)?);
                }
            }
            &Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let dims = {
                    let (tx, tw) = (&self.nodes[x].value, &self.nodes[w].value);
                    ConvDims {
                        c: tx.shape()[0],
                        h: tx.shape()[1],
                        w: tx.shape()[2],
                        o: tw.shape()[0],
                        kh: tw.shape()[2],
                        kw: tw.shape()[3],
                        oh: self.nodes[id].value.shape()[1],
                        ow: self.nodes[id].value.shape()[2],
                        stride,
                        pad,
                    }
                };
                if self.requires(w) {
                    let mut dw = vec![0.0; dims.o * dims.c * dims.kh * dims.kw];
                    conv2d_grad_w(self.nodes[x].value.data(), gy.data(), &mut dw, dims);
                    let shape = self.nodes[w].value.shape().to_vec();
                    self.accumulate(w, Tensor::from_vec(&shape, dw)?);
                }
                if self.requires(b) {
                    let mut db = vec![0.0; dims.o];
                    for (o, chunk) in gy.data().chunks(dims.oh * dims.ow).enumerate() {
                        db[o] = chunk.iter().sum();
                    }
                    self.accumulate(b, Tensor::from_vec(&[dims.o], db)?);
                }
                if self.requires(x) {
                    let mut dx = vec![0.0; dims.c * dims.h * dims.w];
                    conv2d_grad_x(self.nodes[w].value.data(), gy.data(), &mut dx, dims);
                    let shape = self.nodes[x].value.shape().to_vec();
                    self.accumulate(x, Tensor::from_vec(&shape, dx)?);
                }
            }
            &Op::AvgPool2d(x, size) => {
                if self.requires(x) {
                    let tx_shape = self.nodes[x].value.shape().to_vec();
                    let (c, h, w) = (tx_shape[0], tx_shape[1], tx_shape[2]);
                    let (oh, ow) = (h / size, w / size);
                    let norm = 1.0 / (size * size) as f64;
                    let mut dx = vec![0.0; c * h * w];
                    for ch in 0..c {
                        let gplane = &gy.data()[ch * oh * ow..(ch + 1) * oh * ow];
                        let dplane = &mut dx[ch * h * w..(ch + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = gplane[oy * ow + ox] * norm;
                                for dy in 0..size {
                                    let row = (oy * size + dy) * w + ox * size;
                                    for dxi in 0..size {
                                        dplane[row + dxi] += g;
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(x, Tensor::from_vec(&tx_shape, dx)?);
                }
            }
            Op::WeightedCe {
                logits,
                labels,
                weights,
            } => {
                let logits = *logits;
                if self.requires(logits) {
                    let labels = labels.clone();
                    let weights = *weights;
                    let g = gy.item();
                    let n = labels.len() as f64;
                    let tl = self.nodes[logits].value.data();
                    let mut dl = vec![0.0; tl.len()];
                    for ((row, &label), drow) in
                        tl.chunks(2).zip(&labels).zip(dl.chunks_mut(2))
                    {
                        let max = row[0].max(row[1]);
                        let e0 = (row[0] - max).exp();
                        let e1 = (row[1] - max).exp();
                        let sum = e0 + e1;
                        let p = [e0 / sum, e1 / sum];
                        let scale = g * weights[label] / n;
                        for c in 0..2 {
                            drow[c] = scale * (p[c] - if c == label { 1.0 } else { 0.0 });
                        }
                    }
                    let shape = self.nodes[logits].value.shape().to_vec();
                    self.accumulate(logits, Tensor::from_vec(&shape, dl)?);
                }
            }
        }
        Ok(())
    }

    /// Adds this graph's parameter gradients into the store.
    pub fn accumulate_grads(&self, store: &mut ParamStore) -> Result<(), TensorError> {
        for (node_id, node) in self.nodes.iter().enumerate() {
            let Op::Param(param_idx) = node.op else {
                continue;
            };
            if let Some(grad) = self.grad(node_id) {
                if !grad.is_finite() {
                    return Err(TensorError::NonFinite { op: "gradient" });
                }
                let target = store.by_index_mut(param_idx);
                for (t, &g) in target.grad.data_mut().iter_mut().zip(grad.data()) {
                    *t += g;
                }
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// out[n,m] += a[n,k] · b[k,m]
fn mm_nn_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[kk * m..(kk + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

/// out[n,k] += a[n,m] · b[k,m]ᵀ
fn mm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        let orow = &mut out[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * m..(kk + 1) * m];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// out[k,m] += a[n,k]ᵀ · b[n,m]
fn mm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[kk * m..(kk + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

/// Unrolled patch matrix: `col[(c·KH+ky)·KW+kx, oy·OW+ox]` holds the
/// padded input pixel the kernel tap (ky, kx) sees at output (oy, ox).
fn im2col(x: &[f64], d: ConvDims) -> Vec<f64> {
    let rows = d.c * d.kh * d.kw;
    let cols = d.oh * d.ow;
    let mut col = vec![0.0; rows * cols];
    for c in 0..d.c {
        let xplane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &mut col[((c * d.kh + ky) * d.kw + kx) * cols
                    ..((c * d.kh + ky) * d.kw + kx + 1) * cols];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let xrow = &xplane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let out = &mut row[oy * d.ow..(oy + 1) * d.ow];
                    for (ox, slot) in out.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            *slot = xrow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter of the patch-matrix gradient back onto the input image.
fn col2im_acc(dcol: &[f64], dx: &mut [f64], d: ConvDims) {
    let cols = d.oh * d.ow;
    for c in 0..d.c {
        let dplane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &dcol[((c * d.kh + ky) * d.kw + kx) * cols
                    ..((c * d.kh + ky) * d.kw + kx + 1) * cols];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let drow = &mut dplane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let grow = &row[oy * d.ow..(oy + 1) * d.ow];
                    for (ox, &gv) in grow.iter().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            drow[ix as usize] += gv;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64], d: ConvDims) {
    let col = im2col(x, d);
    let cols = d.oh * d.ow;
    for (o, plane) in out.chunks_mut(cols).enumerate() {
        plane.fill(b[o]);
    }
    mm_nn_acc(w, &col, out, d.o, d.c * d.kh * d.kw, cols);
}

fn conv2d_grad_w(x: &[f64], gy: &[f64], dw: &mut [f64], d: ConvDims) {
    let col = im2col(x, d);
    let cols = d.oh * d.ow;
    mm_nt_acc(gy, &col, dw, d.o, cols, d.c * d.kh * d.kw);
}

fn conv2d_grad_x(w: &[f64], gy: &[f64], dx: &mut [f64], d: ConvDims) {
    let rows = d.c * d.kh * d.kw;
    let cols = d.oh * d.ow;
    let mut dcol = vec![0.0; rows * cols];
    mm_tn_acc(w, gy, &mut dcol, d.o, rows, cols);
    col2im_acc(&dcol, dx, d);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(g: &mut Graph, shape: &[usize], data: Vec<f64>) -> NodeId {
        g.input(Tensor::from_vec(shape, data).unwrap())
    }

    #[test]
    fn dense_identity_passes_through() {
        let mut g = Graph::new();
        let x = constant(&mut g, &[2], vec![1.0, 0.0]);
        let w = constant(&mut g, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = constant(&mut g, &[2], vec![0.0, 0.0]);
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 0.0]);
        assert_eq!(g.value(y).shape(), &[2]);
    }

    #[test]
    fn dense_hand_arithmetic() {
        let mut g = Graph::new();
        let x = constant(&mut g, &[2], vec![1.0, 2.0]);
        let w = constant(&mut g, &[2, 1], vec![1.0, 1.0]);
        let b = constant(&mut g, &[1], vec![0.5]);
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.5]);
    }

    #[test]
    fn dense_reports_both_shapes_on_mismatch() {
        let mut g = Graph::new();
        let x = constant(&mut g, &[3], vec![0.0; 3]);
        let w = constant(&mut g, &[2, 2], vec![0.0; 4]);
        let b = constant(&mut g, &[2], vec![0.0; 2]);
        let err = g.dense(x, w, b).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "dense", .. }));
        let msg = err.to_string();
        assert!(msg.contains("[3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn sigmoid_at_zero_is_exactly_half() {
        let mut g = Graph::new();
        let x = constant(&mut g, &[1], vec![0.0]);
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn softmax_of_uniform_logits_is_uniform() {
        let mut g = Graph::new();
        let x = constant(&mut g, &[3], vec![0.0, 0.0, 0.0]);
        let y = g.softmax_lastdim(x).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = constant(&mut g, &[2, 3], vec![5.0, -3.0, 900.0, 0.1, 0.2, 0.3]);
        let y = g.softmax_lastdim(x).unwrap();
        for row in g.value(y).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_zeroes_excluded_positions() {
        let mut g = Graph::new();
        let x = constant(&mut g, &[1, 3], vec![10.0, 1.0, 2.0]);
        let y = g.softmax_lastdim_masked(x, &[true, false, false]).unwrap();
        let row = g.value(y).data();
        assert_eq!(row[0], 0.0);
        assert!((row[1] + row[2] - 1.0).abs() < 1e-12);
        let err = g
            .softmax_lastdim_masked(x, &[true, true, true])
            .unwrap_err();
        assert!(err.to_string().contains("every position is excluded"));
    }

    #[test]
    fn concat_lastdim_concatenates_vectors() {
        let mut g = Graph::new();
        let a = constant(&mut g, &[768], vec![1.0; 768]);
        let b = constant(&mut g, &[768], vec![2.0; 768]);
        let z = g.concat_lastdim(a, b).unwrap();
        assert_eq!(g.value(z).shape(), &[1536]);
    }

    #[test]
    fn concat_with_empty_is_neutral() {
        let mut g = Graph::new();
        let a = constant(&mut g, &[3], vec![1.0, 2.0, 3.0]);
        let e = constant(&mut g, &[0], vec![]);
        let z = g.concat_lastdim(a, e).unwrap();
        assert_eq!(g.value(z).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_rejects_leading_dim_mismatch() {
        let mut g = Graph::new();
        let a = constant(&mut g, &[2, 3], vec![0.0; 6]);
        let b = constant(&mut g, &[3, 3], vec![0.0; 9]);
        assert!(matches!(
            g.concat_lastdim(a, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn gmu_gate_saturation_reproduces_text_path() {
        let mut g = Graph::new();
        let d = 4;
        let ft = constant(&mut g, &[d], vec![0.3, -0.5, 0.9, 0.1]);
        let fv = constant(&mut g, &[d], vec![-0.2, 0.8, 0.4, -0.7]);
        let wt = constant(&mut g, &[d, d], (0..16).map(|i| 0.1 * i as f64).collect());
        let bt = constant(&mut g, &[d], vec![0.05; 4]);
        let wv = constant(&mut g, &[d, d], (0..16).map(|i| -0.07 * i as f64).collect());
        let bv = constant(&mut g, &[d], vec![-0.02; 4]);
        let wz = constant(&mut g, &[2 * d, d], vec![0.0; 8 * d]);
        let bz = constant(&mut g, &[d], vec![20.0; d]);
        let params = GmuParams {
            w_text: wt,
            b_text: bt,
            w_vision: wv,
            b_vision: bv,
            w_gate: wz,
            b_gate: bz,
        };
        let (h, gate) = g.gmu(ft, fv, params).unwrap();
        let ht_pre = g.dense(ft, wt, bt).unwrap();
        let ht = g.tanh(ht_pre).unwrap();
        for (hv, tv) in g.value(h).data().iter().zip(g.value(ht).data()) {
            assert!((hv - tv).abs() < 1e-8);
        }
        for &z in g.value(gate).data() {
            assert!(z > 0.0 && z < 1.0);
        }
    }

    #[test]
    fn gmu_zero_gate_weights_blend_equally() {
        let mut g = Graph::new();
        let d = 3;
        let ft = constant(&mut g, &[d], vec![0.3, -0.5, 0.9]);
        let fv = constant(&mut g, &[d], vec![-0.2, 0.8, 0.4]);
        let wt = constant(&mut g, &[d, d], (0..9).map(|i| 0.1 * i as f64).collect());
        let bt = constant(&mut g, &[d], vec![0.0; 3]);
        let wv = constant(&mut g, &[d, d], (0..9).map(|i| 0.2 - 0.05 * i as f64).collect());
        let bv = constant(&mut g, &[d], vec![0.0; 3]);
        let wz = constant(&mut g, &[2 * d, d], vec![0.0; 6 * d]);
        let bz = constant(&mut g, &[d], vec![0.0; d]);
        let params = GmuParams {
            w_text: wt,
            b_text: bt,
            w_vision: wv,
            b_vision: bv,
            w_gate: wz,
            b_gate: bz,
        };
        let (h, gate) = g.gmu(ft, fv, params).unwrap();
        assert!(g.value(gate).data().iter().all(|&z| z == 0.5));
        let ht_pre = g.dense(ft, wt, bt).unwrap();
        let ht = g.tanh(ht_pre).unwrap();
        let hv_pre = g.dense(fv, wv, bv).unwrap();
        let hv = g.tanh(hv_pre).unwrap();
        for ((h, t), v) in g
            .value(h)
            .data()
            .iter()
            .zip(g.value(ht).data())
            .zip(g.value(hv).data())
        {
            assert!((h - (t + v) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_key_attention_returns_the_value_row() {
        let mut g = Graph::new();
        let q = constant(&mut g, &[3, 2], vec![5.0, -1.0, 0.0, 0.0, 2.0, 2.0]);
        let k = constant(&mut g, &[1, 2], vec![0.7, 0.7]);
        let v = constant(&mut g, &[1, 2], vec![4.25, -3.5]);
        let out = g.scaled_dot_attention(q, k, v, None).unwrap();
        assert_eq!(g.value(out).data(), &[4.25, -3.5, 4.25, -3.5, 4.25, -3.5]);
    }

    #[test]
    fn identical_keys_average_the_values() {
        let mut g = Graph::new();
        let q = constant(&mut g, &[1, 2], vec![3.0, -2.0]);
        let k = constant(&mut g, &[3, 2], vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let v = constant(&mut g, &[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = g.scaled_dot_attention(q, k, v, None).unwrap();
        let o = g.value(out).data();
        assert!((o[0] - 3.0).abs() < 1e-12);
        assert!((o[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn attention_rejects_empty_dims() {
        let mut g = Graph::new();
        let q = constant(&mut g, &[1, 0], vec![]);
        let k = constant(&mut g, &[0, 0], vec![]);
        let v = constant(&mut g, &[0, 2], vec![]);
        assert!(g.scaled_dot_attention(q, k, v, None).is_err());
    }

    #[test]
    fn attention_output_stays_in_value_hull() {
        let mut g = Graph::new();
        let q = constant(&mut g, &[4, 3], (0..12).map(|i| (i as f64).sin()).collect());
        let k = constant(&mut g, &[5, 3], (0..15).map(|i| (i as f64).cos()).collect());
        let v = constant(&mut g, &[5, 2], (0..10).map(|i| i as f64 - 4.0).collect());
        let out = g.scaled_dot_attention(q, k, v, None).unwrap();
        for col in 0..2 {
            let column: Vec<f64> = (0..5).map(|r| g.value(v).data()[r * 2 + col]).collect();
            let (lo, hi) = (
                column.iter().cloned().fold(f64::INFINITY, f64::min),
                column.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
            for r in 0..4 {
                let val = g.value(out).data()[r * 2 + col];
                assert!(val >= lo - 1e-12 && val <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn global_average_pool_cases() {
        let mut g = Graph::new();
        let single = constant(&mut g, &[1, 3], vec![1.0, 2.0, 3.0]);
        let pooled = g.global_average_pool(single).unwrap();
        assert_eq!(g.value(pooled).data(), &[1.0, 2.0, 3.0]);

        let two = constant(&mut g, &[2, 2], vec![1.0, 3.0, 3.0, 1.0]);
        let pooled = g.global_average_pool(two).unwrap();
        assert_eq!(g.value(pooled).data(), &[2.0, 2.0]);

        let empty = constant(&mut g, &[0, 2], vec![]);
        assert!(g.global_average_pool(empty).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let mut g = Graph::new();
        let logits = constant(&mut g, &[1, 2], vec![0.0, 0.0]);
        let loss = g.weighted_cross_entropy(logits, &[1], [1.0, 1.0]).unwrap();
        assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturates_to_zero_when_confident() {
        let mut g = Graph::new();
        let logits = constant(&mut g, &[1, 2], vec![-25.0, 25.0]);
        let loss = g.weighted_cross_entropy(logits, &[1], [1.0, 1.0]).unwrap();
        assert!(g.value(loss).item() < 1e-9);
    }

    #[test]
    fn cross_entropy_applies_class_weight() {
        let mut g = Graph::new();
        let logits = constant(&mut g, &[1, 2], vec![0.0, 0.0]);
        let loss = g.weighted_cross_entropy(logits, &[1], [1.0, 2.0]).unwrap();
        assert!((g.value(loss).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let mut g = Graph::new();
        let logits = constant(&mut g, &[1, 2], vec![0.0, 0.0]);
        assert!(matches!(
            g.weighted_cross_entropy(logits, &[2], [1.0, 1.0]),
            Err(TensorError::BadLabel(2))
        ));
    }

    #[test]
    fn non_finite_results_are_rejected() {
        let mut g = Graph::new();
        let big = constant(&mut g, &[1, 1], vec![1e308]);
        let big2 = constant(&mut g, &[1, 1], vec![10.0]);
        let err = g.matmul(big, big2).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "matmul" }));
    }

    #[test]
    fn backward_through_dense_matches_hand_gradient() {
        // y = x·W + b, loss = y[0]; dW = xᵀ, db = 1, dx = W column 0
        let mut store = ParamStore::new();
        store
            .register("w", Tensor::from_vec(&[2, 1], vec![3.0, -4.0]).unwrap())
            .unwrap();
        store.register("b", Tensor::vector(vec![0.25])).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[1, 2], vec![2.0, 5.0]).unwrap());
        let w = g.param(&store, "w").unwrap();
        let b = g.param(&store, "b").unwrap();
        let y = g.dense(x, w, b).unwrap();
        let loss = g.reshape(y, &[]).unwrap();
        g.backward(loss).unwrap();
        g.accumulate_grads(&mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad.data(), &[2.0, 5.0]);
        assert_eq!(store.get("b").unwrap().grad.data(), &[1.0]);
    }

    #[test]
    fn param_leaves_are_deduplicated() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, "w").unwrap();
        let b = g.param(&store, "w").unwrap();
        assert_eq!(a, b);
    }

    /// Direct nested-loop convolution, the oracle for the im2col route.
    fn conv_naive(
        x: &[f64],
        w: &[f64],
        b: &[f64],
        (c, h, wd): (usize, usize, usize),
        (o, kh, kw): (usize, usize, usize),
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                    acc += w[((oc * c + ic) * kh + ky) * kw + kx]
                                        * x[(ic * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_direct_loop_oracle() {
        for (stride, pad) in [(1usize, 0usize), (1, 1), (2, 1), (4, 1), (2, 0)] {
            let (c, h, wd) = (3, 11, 11);
            let (o, kh, kw) = (5, 3, 3);
            let xv: Vec<f64> = (0..c * h * wd).map(|i| ((i * 7 % 23) as f64 - 11.0) / 7.0).collect();
            let wv: Vec<f64> = (0..o * c * kh * kw).map(|i| ((i * 5 % 17) as f64 - 8.0) / 9.0).collect();
            let bv: Vec<f64> = (0..o).map(|i| i as f64 / 10.0).collect();
            let expected = conv_naive(&xv, &wv, &bv, (c, h, wd), (o, kh, kw), stride, pad);

            let mut g = Graph::new();
            let x = constant(&mut g, &[c, h, wd], xv);
            let w = constant(&mut g, &[o, c, kh, kw], wv);
            let b = constant(&mut g, &[o], bv);
            let y = g.conv2d(x, w, b, stride, pad).unwrap();
            assert_eq!(g.value(y).len(), expected.len(), "stride {stride} pad {pad}");
            for (got, want) in g.value(y).data().iter().zip(&expected) {
                assert!((got - want).abs() < 1e-12, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn avg_pool_averages_windows() {
        let mut g = Graph::new();
        let x = constant(&mut g, &[1, 4, 4], (1..=16).map(f64::from).collect());
        let y = g.avg_pool2d(x, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn embed_bag_sums_selected_rows() {
        let mut g = Graph::new();
        let table = constant(&mut g, &[4, 2], vec![1.0, 2.0, 10.0, 20.0, 100.0, 200.0, 0.5, 0.5]);
        let out = g
            .embed_bag(table, vec![vec![0, 2], vec![1], vec![]])
            .unwrap();
        assert_eq!(g.value(out).shape(), &[3, 2]);
        assert_eq!(
            g.value(out).data(),
            &[101.0, 202.0, 10.0, 20.0, 0.0, 0.0]
        );
    }
}
