//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable row-major buffers. Differentiable operations are
//! methods on [`Tape`]: an op records a node (with a backward closure) when
//! any input is recorded, so constant-only computation carries no tape
//! overhead. [`Tape::backward`] walks the nodes in exact reverse recording
//! order, accumulating gradients per node and into the [`ParamCell`]s bound
//! as leaves.

mod gradcheck;
mod nn;
mod param;

pub use gradcheck::{check_coordinates, CoordCheck};
pub use nn::{
    attention_reference, feed_forward, gcn_forward, multi_head_attention, normalize_adjacency,
    positional_encoding, transformer_block, AttentionParams, AttnTrace, FeedForwardParams,
    GcnParams, LayerNormParams, TransformerBlockParams, LN_EPS,
};
pub use param::{AdamConfig, Init, ParamCell, ParamStore};

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

pub type TapeId = usize;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("backward target is not a scalar")]
    NotScalar,
    #[error("tensor is not recorded on this tape")]
    NotRecorded,
    #[error("positional encoding dimension must be even, got {0}")]
    OddDim(usize),
    #[error("no gradients accumulated; run backward before the optimizer step")]
    MissingGrad,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn shape_mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape.to_vec(),
        right: b.shape.to_vec(),
    }
}

/// An immutable value, optionally recorded on a tape.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<TapeId>,
}

impl Tensor {
    /// Constant tensor (never recorded).
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must match shape"
        );
        Self {
            shape,
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::from_vec(shape, vec![0.0; len])
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn node(&self) -> Option<TapeId> {
        self.node
    }

    /// Value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() requires a scalar tensor");
        self.data[0]
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(TensorError::BadShape {
                op,
                expected: "a 2-d tensor",
                got: self.shape.to_vec(),
            }),
        }
    }

    fn dims1(&self, op: &'static str) -> Result<usize, TensorError> {
        match self.shape.as_slice() {
            [n] => Ok(*n),
            _ => Err(TensorError::BadShape {
                op,
                expected: "a 1-d tensor",
                got: self.shape.to_vec(),
            }),
        }
    }
}

type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct TapeNode {
    len: usize,
    backward: BackwardFn,
}

/// Gradient accumulator handed to backward closures. Parents always precede
/// the node being processed, so the sink only exposes lower tape ids.
pub struct GradSink<'a> {
    bufs: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    /// Gradient buffer of `id`, zero-initialized on first touch.
    pub fn accum(&mut self, id: TapeId, len: usize) -> &mut [f64] {
        self.bufs[id]
            .get_or_insert_with(|| vec![0.0; len])
            .as_mut_slice()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a recorded tensor, if it was reached from the loss.
    pub fn of(&self, t: &Tensor) -> Option<&[f64]> {
        t.node.and_then(|id| self.bufs.get(id)?.as_deref())
    }
}

/// Records operations for reverse-mode differentiation. Confined to one
/// thread together with its tensors.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<TapeNode>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push(&self, len: usize, backward: BackwardFn) -> TapeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(TapeNode { len, backward });
        nodes.len() - 1
    }

    /// Record a plain differentiable leaf (used by tests and gradient
    /// checks; parameters go through [`Tape::param`]).
    pub fn var(&self, t: &Tensor) -> Tensor {
        let id = self.push(t.len(), Box::new(|_, _| {}));
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            node: Some(id),
        }
    }

    /// Bind a parameter as a recorded leaf; backward adds the leaf gradient
    /// into the parameter's grad buffer.
    pub fn param(&self, cell: &Rc<ParamCell>) -> Tensor {
        let snapshot = cell.value_snapshot();
        let owner = Rc::clone(cell);
        let id = self.push(
            snapshot.len(),
            Box::new(move |g, _| owner.accumulate_grad(g)),
        );
        Tensor {
            shape: cell.shape().to_vec(),
            data: Rc::new(snapshot),
            node: Some(id),
        }
    }

    /// Bind a parameter as a constant (inference path).
    pub fn constant_param(&self, cell: &Rc<ParamCell>) -> Tensor {
        Tensor {
            shape: cell.shape().to_vec(),
            data: Rc::new(cell.value_snapshot()),
            node: None,
        }
    }

    /// Reverse pass from a recorded scalar, seeding with `seed` (pass 1.0
    /// for plain gradients, `1/batch` for mean aggregation). Repeated calls
    /// accumulate into parameter gradients until they are zeroed.
    pub fn backward_seeded(&self, loss: &Tensor, seed: f64) -> Result<Gradients, TensorError> {
        let loss_id = loss.node.ok_or(TensorError::NotRecorded)?;
        if loss.len() != 1 {
            return Err(TensorError::NotScalar);
        }
        let nodes = self.nodes.borrow();
        let mut bufs: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        bufs[loss_id] = Some(vec![seed]);
        for id in (0..=loss_id).rev() {
            let (lower, upper) = bufs.split_at_mut(id);
            if let Some(g) = upper[0].as_deref() {
                debug_assert_eq!(g.len(), nodes[id].len);
                let mut sink = GradSink { bufs: lower };
                (nodes[id].backward)(g, &mut sink);
            }
        }
        Ok(Gradients { bufs })
    }

    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, TensorError> {
        self.backward_seeded(loss, 1.0)
    }

    fn unary(
        &self,
        input: &Tensor,
        shape: Vec<usize>,
        data: Vec<f64>,
        backward: impl Fn(&[f64], &mut [f64]) + 'static,
    ) -> Tensor {
        let node = input.node.map(|pid| {
            let len = input.len();
            self.push(
                data.len(),
                Box::new(move |g, sink| backward(g, sink.accum(pid, len))),
            )
        });
        Tensor {
            shape,
            data: Rc::new(data),
            node,
        }
    }

    /// Matrix product `a[m,p] . b[p,n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let (m, p) = a.dims2("matmul")?;
        let (p2, n) = b.dims2("matmul")?;
        if p != p2 {
            return Err(shape_mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(&a.data, &b.data, &mut out, m, p, n);
        let node = if a.node.is_some() || b.node.is_some() {
            let (ad, bd) = (a.data.clone(), b.data.clone());
            let (an, bn) = (a.node, b.node);
            Some(self.push(
                m * n,
                Box::new(move |g, sink| {
                    if let Some(an) = an {
                        gemm_nt(g, &bd, sink.accum(an, m * p), m, n, p);
                    }
                    if let Some(bn) = bn {
                        gemm_tn(&ad, g, sink.accum(bn, p * n), m, p, n);
                    }
                }),
            ))
        } else {
            None
        };
        Ok(Tensor {
            shape: vec![m, n],
            data: Rc::new(out),
            node,
        })
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if a.shape != b.shape {
            return Err(shape_mismatch("add", a, b));
        }
        let data: Vec<f64> = a.data.iter().zip(b.data.iter()).map(|(x, y)| x + y).collect();
        let node = if a.node.is_some() || b.node.is_some() {
            let (an, bn) = (a.node, b.node);
            let len = a.len();
            Some(self.push(
                len,
                Box::new(move |g, sink| {
                    for pid in [an, bn].into_iter().flatten() {
                        let buf = sink.accum(pid, len);
                        for (o, gi) in buf.iter_mut().zip(g) {
                            *o += gi;
                        }
                    }
                }),
            ))
        } else {
            None
        };
        Ok(Tensor {
            shape: a.shape.clone(),
            data: Rc::new(data),
            node,
        })
    }

    /// Broadcast a `[n]` bias over the rows of `x[m,n]`.
    pub fn add_row_bias(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
        let (m, n) = x.dims2("add_row_bias")?;
        let bn = bias.dims1("add_row_bias")?;
        if bn != n {
            return Err(shape_mismatch("add_row_bias", x, bias));
        }
        let mut data = x.data.to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bias.data.iter()) {
                *v += b;
            }
        }
        let node = if x.node.is_some() || bias.node.is_some() {
            let (xn, biasn) = (x.node, bias.node);
            Some(self.push(
                m * n,
                Box::new(move |g, sink| {
                    if let Some(xn) = xn {
                        let gx = sink.accum(xn, m * n);
                        for (o, gi) in gx.iter_mut().zip(g) {
                            *o += gi;
                        }
                    }
                    if let Some(bn_id) = biasn {
                        let gb = sink.accum(bn_id, n);
                        for row in g.chunks(n) {
                            for (o, gi) in gb.iter_mut().zip(row) {
                                *o += gi;
                            }
                        }
                    }
                }),
            ))
        } else {
            None
        };
        Ok(Tensor {
            shape: vec![m, n],
            data: Rc::new(data),
            node,
        })
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, x: &Tensor, c: f64) -> Tensor {
        let data = x.data.iter().map(|v| v * c).collect();
        self.unary(x, x.shape.clone(), data, move |g, gx| {
            for (o, gi) in gx.iter_mut().zip(g) {
                *o += c * gi;
            }
        })
    }

    /// Concatenate 2-d tensors along columns.
    pub fn concat_cols(&self, parts: &[Tensor]) -> Result<Tensor, TensorError> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let (m, _) = parts[0].dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_cols")?;
            if pm != m {
                return Err(shape_mismatch("concat_cols", &parts[0], p));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            for i in 0..m {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&p.data[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let node = if parts.iter().any(|p| p.node.is_some()) {
            let ids: Vec<Option<TapeId>> = parts.iter().map(|p| p.node).collect();
            let widths = widths.clone();
            Some(self.push(
                m * total,
                Box::new(move |g, sink| {
                    let mut offset = 0;
                    for (pid, w) in ids.iter().zip(&widths) {
                        if let Some(pid) = pid {
                            let gp = sink.accum(*pid, m * w);
                            for i in 0..m {
                                for j in 0..*w {
                                    gp[i * w + j] += g[i * total + offset + j];
                                }
                            }
                        }
                        offset += w;
                    }
                }),
            ))
        } else {
            None
        };
        Ok(Tensor {
            shape: vec![m, total],
            data: Rc::new(data),
            node,
        })
    }

    /// Stack 2-d tensors along rows.
    pub fn concat_rows(&self, parts: &[Tensor]) -> Result<Tensor, TensorError> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let (_, n) = parts[0].dims2("concat_rows")?;
        let mut heights = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_rows")?;
            if pn != n {
                return Err(shape_mismatch("concat_rows", &parts[0], p));
            }
            heights.push(pm);
        }
        let total: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(total * n);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        let node = if parts.iter().any(|p| p.node.is_some()) {
            let ids: Vec<Option<TapeId>> = parts.iter().map(|p| p.node).collect();
            let heights = heights.clone();
            Some(self.push(
                total * n,
                Box::new(move |g, sink| {
                    let mut offset = 0;
                    for (pid, h) in ids.iter().zip(&heights) {
                        let rows = h * n;
                        if let Some(pid) = pid {
                            let gp = sink.accum(*pid, rows);
                            for (o, gi) in gp.iter_mut().zip(&g[offset..offset + rows]) {
                                *o += gi;
                            }
                        }
                        offset += rows;
                    }
                }),
            ))
        } else {
            None
        };
        Ok(Tensor {
            shape: vec![total, n],
            data: Rc::new(data),
            node,
        })
    }

    /// Reinterpret the buffer under a new shape (zero copy; gradients flow
    /// through unchanged).
    pub fn reshape(&self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        if shape.iter().product::<usize>() != x.len() {
            return Err(TensorError::BadShape {
                op: "reshape",
                expected: "a shape with matching element count",
                got: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: x.data.clone(),
            node: x.node,
        })
    }

    /// Flatten to a single row.
    pub fn flatten_row(&self, x: &Tensor) -> Tensor {
        self.reshape(x, vec![1, x.len()]).expect("same element count")
    }

    /// Column means over rows: `[m,n] -> [1,n]`.
    pub fn mean_rows(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (m, n) = x.dims2("mean_rows")?;
        let mut data = vec![0.0; n];
        for row in x.data.chunks(n) {
            for (o, v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / m as f64;
        for v in &mut data {
            *v *= inv;
        }
        Ok(self.unary(x, vec![1, n], data, move |g, gx| {
            for row in gx.chunks_mut(n) {
                for (o, gi) in row.iter_mut().zip(g) {
                    *o += gi * inv;
                }
            }
        }))
    }

    /// Sum of all entries.
    pub fn sum_all(&self, x: &Tensor) -> Tensor {
        let total: f64 = x.data.iter().sum();
        self.unary(x, vec![1], vec![total], |g, gx| {
            for o in gx.iter_mut() {
                *o += g[0];
            }
        })
    }

    /// Gather rows of `table[v,h]` by index; used both for embedding lookup
    /// and for readout of selected rows.
    pub fn gather_rows(&self, table: &Tensor, ids: &[usize]) -> Result<Tensor, TensorError> {
        let (v, h) = table.dims2("gather_rows")?;
        for &i in ids {
            assert!(i < v, "gather index {i} out of range {v}");
        }
        let mut data = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            data.extend_from_slice(&table.data[i * h..(i + 1) * h]);
        }
        let node = table.node.map(|pid| {
            let ids = ids.to_vec();
            self.push(
                ids.len() * h,
                Box::new(move |g, sink| {
                    let gt = sink.accum(pid, v * h);
                    for (slot, &i) in ids.iter().enumerate() {
                        for j in 0..h {
                            gt[i * h + j] += g[slot * h + j];
                        }
                    }
                }),
            )
        });
        Ok(Tensor {
            shape: vec![ids.len(), h],
            data: Rc::new(data),
            node,
        })
    }

    /// Matrix transpose (copying).
    pub fn transpose(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (m, n) = x.dims2("transpose")?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = x.data[i * n + j];
            }
        }
        Ok(self.unary(x, vec![n, m], data, move |g, gx| {
            for i in 0..m {
                for j in 0..n {
                    gx[i * n + j] += g[j * m + i];
                }
            }
        }))
    }

    pub fn relu(&self, x: &Tensor) -> Tensor {
        let data = x.data.iter().map(|v| v.max(0.0)).collect();
        let xd = x.data.clone();
        self.unary(x, x.shape.clone(), data, move |g, gx| {
            for ((o, gi), v) in gx.iter_mut().zip(g).zip(xd.iter()) {
                if *v > 0.0 {
                    *o += gi;
                }
            }
        })
    }

    pub fn sigmoid(&self, x: &Tensor) -> Tensor {
        let data: Vec<f64> = x.data.iter().map(|v| sigmoid_scalar(*v)).collect();
        let out = Rc::new(data);
        let captured = out.clone();
        let node = x.node.map(|pid| {
            let len = x.len();
            self.push(
                len,
                Box::new(move |g, sink| {
                    let gx = sink.accum(pid, len);
                    for ((o, gi), y) in gx.iter_mut().zip(g).zip(captured.iter()) {
                        *o += gi * y * (1.0 - y);
                    }
                }),
            )
        });
        Tensor {
            shape: x.shape.clone(),
            data: out,
            node,
        }
    }

    /// Row-wise softmax over the last axis of a 2-d tensor.
    pub fn softmax_rows(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let (m, n) = x.dims2("softmax_rows")?;
        let mut data = vec![0.0; m * n];
        for (out_row, row) in data.chunks_mut(n).zip(x.data.chunks(n)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, v) in out_row.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            for o in out_row.iter_mut() {
                *o /= total;
            }
        }
        let out = Rc::new(data);
        let captured = out.clone();
        let node = x.node.map(|pid| {
            self.push(
                m * n,
                Box::new(move |g, sink| {
                    let gx = sink.accum(pid, m * n);
                    for i in 0..m {
                        let y = &captured[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = y.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        for j in 0..n {
                            gx[i * n + j] += y[j] * (gr[j] - dot);
                        }
                    }
                }),
            )
        });
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
            node,
        })
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(
        &self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        let (m, n) = x.dims2("layer_norm")?;
        if gain.dims1("layer_norm")? != n || bias.dims1("layer_norm")? != n {
            return Err(shape_mismatch("layer_norm", x, gain));
        }
        let mut data = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &x.data[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                data[i * n + j] = h * gain.data[j] + bias.data[j];
            }
        }
        let node = if x.node.is_some() || gain.node.is_some() || bias.node.is_some() {
            let (xn, gn, bn) = (x.node, gain.node, bias.node);
            let gain_d = gain.data.clone();
            let xhat = Rc::new(xhat);
            let inv_std = Rc::new(inv_std);
            Some(self.push(
                m * n,
                Box::new(move |g, sink| {
                    if let Some(gn) = gn {
                        let gg = sink.accum(gn, n);
                        for i in 0..m {
                            for j in 0..n {
                                gg[j] += g[i * n + j] * xhat[i * n + j];
                            }
                        }
                    }
                    if let Some(bn) = bn {
                        let gb = sink.accum(bn, n);
                        for i in 0..m {
                            for j in 0..n {
                                gb[j] += g[i * n + j];
                            }
                        }
                    }
                    if let Some(xn) = xn {
                        let gx = sink.accum(xn, m * n);
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            let hr = &xhat[i * n..(i + 1) * n];
                            let mut mean_gg = 0.0;
                            let mut mean_ggx = 0.0;
                            for j in 0..n {
                                let scaled = gr[j] * gain_d[j];
                                mean_gg += scaled;
                                mean_ggx += scaled * hr[j];
                            }
                            mean_gg /= n as f64;
                            mean_ggx /= n as f64;
                            for j in 0..n {
                                let scaled = gr[j] * gain_d[j];
                                gx[i * n + j] +=
                                    inv_std[i] * (scaled - mean_gg - hr[j] * mean_ggx);
                            }
                        }
                    }
                }),
            ))
        } else {
            None
        };
        Ok(Tensor {
            shape: vec![m, n],
            data: Rc::new(data),
            node,
        })
    }

    /// Inverted dropout with an explicit seeded RNG; identity when `rng` is
    /// `None` (evaluation) or the rate is zero.
    pub fn dropout(
        &self,
        x: &Tensor,
        rate: f64,
        rng: Option<&RefCell<ChaCha12Rng>>,
    ) -> Tensor {
        let rng = match rng {
            Some(r) if rate > 0.0 => r,
            _ => return x.clone(),
        };
        let keep = 1.0 - rate;
        let mask: Vec<f64> = {
            let mut rng = rng.borrow_mut();
            x.data
                .iter()
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
                .collect()
        };
        let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.unary(x, x.shape.clone(), data, move |g, gx| {
            for ((o, gi), m) in gx.iter_mut().zip(g).zip(&mask) {
                *o += gi * m;
            }
        })
    }

    /// Clamp into `[lo, hi]`; gradient passes only through the interior.
    pub fn clamp(&self, x: &Tensor, lo: f64, hi: f64) -> Tensor {
        let data = x.data.iter().map(|v| v.clamp(lo, hi)).collect();
        let xd = x.data.clone();
        self.unary(x, x.shape.clone(), data, move |g, gx| {
            for ((o, gi), v) in gx.iter_mut().zip(g).zip(xd.iter()) {
                if *v > lo && *v < hi {
                    *o += gi;
                }
            }
        })
    }

    /// Negative log-likelihood of independent Bernoulli targets given
    /// probabilities: `-sum(t*ln y + (1-t)*ln(1-y))`, probabilities clamped
    /// at `eps` inside the logs.
    pub fn bce_nll(&self, probs: &Tensor, targets: &[f64], eps: f64) -> Result<Tensor, TensorError> {
        if probs.len() != targets.len() {
            return Err(TensorError::BadShape {
                op: "bce_nll",
                expected: "targets matching the probability count",
                got: probs.shape.to_vec(),
            });
        }
        let mut loss = 0.0;
        for (y, t) in probs.data.iter().zip(targets) {
            let yc = y.clamp(eps, 1.0 - eps);
            loss -= t * yc.ln() + (1.0 - t) * (1.0 - yc).ln();
        }
        let yd = probs.data.clone();
        let td = targets.to_vec();
        Ok(self.unary(probs, vec![1], vec![loss], move |g, gy| {
            for ((o, y), t) in gy.iter_mut().zip(yd.iter()).zip(&td) {
                if *y > eps && *y < 1.0 - eps {
                    *o += g[0] * (-(t / y) + (1.0 - t) / (1.0 - y));
                }
            }
        }))
    }
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `out[m,n] += a[m,p] . b[p,n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for k in 0..p {
            let aik = a[i * p + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * n..(k + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// `out[m,p] += a[m,n] . b^T` where `b` is `[p,n]`
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, p: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * p..(i + 1) * p];
        for k in 0..p {
            let b_row = &b[k * n..(k + 1) * n];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out_row[k] += dot;
        }
    }
}

/// `out[p,n] += a^T . g` where `a` is `[m,p]` and `g` is `[m,n]`
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, p: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for k in 0..p {
            let aik = a[i * p + k];
            if aik == 0.0 {
                continue;
            }
            let out_row = &mut out[k * n..(k + 1) * n];
            for (o, gv) in out_row.iter_mut().zip(g_row) {
                *o += aik * gv;
            }
        }
    }
}
