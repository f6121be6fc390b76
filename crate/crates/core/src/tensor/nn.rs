//! Attention, transformer, and graph-convolution building blocks.
//!
//! Every block takes already-bound parameter tensors, so the same code runs
//! recorded (training) or constant (inference) depending on how the caller
//! bound them.

use std::cell::RefCell;

use rand_chacha::ChaCha12Rng;

use super::{gemm, Tape, Tensor, TensorError};

/// Layer-norm epsilon used across the model.
pub const LN_EPS: f64 = 1e-5;

/// Per-head projection matrices (`[h,h]` each) plus the `[d*h,h]` output
/// projection.
pub struct AttentionParams {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
}

impl AttentionParams {
    pub fn heads(&self) -> usize {
        self.wq.len()
    }
}

/// Head-averaged post-softmax attention weights, one row per query.
#[derive(Debug, Clone)]
pub struct AttnTrace {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl AttnTrace {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }
}

/// Multi-head attention with full-width heads: each head projects with its
/// own `[h,h]` matrices, scores are scaled by `1/divisor`, and the
/// concatenated heads go through the output projection.
pub fn multi_head_attention(
    tape: &Tape,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    params: &AttentionParams,
    divisor: f64,
) -> Result<(Tensor, AttnTrace), TensorError> {
    let heads = params.heads();
    assert!(heads >= 1, "attention needs at least one head");
    let s_q = q.shape()[0];
    let s_k = k.shape()[0];
    let mut head_outputs = Vec::with_capacity(heads);
    let mut trace = vec![0.0; s_q * s_k];
    for i in 0..heads {
        let qi = tape.matmul(q, &params.wq[i])?;
        let ki = tape.matmul(k, &params.wk[i])?;
        let vi = tape.matmul(v, &params.wv[i])?;
        let scores = tape.scale(&tape.matmul(&qi, &tape.transpose(&ki)?)?, 1.0 / divisor);
        let attn = tape.softmax_rows(&scores)?;
        for (acc, w) in trace.iter_mut().zip(attn.data()) {
            *acc += w / heads as f64;
        }
        head_outputs.push(tape.matmul(&attn, &vi)?);
    }
    let concat = tape.concat_cols(&head_outputs)?;
    let out = tape.matmul(&concat, &params.wo)?;
    Ok((
        out,
        AttnTrace {
            rows: s_q,
            cols: s_k,
            weights: trace,
        },
    ))
}

/// Learnable gain and bias of a layer norm.
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

/// Two-layer feed-forward network with ReLU in between.
pub struct FeedForwardParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

pub fn feed_forward(
    tape: &Tape,
    x: &Tensor,
    p: &FeedForwardParams,
) -> Result<Tensor, TensorError> {
    let hidden = tape.relu(&tape.add_row_bias(&tape.matmul(x, &p.w1)?, &p.b1)?);
    tape.add_row_bias(&tape.matmul(&hidden, &p.w2)?, &p.b2)
}

/// One encoder block: self-attention and feed-forward sublayers, each
/// followed by residual add and layer norm. Dropout is applied to each
/// sublayer output before the residual.
pub struct TransformerBlockParams {
    pub attention: AttentionParams,
    pub ln1: LayerNormParams,
    pub ff: FeedForwardParams,
    pub ln2: LayerNormParams,
}

pub fn transformer_block(
    tape: &Tape,
    x: &Tensor,
    p: &TransformerBlockParams,
    divisor: f64,
    dropout: f64,
    rng: Option<&RefCell<ChaCha12Rng>>,
) -> Result<(Tensor, AttnTrace), TensorError> {
    let (attn_out, trace) = multi_head_attention(tape, x, x, x, &p.attention, divisor)?;
    let attn_out = tape.dropout(&attn_out, dropout, rng);
    let z = tape.layer_norm(&tape.add(x, &attn_out)?, &p.ln1.gain, &p.ln1.bias, LN_EPS)?;
    let ff_out = tape.dropout(&feed_forward(tape, &z, &p.ff)?, dropout, rng);
    let out = tape.layer_norm(&tape.add(&z, &ff_out)?, &p.ln2.gain, &p.ln2.bias, LN_EPS)?;
    Ok((out, trace))
}

/// Per-layer weight matrices of a GCN stack.
pub struct GcnParams {
    pub layers: Vec<Tensor>,
}

/// Symmetric normalization of a weighted adjacency with self-loops:
/// `D^{-1/2} (A + I) D^{-1/2}` where `D` holds the row sums of `A + I`.
pub fn normalize_adjacency(adjacency: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(adjacency.len(), n * n, "adjacency must be square");
    let mut with_loops = adjacency.to_vec();
    for i in 0..n {
        with_loops[i * n + i] += 1.0;
    }
    let mut inv_sqrt_degree = vec![0.0; n];
    for i in 0..n {
        let degree: f64 = with_loops[i * n..(i + 1) * n].iter().sum();
        inv_sqrt_degree[i] = 1.0 / degree.sqrt();
    }
    for i in 0..n {
        for j in 0..n {
            with_loops[i * n + j] *= inv_sqrt_degree[i] * inv_sqrt_degree[j];
        }
    }
    with_loops
}

/// Stacked graph convolutions `H <- ReLU(W_norm H W_l)` over a fixed
/// weighted adjacency (entries must be non-negative).
pub fn gcn_forward(
    tape: &Tape,
    adjacency: &[f64],
    h0: &Tensor,
    params: &GcnParams,
) -> Result<Tensor, TensorError> {
    let n = h0.shape()[0];
    debug_assert!(adjacency.iter().all(|w| *w >= 0.0));
    let norm = Tensor::from_vec(vec![n, n], normalize_adjacency(adjacency, n));
    let mut h = h0.clone();
    for w in &params.layers {
        h = tape.relu(&tape.matmul(&tape.matmul(&norm, &h)?, w)?);
    }
    Ok(h)
}

/// Sinusoidal position table: `PE[pos, 2i] = sin(pos / 10000^(2i/h))` and
/// the cosine in the odd column.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Tensor, TensorError> {
    if dim % 2 != 0 {
        return Err(TensorError::OddDim(dim));
    }
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            let angle = pos as f64 * rate;
            data[pos * dim + 2 * i] = angle.sin();
            data[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::from_vec(vec![len, dim], data))
}

/// Reference multi-head attention computed with plain loops; kept for
/// oracle comparisons in tests and gradient checks.
pub fn attention_reference(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    s_q: usize,
    s_k: usize,
    h: usize,
    params: &AttentionParams,
    divisor: f64,
) -> Vec<f64> {
    let heads = params.heads();
    let mut concat = vec![0.0; s_q * heads * h];
    for head in 0..heads {
        let mut qi = vec![0.0; s_q * h];
        let mut ki = vec![0.0; s_k * h];
        let mut vi = vec![0.0; s_k * h];
        gemm(q, params.wq[head].data(), &mut qi, s_q, h, h);
        gemm(k, params.wk[head].data(), &mut ki, s_k, h, h);
        gemm(v, params.wv[head].data(), &mut vi, s_k, h, h);
        for i in 0..s_q {
            let mut scores = vec![0.0; s_k];
            for (j, score) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for d in 0..h {
                    dot += qi[i * h + d] * ki[j * h + d];
                }
                *score = dot / divisor;
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for s in scores.iter_mut() {
                *s /= total;
            }
            for d in 0..h {
                let mut acc = 0.0;
                for (j, s) in scores.iter().enumerate() {
                    acc += s * vi[j * h + d];
                }
                concat[i * heads * h + head * h + d] = acc;
            }
        }
    }
    let mut out = vec![0.0; s_q * h];
    gemm(&concat, params.wo.data(), &mut out, s_q, heads * h, h);
    out
}
