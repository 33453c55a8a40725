//! Attention map construction: Q/K/V projection, the text-only
//! self-attention row used to pick key text tokens, and the renormalized
//! sub-attention between key text queries and the assembled
//! visual + key-text key set.
//!
//! All public maps are head-averaged post-softmax, so one token-level
//! importance vector can drive whole-token eviction per layer. Logit
//! scaling uses the full hidden dimension by default; per-head scaling
//! is available behind a flag.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::linalg::{matmul, softmax_rows, CausalColumnMask, Matrix};

/// Counts and ordering of the prompt segments: system, then visual, then
/// text. `hidden_dim` must divide evenly into `n_heads`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    pub n_system: usize,
    pub n_visual: usize,
    pub n_text: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
}

impl TokenLayout {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.n_visual == 0 {
            return Err(CoreError::Config("n_visual must be >= 1"));
        }
        if self.n_text == 0 {
            return Err(CoreError::Config("n_text must be >= 1"));
        }
        if self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(CoreError::Config("hidden_dim must divide by n_heads"));
        }
        if self.n_layers == 0 {
            return Err(CoreError::Config("n_layers must be >= 1"));
        }
        Ok(())
    }

    /// Total prompt length N.
    pub fn total(&self) -> usize {
        self.n_system + self.n_visual + self.n_text
    }

    /// Sequence index of the first visual token.
    pub fn visual_start(&self) -> usize {
        self.n_system
    }

    /// Sequence index of the first text token.
    pub fn text_start(&self) -> usize {
        self.n_system + self.n_visual
    }
}

/// Per-layer scoring inputs: the last text self-attention row and the
/// elite-window sub-attention, both head-averaged.
#[derive(Debug, Clone)]
pub struct AttentionSnapshot {
    pub layer: usize,
    pub a_tt_last_row: Vec<f64>,
    pub a_vtk: Matrix,
    pub key_text_indices: Vec<usize>,
}

impl AttentionSnapshot {
    /// Checks the probability-row and index-set invariants.
    pub fn validate(&self, layout: &TokenLayout) -> Result<(), CoreError> {
        let sum: f64 = self.a_tt_last_row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::Config("a_tt_last_row must sum to 1"));
        }
        for r in 0..self.a_vtk.rows() {
            let s: f64 = self.a_vtk.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(CoreError::Config("a_vtk rows must sum to 1"));
            }
        }
        if self.key_text_indices.is_empty() {
            return Err(CoreError::EmptyWindow);
        }
        if !self.key_text_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(CoreError::Config(
                "key_text_indices must be strictly increasing",
            ));
        }
        if *self.key_text_indices.last().unwrap() >= layout.n_text {
            return Err(CoreError::Config("key_text_indices out of range"));
        }
        Ok(())
    }
}

/// Applies the Q/K/V projections to the hidden states.
pub fn project_qkv(
    hidden: &Matrix,
    w_q: &Matrix,
    w_k: &Matrix,
    w_v: &Matrix,
) -> Result<(Matrix, Matrix, Matrix), CoreError> {
    let d = hidden.cols();
    for w in [w_q, w_k, w_v] {
        if w.rows() != d || w.cols() != d {
            return Err(CoreError::Shape {
                expected: (d, d),
                got: (w.rows(), w.cols()),
            });
        }
    }
    Ok((
        matmul(hidden, w_q)?,
        matmul(hidden, w_k)?,
        matmul(hidden, w_v)?,
    ))
}

fn logit_scale(hidden_dim: usize, n_heads: usize, per_head_scale: bool) -> f64 {
    let d = if per_head_scale {
        hidden_dim / n_heads
    } else {
        hidden_dim
    };
    1.0 / libm::sqrt(d as f64)
}

/// Per-head softmax attention between query and key row sets, averaged
/// across heads after the softmax. Queries/keys carry full hidden-dim rows;
/// heads are contiguous column slices.
pub fn head_averaged_attention(
    queries: &Matrix,
    keys: &Matrix,
    n_heads: usize,
    per_head_scale: bool,
    mask: Option<&CausalColumnMask>,
) -> Result<Matrix, CoreError> {
    let d = queries.cols();
    if keys.cols() != d {
        return Err(CoreError::Shape {
            expected: (keys.rows(), d),
            got: (keys.rows(), keys.cols()),
        });
    }
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(CoreError::Config("hidden_dim must divide by n_heads"));
    }
    let head_dim = d / n_heads;
    let scale = logit_scale(d, n_heads, per_head_scale);
    let mut avg = Matrix::zeros(queries.rows(), keys.rows());
    for h in 0..n_heads {
        let q_h = queries.slice_cols(h * head_dim, head_dim);
        let k_h = keys.slice_cols(h * head_dim, head_dim);
        let mut logits = Matrix::zeros(q_h.rows(), k_h.rows());
        for i in 0..q_h.rows() {
            for j in 0..k_h.rows() {
                let dot: f64 = q_h
                    .row(i)
                    .iter()
                    .zip(k_h.row(j).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                logits.set(i, j, dot * scale);
            }
        }
        let probs = softmax_rows(&logits, mask)?;
        for i in 0..avg.rows() {
            for j in 0..avg.cols() {
                avg.set(i, j, avg.get(i, j) + probs.get(i, j) / n_heads as f64);
            }
        }
    }
    Ok(avg)
}

/// Head-averaged last row of the causal text self-attention map. The last
/// text token sees every text token, so no entry of this row is masked.
pub fn text_self_attention_last_row(
    q_t: &Matrix,
    k_t: &Matrix,
    layout: &TokenLayout,
) -> Result<Vec<f64>, CoreError> {
    if layout.n_text == 0 || q_t.rows() == 0 {
        return Err(CoreError::EmptyText);
    }
    if q_t.rows() != layout.n_text || k_t.rows() != layout.n_text {
        return Err(CoreError::Shape {
            expected: (layout.n_text, layout.hidden_dim),
            got: (q_t.rows(), q_t.cols()),
        });
    }
    let last = q_t.slice_rows(layout.n_text - 1, 1);
    let row = head_averaged_attention(&last, k_t, layout.n_heads, false, None)?;
    Ok(row.row(0).to_vec())
}

/// Renormalized sub-attention between the key-text queries and the
/// assembled `[visual | key-text]` key set. Causality among key-text
/// columns follows the original sequence positions; visual columns are
/// visible to every key-text query.
pub fn elite_window_attention(
    q_t: &Matrix,
    k_v: &Matrix,
    k_t: &Matrix,
    key_text_indices: &[usize],
    layout: &TokenLayout,
) -> Result<Matrix, CoreError> {
    if key_text_indices.is_empty() {
        return Err(CoreError::EmptyWindow);
    }
    let q_tk = q_t.gather_rows(key_text_indices);
    let k_vtk = k_v.vstack(&k_t.gather_rows(key_text_indices));
    let mask = CausalColumnMask {
        col_start: layout.n_visual,
        col_positions: key_text_indices.to_vec(),
        row_positions: key_text_indices.to_vec(),
    };
    head_averaged_attention(&q_tk, &k_vtk, layout.n_heads, false, Some(&mask))
}

/// Full head-averaged causal attention map over the whole prompt, for the
/// window-slicing baseline scorers.
pub fn full_causal_attention(q: &Matrix, k: &Matrix, n_heads: usize) -> Result<Matrix, CoreError> {
    let n = q.rows();
    let positions: Vec<usize> = (0..n).collect();
    let mask = CausalColumnMask {
        col_start: 0,
        col_positions: positions.clone(),
        row_positions: positions,
    };
    head_averaged_attention(q, k, n_heads, false, Some(&mask))
}
