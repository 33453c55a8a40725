//! Visual-token importance scoring: the elite-window scorer plus the
//! window/cumulative/random comparators. Every scorer reduces to one
//! nonnegative score per visual token, per layer.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    elite_window_attention, full_causal_attention, text_self_attention_last_row, TokenLayout,
};
use crate::budget::{skewness, strength};
use crate::error::CoreError;
use crate::linalg::Matrix;

/// Which scorer produces the importance vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScorerPolicy {
    /// Elite observation window with relevance threshold `alpha`.
    EliteWindow { alpha: f64 },
    /// Pool over the last `size` text queries of the full attention map.
    ContinuousTextWindow { size: usize },
    /// Pool over every text query. The renormalized variant recomputes
    /// sub-attention over the assembled visual + text key set (the elite
    /// path with alpha = 0); the plain variant slices the full map.
    AllTextTokens { renormalized: bool },
    /// Pool over the last `size` visual queries of the full attention map.
    VisualWindow { size: usize },
    /// Cumulative attention received from all subsequent prompt queries.
    H2oCumulative,
    /// Seeded uniform permutation score.
    Random { seed: u64 },
}

/// Per-layer importance vector with its distribution statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceProfile {
    pub layer: usize,
    pub scores: Vec<f64>,
    pub strength: f64,
    pub skewness: f64,
    /// Skewness fell back to zero (too few tokens or zero variance).
    pub skew_degenerate: bool,
    /// A requested window exceeded the available tokens and was clamped.
    pub window_clamped: bool,
}

impl ImportanceProfile {
    pub fn from_scores(layer: usize, scores: Vec<f64>, window_clamped: bool) -> Self {
        let s_t = strength(&scores);
        let (s_k, degenerate) = skewness(&scores);
        ImportanceProfile {
            layer,
            scores,
            strength: s_t,
            skewness: s_k,
            skew_degenerate: degenerate,
            window_clamped,
        }
    }
}

/// Per-layer projections a scorer reads. `q` and `k` cover the whole
/// prompt (system, visual, text) in sequence order.
#[derive(Debug, Clone, Copy)]
pub struct ScoringInputs<'a> {
    pub q: &'a Matrix,
    pub k: &'a Matrix,
    pub layout: &'a TokenLayout,
}

impl<'a> ScoringInputs<'a> {
    fn q_text(&self) -> Matrix {
        self.q
            .slice_rows(self.layout.text_start(), self.layout.n_text)
    }

    fn k_text(&self) -> Matrix {
        self.k
            .slice_rows(self.layout.text_start(), self.layout.n_text)
    }

    fn k_visual(&self) -> Matrix {
        self.k
            .slice_rows(self.layout.visual_start(), self.layout.n_visual)
    }
}

/// Thresholded key-text-token selection against the last text token's
/// self-attention row. Never empty: the argmax always qualifies.
pub fn select_key_text_tokens(a_tt_last_row: &[f64], alpha: f64) -> Result<Vec<usize>, CoreError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::Config("alpha must be in [0, 1]"));
    }
    if a_tt_last_row.is_empty() {
        return Err(CoreError::EmptyText);
    }
    let max = a_tt_last_row
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(a_tt_last_row
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= alpha * max)
        .map(|(j, _)| j)
        .collect())
}

/// Column-mean pooling of the elite-window sub-attention over its text
/// rows, restricted to the visual columns.
pub fn score_elite(
    a_vtk: &Matrix,
    layout: &TokenLayout,
    layer: usize,
) -> Result<ImportanceProfile, CoreError> {
    if a_vtk.rows() == 0 {
        return Err(CoreError::EmptyWindow);
    }
    let n_tk = a_vtk.rows() as f64;
    let scores: Vec<f64> = (0..layout.n_visual)
        .map(|i| (0..a_vtk.rows()).map(|r| a_vtk.get(r, i)).sum::<f64>() / n_tk)
        .collect();
    Ok(ImportanceProfile::from_scores(layer, scores, false))
}

/// Raw cumulative attention each visual token receives from every strictly
/// subsequent prompt query, on the full causal map.
pub fn h2o_column_sums(full_map: &Matrix, layout: &TokenLayout) -> Vec<f64> {
    let vs = layout.visual_start();
    (0..layout.n_visual)
        .map(|i| {
            let col = vs + i;
            (col + 1..full_map.rows())
                .map(|r| full_map.get(r, col))
                .sum()
        })
        .collect()
}

fn pool_full_map_rows(
    full_map: &Matrix,
    rows: core::ops::Range<usize>,
    layout: &TokenLayout,
) -> Vec<f64> {
    let vs = layout.visual_start();
    let n = rows.len() as f64;
    (0..layout.n_visual)
        .map(|i| rows.clone().map(|r| full_map.get(r, vs + i)).sum::<f64>() / n)
        .collect()
}

/// Runs the configured scorer for one layer.
pub fn score(
    policy: ScorerPolicy,
    inputs: ScoringInputs<'_>,
    layer: usize,
) -> Result<ImportanceProfile, CoreError> {
    let layout = inputs.layout;
    match policy {
        ScorerPolicy::EliteWindow { alpha } => {
            let row = text_self_attention_last_row(&inputs.q_text(), &inputs.k_text(), layout)?;
            let k_idx = select_key_text_tokens(&row, alpha)?;
            let a_vtk = elite_window_attention(
                &inputs.q_text(),
                &inputs.k_visual(),
                &inputs.k_text(),
                &k_idx,
                layout,
            )?;
            score_elite(&a_vtk, layout, layer)
        }
        ScorerPolicy::AllTextTokens { renormalized: true } => {
            let all: Vec<usize> = (0..layout.n_text).collect();
            let a_vtk = elite_window_attention(
                &inputs.q_text(),
                &inputs.k_visual(),
                &inputs.k_text(),
                &all,
                layout,
            )?;
            score_elite(&a_vtk, layout, layer)
        }
        ScorerPolicy::AllTextTokens {
            renormalized: false,
        } => {
            let map = full_causal_attention(inputs.q, inputs.k, layout.n_heads)?;
            let ts = layout.text_start();
            let scores = pool_full_map_rows(&map, ts..ts + layout.n_text, layout);
            Ok(ImportanceProfile::from_scores(layer, scores, false))
        }
        ScorerPolicy::ContinuousTextWindow { size } => {
            if size == 0 {
                return Err(CoreError::Config("window size must be >= 1"));
            }
            let clamped = size > layout.n_text;
            let w = size.min(layout.n_text);
            let map = full_causal_attention(inputs.q, inputs.k, layout.n_heads)?;
            let end = layout.text_start() + layout.n_text;
            let scores = pool_full_map_rows(&map, end - w..end, layout);
            Ok(ImportanceProfile::from_scores(layer, scores, clamped))
        }
        ScorerPolicy::VisualWindow { size } => {
            if size == 0 {
                return Err(CoreError::Config("window size must be >= 1"));
            }
            let clamped = size > layout.n_visual;
            let w = size.min(layout.n_visual);
            let map = full_causal_attention(inputs.q, inputs.k, layout.n_heads)?;
            let end = layout.visual_start() + layout.n_visual;
            let scores = pool_full_map_rows(&map, end - w..end, layout);
            Ok(ImportanceProfile::from_scores(layer, scores, clamped))
        }
        ScorerPolicy::H2oCumulative => {
            let map = full_causal_attention(inputs.q, inputs.k, layout.n_heads)?;
            let sums = h2o_column_sums(&map, layout);
            // Ranking-preserving normalization keeping scores in [0, 1].
            let denom = map.rows() as f64;
            let scores = sums.iter().map(|s| s / denom).collect();
            Ok(ImportanceProfile::from_scores(layer, scores, false))
        }
        ScorerPolicy::Random { seed } => {
            let n = layout.n_visual;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                perm.swap(i, j);
            }
            let mut scores = alloc::vec![0.0; n];
            for (rank, &idx) in perm.iter().enumerate() {
                scores[idx] = (rank + 1) as f64 / n as f64;
            }
            Ok(ImportanceProfile::from_scores(layer, scores, false))
        }
    }
}

/// Indices of the visual tokens by descending score, ties broken by
/// ascending original index.
pub fn rank_visual_tokens(profile: &ImportanceProfile) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..profile.scores.len()).collect();
    idx.sort_by(|&a, &b| {
        profile.scores[b]
            .partial_cmp(&profile.scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}
