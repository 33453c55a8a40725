//! The per-layer KV cache: prefill population, one-shot post-prefill
//! compression (drop or merge), decode-time append, and retained-entry
//! accounting.
//!
//! Retained rows keep their original token positions; eviction never
//! re-indexes. Generated rows are never compression candidates.

use alloc::vec::Vec;

use crate::attention::TokenLayout;
use crate::budget::AllocationMode;
use crate::error::CoreError;
use crate::linalg::Matrix;
use crate::scorer::ScorerPolicy;

/// Provenance of a cached row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    System,
    Visual,
    Text,
    Generated,
}

/// Drop evicted rows outright, or mean-merge a fraction of them into their
/// nearest retained neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eviction {
    Drop,
    Merge { fraction: f64 },
}

/// Which prompt rows are compression candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Audience {
    VisionOnly,
    Unified,
}

/// Full compression policy for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionConfig {
    pub ratio: f64,
    pub alpha: f64,
    pub eviction: Eviction,
    pub audience: Audience,
    pub allocation_mode: AllocationMode,
    pub scorer_policy: ScorerPolicy,
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(CoreError::Config("ratio must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CoreError::Config("alpha must be in [0, 1]"));
        }
        if let Eviction::Merge { fraction } = self.eviction {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(CoreError::Config("merge fraction must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Key/value rows for one layer with token-index provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    keys: Matrix,
    values: Matrix,
    token_ids: Vec<usize>,
    segment_tags: Vec<Segment>,
    next_token_id: usize,
}

impl LayerCache {
    /// Populates the cache from a completed prompt forward pass.
    pub fn prefill(keys: Matrix, values: Matrix, layout: &TokenLayout) -> Result<Self, CoreError> {
        layout.validate()?;
        let n = layout.total();
        if keys.rows() != n || values.rows() != n {
            return Err(CoreError::Shape {
                expected: (n, keys.cols()),
                got: (keys.rows(), values.rows()),
            });
        }
        let mut tags = Vec::with_capacity(n);
        for i in 0..n {
            tags.push(if i < layout.visual_start() {
                Segment::System
            } else if i < layout.text_start() {
                Segment::Visual
            } else {
                Segment::Text
            });
        }
        Ok(LayerCache {
            keys,
            values,
            token_ids: (0..n).collect(),
            segment_tags: tags,
            next_token_id: n,
        })
    }

    pub fn rows(&self) -> usize {
        self.token_ids.len()
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn token_ids(&self) -> &[usize] {
        &self.token_ids
    }

    pub fn segment_tags(&self) -> &[Segment] {
        &self.segment_tags
    }

    pub fn count_segment(&self, seg: Segment) -> usize {
        self.segment_tags.iter().filter(|&&t| t == seg).count()
    }

    /// Cache row indices that are compression candidates under `audience`,
    /// in original order.
    fn candidate_rows(&self, audience: Audience) -> Vec<usize> {
        self.segment_tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| match audience {
                Audience::VisionOnly => t == Segment::Visual,
                Audience::Unified => t == Segment::Visual || t == Segment::Text,
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// One-shot compression. `ranking` lists candidate-local indices by
    /// descending importance and must cover every candidate row; `keep` is
    /// the number of candidates to retain. Non-candidate rows always
    /// survive; original order is preserved.
    pub fn compress(
        &self,
        ranking: &[usize],
        keep: usize,
        config: &CompressionConfig,
    ) -> Result<LayerCache, CoreError> {
        config.validate()?;
        let candidates = self.candidate_rows(config.audience);
        if ranking.len() != candidates.len() {
            return Err(CoreError::Config("ranking must cover every candidate row"));
        }
        if keep == 0 || keep > candidates.len() {
            return Err(CoreError::Config("keep must be in [1, candidate count]"));
        }

        let mut retain = alloc::vec![true; self.rows()];
        for &local in &ranking[keep..] {
            retain[candidates[local]] = false;
        }

        let mut keys = Matrix::zeros(0, self.keys.cols());
        let mut values = Matrix::zeros(0, self.values.cols());
        let mut token_ids = Vec::new();
        let mut tags = Vec::new();
        for i in 0..self.rows() {
            if retain[i] {
                keys.push_row(self.keys.row(i));
                values.push_row(self.values.row(i));
                token_ids.push(self.token_ids[i]);
                tags.push(self.segment_tags[i]);
            }
        }
        let mut out = LayerCache {
            keys,
            values,
            token_ids,
            segment_tags: tags,
            next_token_id: self.next_token_id,
        };

        if let Eviction::Merge { fraction } = config.eviction {
            // The most important evicted rows (first by ranking) are merged;
            // the remainder are dropped.
            let evicted: Vec<usize> = ranking[keep..].iter().map(|&l| candidates[l]).collect();
            let n_merge = libm::round(fraction * evicted.len() as f64) as usize;
            let retained_candidates: Vec<usize> = candidates
                .iter()
                .copied()
                .filter(|&row| retain[row])
                .collect();
            // Group evicted rows by their nearest retained candidate, then
            // replace each target with the arithmetic mean of itself and
            // everything merged into it.
            let mut groups: Vec<Vec<usize>> = alloc::vec![Vec::new(); retained_candidates.len()];
            for &row in evicted.iter().take(n_merge) {
                let pos = self.token_ids[row];
                let mut best = 0usize;
                let mut best_dist = usize::MAX;
                for (gi, &tr) in retained_candidates.iter().enumerate() {
                    let tp = self.token_ids[tr];
                    let dist = tp.abs_diff(pos);
                    if dist < best_dist
                        || (dist == best_dist && tp < self.token_ids[retained_candidates[best]])
                    {
                        best = gi;
                        best_dist = dist;
                    }
                }
                groups[best].push(row);
            }
            for (gi, group) in groups.iter().enumerate() {
                if group.is_empty() {
                    continue;
                }
                let target_id = self.token_ids[retained_candidates[gi]];
                let out_row = out
                    .token_ids
                    .iter()
                    .position(|&id| id == target_id)
                    .expect("retained row present");
                let m = (group.len() + 1) as f64;
                for c in 0..out.keys.cols() {
                    let mut k_sum = out.keys.get(out_row, c);
                    let mut v_sum = out.values.get(out_row, c);
                    for &src in group {
                        k_sum += self.keys.get(src, c);
                        v_sum += self.values.get(src, c);
                    }
                    out.keys.set(out_row, c, k_sum / m);
                    out.values.set(out_row, c, v_sum / m);
                }
            }
        }
        Ok(out)
    }

    /// Appends the key/value rows of a newly generated token.
    pub fn append(&mut self, key_row: &[f64], value_row: &[f64]) -> Result<(), CoreError> {
        if key_row.len() != self.keys.cols() || value_row.len() != self.values.cols() {
            return Err(CoreError::Shape {
                expected: (1, self.keys.cols()),
                got: (1, key_row.len()),
            });
        }
        self.keys.push_row(key_row);
        self.values.push_row(value_row);
        self.token_ids.push(self.next_token_id);
        self.segment_tags.push(Segment::Generated);
        self.next_token_id += 1;
        Ok(())
    }
}

/// Retained-entry and analytic cost accounting across layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub per_layer_retained: Vec<usize>,
    pub kv_scalars_full: usize,
    pub kv_scalars_kept: usize,
    /// Key columns attended per decode step, per layer.
    pub attended_keys_per_step: Vec<usize>,
    /// Analytic attention FLOPs per decode step: 2 * D * retained rows,
    /// summed over layers.
    pub flops_per_step_full: usize,
    pub flops_per_step_kept: usize,
}

/// Computes the report for a set of compressed per-layer caches.
pub fn accounting(caches: &[LayerCache], layout: &TokenLayout) -> MemoryReport {
    let d = layout.hidden_dim;
    let n = layout.total();
    let full_rows_per_layer = n;
    let per_layer_retained: Vec<usize> = caches.iter().map(|c| c.rows()).collect();
    let kept_rows: usize = per_layer_retained.iter().sum();
    let full_rows = full_rows_per_layer * caches.len();
    MemoryReport {
        attended_keys_per_step: per_layer_retained.clone(),
        per_layer_retained,
        kv_scalars_full: full_rows * 2 * d,
        kv_scalars_kept: kept_rows * 2 * d,
        flops_per_step_full: full_rows * 2 * d,
        flops_per_step_kept: kept_rows * 2 * d,
    }
}
