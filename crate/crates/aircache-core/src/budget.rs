//! Layer-wise budget allocation from the strength and skewness of the
//! per-layer importance distributions, plus the uniform and pyramid
//! baseline allocators.
//!
//! Normalization divides each statistic by its cross-layer mean so the
//! combined factor averages to one and the expected total budget stays at
//! `r * L * n_visual`. Skewness is min-shifted positive before
//! normalization. Ratios are clamped to `[1/n_visual, 1]` with the clamp
//! residue redistributed proportionally among unclamped layers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::linalg::mean_std;

const SKEW_SHIFT_EPS: f64 = 1e-6;

/// Per-layer distribution statistics driving allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerStats {
    pub layer: usize,
    pub strength: f64,
    pub skewness: f64,
}

/// How per-layer ratios are derived from the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationMode {
    AirCache,
    StrengthOnly,
    SkewnessOnly,
    Uniform,
    Pyramid,
}

/// The resolved per-layer budget.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBudgetPlan {
    pub global_ratio: f64,
    pub per_layer_ratio: Vec<f64>,
    pub per_layer_keep: Vec<usize>,
    /// Normalized (strength, skewness) factor pair per layer.
    pub normalization: Vec<(f64, f64)>,
}

/// Sum of the importance scores (strength of the distribution).
pub fn strength(scores: &[f64]) -> f64 {
    scores.iter().sum()
}

/// Adjusted Fisher-Pearson skewness with sample (n-1) standard deviation.
/// Returns `(0, true)` for fewer than 3 samples or a zero-variance vector.
pub fn skewness(scores: &[f64]) -> (f64, bool) {
    let n = scores.len();
    if n < 3 {
        return (0.0, true);
    }
    let (mu, sigma) = mean_std(scores).expect("len >= 3");
    if sigma == 0.0 {
        return (0.0, true);
    }
    let sum: f64 = scores
        .iter()
        .map(|x| {
            let z = (x - mu) / sigma;
            z * z * z
        })
        .sum();
    let nf = n as f64;
    (nf / ((nf - 1.0) * (nf - 2.0)) * sum, false)
}

fn all_equal(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Divides by the cross-layer mean so the factors average to one. Identical
/// inputs map to exactly one per layer.
fn mean_normalize(values: &[f64]) -> Vec<f64> {
    if all_equal(values) {
        return vec![1.0; values.len()];
    }
    let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
    if mean == 0.0 {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| v / mean).collect()
}

fn shifted_positive_skewness(stats: &[LayerStats]) -> Vec<f64> {
    let min = stats
        .iter()
        .map(|s| s.skewness)
        .fold(f64::INFINITY, f64::min);
    stats
        .iter()
        .map(|s| s.skewness - min + SKEW_SHIFT_EPS)
        .collect()
}

/// Clamps each ratio to `[lo, hi]` and redistributes the residue against
/// the target total proportionally among still-unclamped layers.
fn clamp_redistribute(raw: &[f64], target_total: f64, lo: f64, hi: f64) -> Vec<f64> {
    let l = raw.len();
    let mut ratio: Vec<f64> = raw.to_vec();
    let mut fixed = vec![false; l];
    for _ in 0..l {
        let fixed_total: f64 = (0..l).filter(|&i| fixed[i]).map(|i| ratio[i]).sum();
        let free_raw: f64 = (0..l).filter(|&i| !fixed[i]).map(|i| raw[i]).sum();
        let residue = target_total - fixed_total;
        if free_raw <= 0.0 {
            break;
        }
        let scale = residue / free_raw;
        let mut newly_fixed = false;
        for i in 0..l {
            if fixed[i] {
                continue;
            }
            let v = raw[i] * scale;
            if v < lo {
                ratio[i] = lo;
                fixed[i] = true;
                newly_fixed = true;
            } else if v > hi {
                ratio[i] = hi;
                fixed[i] = true;
                newly_fixed = true;
            } else {
                ratio[i] = v;
            }
        }
        if !newly_fixed {
            break;
        }
    }

    // Proportional passes can strand residue when every free layer hits a
    // bound; settle the remainder against whatever headroom or slack is
    // left so the total matches the target whenever it is feasible.
    let total: f64 = ratio.iter().sum();
    let deficit = target_total - total;
    if deficit > 1e-12 {
        let headroom: f64 = ratio.iter().map(|&x| hi - x).sum();
        if headroom > 0.0 {
            let f = (deficit / headroom).min(1.0);
            for x in ratio.iter_mut() {
                *x += f * (hi - *x);
            }
        }
    } else if deficit < -1e-12 {
        let slack: f64 = ratio.iter().map(|&x| x - lo).sum();
        if slack > 0.0 {
            let f = (-deficit / slack).min(1.0);
            for x in ratio.iter_mut() {
                *x -= f * (*x - lo);
            }
        }
    }
    ratio
}

/// Turns per-layer statistics into integer retained-token counts.
pub fn allocate(
    stats: &[LayerStats],
    r: f64,
    n_visual: usize,
    mode: AllocationMode,
) -> Result<LayerBudgetPlan, CoreError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(CoreError::Config("ratio must be in (0, 1]"));
    }
    let l = stats.len();
    if l == 0 {
        return Err(CoreError::Config("need at least one layer"));
    }
    if n_visual == 0 {
        return Err(CoreError::Config("n_visual must be >= 1"));
    }

    let strengths: Vec<f64> = stats.iter().map(|s| s.strength).collect();
    let s_t_norm = mean_normalize(&strengths);
    let s_k_norm = mean_normalize(&shifted_positive_skewness(stats));

    let (factors, normalization): (Vec<f64>, Vec<(f64, f64)>) = match mode {
        AllocationMode::AirCache => (
            (0..l).map(|i| 0.5 * (s_t_norm[i] + s_k_norm[i])).collect(),
            (0..l).map(|i| (s_t_norm[i], s_k_norm[i])).collect(),
        ),
        AllocationMode::StrengthOnly => (
            s_t_norm.clone(),
            (0..l).map(|i| (s_t_norm[i], s_k_norm[i])).collect(),
        ),
        AllocationMode::SkewnessOnly => (
            s_k_norm.clone(),
            (0..l).map(|i| (s_t_norm[i], s_k_norm[i])).collect(),
        ),
        AllocationMode::Uniform => (vec![1.0; l], vec![(1.0, 1.0); l]),
        AllocationMode::Pyramid => {
            // Linearly descending from shallow to deep, mean exactly one.
            let f: Vec<f64> = (0..l)
                .map(|i| 2.0 * (l - i) as f64 / (l + 1) as f64)
                .collect();
            let pairs = f.iter().map(|&x| (x, x)).collect();
            (f, pairs)
        }
    };

    let raw: Vec<f64> = factors.iter().map(|f| f * r).collect();
    let lo = 1.0 / n_visual as f64;
    let ratio = clamp_redistribute(&raw, r * l as f64, lo, 1.0);

    let keep: Vec<usize> = ratio
        .iter()
        .map(|&rh| {
            let k = libm::round(n_visual as f64 * rh) as i64;
            (k.max(1) as usize).min(n_visual)
        })
        .collect();

    Ok(LayerBudgetPlan {
        global_ratio: r,
        per_layer_ratio: ratio,
        per_layer_keep: keep,
        normalization,
    })
}
