//! The benchmark pipeline: seeded prompt generation, prefill, per-layer
//! scoring and budget allocation, one-shot compression, and compressed
//! greedy decode measured against the uncompressed reference.

use aircache_core::attention::text_self_attention_last_row;
use aircache_core::budget::{allocate, LayerStats};
use aircache_core::cache::{accounting, CompressionConfig, LayerCache};
use aircache_core::model::PrefillOutput;
use aircache_core::scorer::{rank_visual_tokens, score, ImportanceProfile, ScoringInputs};
use aircache_core::{NeedleScenario, TokenLayout, ToyModel};
use rayon::prelude::*;

use crate::config::{AudienceDoc, PolicyDoc, RunConfig, ScorerDoc};
use crate::error::BenchError;
use crate::report::RunRecord;

/// Shared per-seed state: the prompt's prefill output and the
/// uncompressed reference decode every policy is compared against.
pub struct RepeatContext {
    pub seed: u64,
    pub layout: TokenLayout,
    pub prefill: PrefillOutput,
    pub reference: Vec<usize>,
    pub ground_truth: Vec<usize>,
}

/// Generates and prefills one prompt per repeat; seed `base_seed + i`.
pub fn prepare_repeats(
    model: &ToyModel,
    scenario: &NeedleScenario,
    base_seed: u64,
    repeats: usize,
    decode_steps: usize,
) -> Result<Vec<RepeatContext>, BenchError> {
    (0..repeats)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let (emb, layout, ground_truth) = model.generate_needle_prompt(scenario, seed)?;
            let prefill = model.prefill(&emb, &layout)?;
            let mut full_caches = prefill.caches.clone();
            let reference = model.decode(
                &mut full_caches,
                prefill.first_token,
                layout.total(),
                decode_steps,
            )?;
            Ok(RepeatContext {
                seed,
                layout,
                prefill,
                reference,
                ground_truth,
            })
        })
        .collect()
}

/// Fraction of needle visual tokens still present, averaged over layers.
/// 1.0 when the scenario has no needles.
pub fn needle_recall(caches: &[LayerCache], layout: &TokenLayout, needle_indices: &[usize]) -> f64 {
    if needle_indices.is_empty() {
        return 1.0;
    }
    let vs = layout.visual_start();
    let total = needle_indices.len() as f64;
    let per_layer: f64 = caches
        .iter()
        .map(|c| {
            needle_indices
                .iter()
                .filter(|&&i| c.token_ids().contains(&(vs + i)))
                .count() as f64
                / total
        })
        .sum();
    per_layer / caches.len() as f64
}

fn agreement(tokens: &[usize], reference: &[usize]) -> f64 {
    let hits = tokens.iter().zip(reference).filter(|(a, b)| a == b).count();
    hits as f64 / reference.len() as f64
}

/// Runs one (policy, ratio, alpha) cell against one prepared prompt.
pub fn run_single(
    model: &ToyModel,
    scenario: &NeedleScenario,
    ctx: &RepeatContext,
    policy: &PolicyDoc,
    ratio: f64,
    alpha: f64,
    decode_steps: usize,
) -> Result<RunRecord, BenchError> {
    let layout = &ctx.layout;

    if policy.scorer == ScorerDoc::FullCache {
        let mem = accounting(&ctx.prefill.caches, layout);
        return Ok(RunRecord {
            policy: policy.label(),
            ratio,
            alpha,
            seed: ctx.seed,
            per_layer_keep: vec![layout.n_visual; layout.n_layers],
            output_agreement: 1.0,
            needle_recall: 1.0,
            kv_scalars_full: mem.kv_scalars_full,
            kv_scalars_kept: mem.kv_scalars_kept,
            flops_per_step_full: mem.flops_per_step_full,
            flops_per_step_kept: mem.flops_per_step_kept,
        });
    }

    let scorer_policy = policy.scorer_policy(alpha, ctx.seed);
    let mut profiles = Vec::with_capacity(layout.n_layers);
    for l in 0..layout.n_layers {
        let inputs = ScoringInputs {
            q: &ctx.prefill.q_layers[l],
            k: &ctx.prefill.k_layers[l],
            layout,
        };
        profiles.push(score(scorer_policy, inputs, l)?);
    }
    let stats: Vec<LayerStats> = profiles
        .iter()
        .map(|p| LayerStats {
            layer: p.layer,
            strength: p.strength,
            skewness: p.skewness,
        })
        .collect();
    let plan = allocate(&stats, ratio, layout.n_visual, policy.allocation.to_core())?;

    let cfg = CompressionConfig {
        ratio,
        alpha,
        eviction: policy.eviction.to_core(),
        audience: policy.audience.to_core(),
        allocation_mode: policy.allocation.to_core(),
        scorer_policy,
    };

    let mut compressed = Vec::with_capacity(layout.n_layers);
    let mut per_layer_keep = Vec::with_capacity(layout.n_layers);
    #[allow(clippy::needless_range_loop)]
    for l in 0..layout.n_layers {
        let (ranking, keep) = match policy.audience {
            AudienceDoc::VisionOnly => (rank_visual_tokens(&profiles[l]), plan.per_layer_keep[l]),
            AudienceDoc::Unified => {
                // Text candidates are scored by the last text token's
                // self-attention row; visual and text scores concatenate in
                // candidate order (visual rows precede text rows).
                let q_t = ctx.prefill.q_layers[l].slice_rows(layout.text_start(), layout.n_text);
                let k_t = ctx.prefill.k_layers[l].slice_rows(layout.text_start(), layout.n_text);
                let text_row = text_self_attention_last_row(&q_t, &k_t, layout)?;
                let mut combined = profiles[l].scores.clone();
                combined.extend(text_row);
                let pool = layout.n_visual + layout.n_text;
                let keep = ((plan.per_layer_ratio[l] * pool as f64).round() as i64)
                    .clamp(1, pool as i64) as usize;
                (
                    rank_visual_tokens(&ImportanceProfile::from_scores(l, combined, false)),
                    keep,
                )
            }
        };
        per_layer_keep.push(keep);
        compressed.push(ctx.prefill.caches[l].compress(&ranking, keep, &cfg)?);
    }

    let mem = accounting(&compressed, layout);
    let recall = needle_recall(&compressed, layout, &scenario.needle_indices);
    let tokens = model.decode(
        &mut compressed,
        ctx.prefill.first_token,
        layout.total(),
        decode_steps,
    )?;

    Ok(RunRecord {
        policy: policy.label(),
        ratio,
        alpha,
        seed: ctx.seed,
        per_layer_keep,
        output_agreement: agreement(&tokens, &ctx.reference),
        needle_recall: recall,
        kv_scalars_full: mem.kv_scalars_full,
        kv_scalars_kept: mem.kv_scalars_kept,
        flops_per_step_full: mem.flops_per_step_full,
        flops_per_step_kept: mem.flops_per_step_kept,
    })
}

/// Runs the full (policy x ratio x alpha x repeat) grid and returns the
/// records in deterministic (policy, ratio, alpha, seed) order.
pub fn run_grid(config: &RunConfig, policies: &[PolicyDoc]) -> Result<Vec<RunRecord>, BenchError> {
    let model = ToyModel::build(config.model.to_core())?;
    let scenario = config.scenario.to_core();
    let contexts = prepare_repeats(
        &model,
        &scenario,
        config.base_seed,
        config.repeats,
        config.decode_steps,
    )?;

    let mut items = Vec::new();
    for policy in policies {
        for &ratio in &config.ratios {
            for &alpha in &config.alphas {
                for ctx in &contexts {
                    items.push((policy, ratio, alpha, ctx));
                }
            }
        }
    }

    let mut records = items
        .par_iter()
        .map(|(policy, ratio, alpha, ctx)| {
            run_single(
                &model,
                &scenario,
                ctx,
                policy,
                *ratio,
                *alpha,
                config.decode_steps,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| {
        a.policy
            .cmp(&b.policy)
            .then(a.ratio.total_cmp(&b.ratio))
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(records)
}
