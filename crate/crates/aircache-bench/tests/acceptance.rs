//! End-to-end acceptance checks for the compression pipeline. Each test
//! covers one guarantee and prints a single pass line when it holds.

use std::time::Instant;

use aircache_bench::{
    prepare_repeats, run_grid, run_single, AllocationDoc, AudienceDoc, EvictionDoc, ModelDoc,
    PolicyDoc, RunConfig, RunReport, ScenarioDoc, ScorerDoc,
};
use aircache_core::budget::{allocate, skewness, AllocationMode, LayerStats};
use aircache_core::scorer::{score, select_key_text_tokens, ScorerPolicy, ScoringInputs};
use aircache_core::{Matrix, TokenLayout, ToyModel};

fn lcg(seed: &mut u64) -> f64 {
    *seed = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    (*seed >> 11) as f64 / (1u64 << 53) as f64
}

fn random_matrix(rows: usize, cols: usize, seed: &mut u64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| lcg(seed) - 0.5).collect(),
    )
}

fn policy(scorer: ScorerDoc, allocation: AllocationDoc, eviction: EvictionDoc) -> PolicyDoc {
    PolicyDoc {
        scorer,
        allocation,
        eviction,
        audience: AudienceDoc::VisionOnly,
    }
}

fn elite_policy() -> PolicyDoc {
    policy(
        ScorerDoc::EliteWindow { alpha: None },
        AllocationDoc::Aircache,
        EvictionDoc::Drop,
    )
}

#[test]
fn identity_compression_is_bit_exact() {
    let start = Instant::now();
    let model = ToyModel::build(
        ModelDoc {
            n_layers: 4,
            n_heads: 4,
            hidden_dim: 64,
            vocab: 256,
            seed: 0,
        }
        .to_core(),
    )
    .unwrap();
    let scenario = ScenarioDoc {
        n_system: 2,
        n_visual: 60,
        n_text: 12,
        needle_indices: vec![7, 31],
        needle_payload: vec![4, 5],
    }
    .to_core();
    let contexts = prepare_repeats(&model, &scenario, 100, 20, 64).unwrap();
    let p = elite_policy();
    for ctx in &contexts {
        let rec = run_single(&model, &scenario, ctx, &p, 1.0, 0.9, 64).unwrap();
        assert_eq!(rec.per_layer_keep, vec![60; 4], "seed {}", ctx.seed);
        assert_eq!(rec.output_agreement, 1.0, "seed {}", ctx.seed);
        assert_eq!(rec.needle_recall, 1.0, "seed {}", ctx.seed);
        assert_eq!(
            rec.kv_scalars_kept, rec.kv_scalars_full,
            "seed {}",
            ctx.seed
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("acceptance identity_compression_is_bit_exact: pass");
}

/// Straight-line reimplementation of the windowed scorer: per-head softmax
/// with explicit masking, head average, column means.
fn dense_elite_oracle(q: &Matrix, k: &Matrix, layout: &TokenLayout, alpha: f64) -> Vec<f64> {
    let d = layout.hidden_dim;
    let hd = d / layout.n_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let ts = layout.text_start();
    let vs = layout.visual_start();

    let dot = |m: &Matrix, r1: usize, n: &Matrix, r2: usize, h: usize| -> f64 {
        (0..hd)
            .map(|c| m.get(r1, h * hd + c) * n.get(r2, h * hd + c))
            .sum()
    };

    // Last text token's self-attention row, head-averaged.
    let last = ts + layout.n_text - 1;
    let mut a_row = vec![0.0; layout.n_text];
    for h in 0..layout.n_heads {
        let logits: Vec<f64> = (0..layout.n_text)
            .map(|j| dot(q, last, k, ts + j, h) * scale)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..layout.n_text {
            a_row[j] += exps[j] / sum / layout.n_heads as f64;
        }
    }

    let row_max = a_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let key_idx: Vec<usize> = (0..layout.n_text)
        .filter(|&j| a_row[j] >= alpha * row_max)
        .collect();

    // Renormalized sub-attention of the key text queries over visual plus
    // key-text columns, causal among the text columns.
    let n_cols = layout.n_visual + key_idx.len();
    let mut avg = vec![vec![0.0; n_cols]; key_idx.len()];
    for h in 0..layout.n_heads {
        for (ri, &qi) in key_idx.iter().enumerate() {
            let mut logits = vec![f64::NEG_INFINITY; n_cols];
            #[allow(clippy::needless_range_loop)]
            for v in 0..layout.n_visual {
                logits[v] = dot(q, ts + qi, k, vs + v, h) * scale;
            }
            for (ci, &kj) in key_idx.iter().enumerate() {
                if kj <= qi {
                    logits[layout.n_visual + ci] = dot(q, ts + qi, k, ts + kj, h) * scale;
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits
                .iter()
                .map(|x| if x.is_finite() { (x - max).exp() } else { 0.0 })
                .collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..n_cols {
                avg[ri][c] += exps[c] / sum / layout.n_heads as f64;
            }
        }
    }

    (0..layout.n_visual)
        .map(|v| avg.iter().map(|r| r[v]).sum::<f64>() / key_idx.len() as f64)
        .collect()
}

#[test]
fn windowed_scores_match_dense_oracle() {
    let mut seed = 42u64;
    for i in 0..100 {
        let n_visual = 3 + (i % 7);
        let n_text = 2 + (i % 5);
        let n_heads = [1, 2, 4][i % 3];
        let d = 8 * n_heads;
        let layout = TokenLayout {
            n_system: i % 3,
            n_visual,
            n_text,
            hidden_dim: d,
            n_layers: 1,
            n_heads,
        };
        let n = layout.total();
        let q = random_matrix(n, d, &mut seed);
        let k = random_matrix(n, d, &mut seed);
        let alpha = lcg(&mut seed);
        let inputs = ScoringInputs {
            q: &q,
            k: &k,
            layout: &layout,
        };
        let got = score(ScorerPolicy::EliteWindow { alpha }, inputs, 0).unwrap();
        let want = dense_elite_oracle(&q, &k, &layout, alpha);
        for (g, w) in got.scores.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9, "instance {i}: {g} vs {w}");
        }
    }
    println!("acceptance windowed_scores_match_dense_oracle: pass");
}

fn skew_oracle(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return 0.0;
    }
    let m3 = xs.iter().map(|x| ((x - mu) / sigma).powi(3)).sum::<f64>();
    n / ((n - 1.0) * (n - 2.0)) * m3
}

#[test]
fn skewness_matches_oracle() {
    let (v, deg) = skewness(&[1.0, 2.0, 3.0]);
    assert!(!deg);
    assert!(v.abs() <= 1e-12);
    let (v, deg) = skewness(&[0.0, 0.0, 1.0]);
    assert!(!deg);
    assert!((v - 3f64.sqrt()).abs() <= 1e-12);

    let mut seed = 7u64;
    for i in 0..1000 {
        let n = 3 + (i % 60);
        let xs: Vec<f64> = (0..n).map(|_| lcg(&mut seed) * 10.0 - 5.0).collect();
        let (got, deg) = skewness(&xs);
        assert!(!deg);
        let want = skew_oracle(&xs);
        let scale = got.abs().max(want.abs()).max(1.0);
        assert!(
            (got - want).abs() / scale <= 1e-9,
            "vector {i}: {got} vs {want}"
        );
    }
    println!("acceptance skewness_matches_oracle: pass");
}

#[test]
fn threshold_selection_semantics_hold() {
    let mut seed = 11u64;
    for i in 0..500 {
        let n = 2 + (i % 12);
        let raw: Vec<f64> = (0..n).map(|_| lcg(&mut seed) + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        let row: Vec<f64> = raw.iter().map(|x| x / sum).collect();

        let all = select_key_text_tokens(&row, 0.0).unwrap();
        assert_eq!(all, (0..n).collect::<Vec<_>>());

        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let argmax_set: Vec<usize> = (0..n).filter(|&j| row[j] == max).collect();
        assert_eq!(select_key_text_tokens(&row, 1.0).unwrap(), argmax_set);

        let mut prev = select_key_text_tokens(&row, 0.0).unwrap();
        for step in 1..=10 {
            let cur = select_key_text_tokens(&row, step as f64 / 10.0).unwrap();
            assert!(!cur.is_empty());
            assert!(
                cur.iter().all(|j| prev.contains(j)),
                "nesting broken at {step}"
            );
            prev = cur;
        }

        // A zero threshold is the all-text scorer: same window, same scores.
        let n_heads = [1, 2][i % 2];
        let layout = TokenLayout {
            n_system: i % 2,
            n_visual: 3 + (i % 6),
            n_text: n,
            hidden_dim: 8 * n_heads,
            n_layers: 1,
            n_heads,
        };
        let total = layout.total();
        let q = random_matrix(total, layout.hidden_dim, &mut seed);
        let k = random_matrix(total, layout.hidden_dim, &mut seed);
        let zero = score(
            ScorerPolicy::EliteWindow { alpha: 0.0 },
            ScoringInputs {
                q: &q,
                k: &k,
                layout: &layout,
            },
            0,
        )
        .unwrap();
        let baseline = score(
            ScorerPolicy::AllTextTokens { renormalized: true },
            ScoringInputs {
                q: &q,
                k: &k,
                layout: &layout,
            },
            0,
        )
        .unwrap();
        for (a, b) in zero.scores.iter().zip(&baseline.scores) {
            assert!((a - b).abs() <= 1e-12, "row {i}: {a} vs {b}");
        }
    }
    println!("acceptance threshold_selection_semantics_hold: pass");
}

#[test]
fn budget_totals_are_conserved() {
    let mut seed = 13u64;
    for case in 0..200 {
        let l = 2 + (case % 30);
        let n_visual = 16 + ((case * 37) % 500);
        let stats: Vec<LayerStats> = (0..l)
            .map(|layer| LayerStats {
                layer,
                strength: 0.01 + lcg(&mut seed),
                skewness: lcg(&mut seed) * 4.0 - 2.0,
            })
            .collect();
        for &r in &[0.5, 0.1, 0.05, 0.01] {
            for mode in [
                AllocationMode::AirCache,
                AllocationMode::StrengthOnly,
                AllocationMode::SkewnessOnly,
                AllocationMode::Uniform,
                AllocationMode::Pyramid,
            ] {
                let plan = allocate(&stats, r, n_visual, mode).unwrap();
                let total: i64 = plan.per_layer_keep.iter().map(|&k| k as i64).sum();
                let target = (r * l as f64 * n_visual as f64).round() as i64;
                assert!(
                    (total - target).abs() <= l as i64,
                    "case {case} r {r}: total {total} target {target}"
                );
                for &k in &plan.per_layer_keep {
                    assert!(k >= 1 && k <= n_visual);
                }
            }
        }
    }

    // Identical stats in every layer leave the global ratio untouched.
    for &(l, n_visual, r) in &[(4usize, 100usize, 0.1f64), (8, 64, 0.5), (16, 200, 0.05)] {
        let stats: Vec<LayerStats> = (0..l)
            .map(|layer| LayerStats {
                layer,
                strength: 0.4,
                skewness: 1.3,
            })
            .collect();
        let plan = allocate(&stats, r, n_visual, AllocationMode::AirCache).unwrap();
        let uniform = allocate(&stats, r, n_visual, AllocationMode::Uniform).unwrap();
        assert_eq!(plan.per_layer_keep, uniform.per_layer_keep);
        for &ratio in &plan.per_layer_ratio {
            assert!((ratio - r).abs() <= 1e-12);
        }
    }
    println!("acceptance budget_totals_are_conserved: pass");
}

#[test]
fn memory_accounting_is_exact() {
    let model = ToyModel::build(
        ModelDoc {
            n_layers: 3,
            n_heads: 2,
            hidden_dim: 32,
            vocab: 64,
            seed: 1,
        }
        .to_core(),
    )
    .unwrap();
    let scenario_doc = ScenarioDoc {
        n_system: 3,
        n_visual: 50,
        n_text: 9,
        needle_indices: vec![10],
        needle_payload: vec![2],
    };
    let scenario = scenario_doc.to_core();
    let contexts = prepare_repeats(&model, &scenario, 5, 3, 1).unwrap();
    let p = elite_policy();
    let d = 32;
    for ctx in &contexts {
        let mut prev_flops = usize::MAX;
        for &r in &[0.7, 0.3, 0.1] {
            let rec = run_single(&model, &scenario, ctx, &p, r, 0.9, 1).unwrap();
            let expected_kept: usize = rec
                .per_layer_keep
                .iter()
                .map(|&keep| (keep + scenario_doc.n_text + scenario_doc.n_system) * 2 * d)
                .sum();
            assert_eq!(rec.kv_scalars_kept, expected_kept);
            assert_eq!(rec.flops_per_step_kept, expected_kept);
            let full_rows = scenario_doc.n_system + scenario_doc.n_visual + scenario_doc.n_text;
            assert_eq!(rec.kv_scalars_full, 3 * full_rows * 2 * d);
            assert!(
                rec.flops_per_step_kept < prev_flops,
                "flops not strictly decreasing at r {r}"
            );
            prev_flops = rec.flops_per_step_kept;
        }
    }
    println!("acceptance memory_accounting_is_exact: pass");
}

fn needle_setup(
    steps: usize,
) -> (
    ToyModel,
    aircache_core::NeedleScenario,
    Vec<aircache_bench::RepeatContext>,
) {
    let model = ToyModel::build(
        ModelDoc {
            n_layers: 4,
            n_heads: 4,
            hidden_dim: 64,
            vocab: 256,
            seed: 0,
        }
        .to_core(),
    )
    .unwrap();
    let scenario = ScenarioDoc {
        n_system: 0,
        n_visual: 200,
        n_text: 16,
        needle_indices: vec![5, 23, 48, 71, 99, 118, 134, 150, 177, 196],
        needle_payload: vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
    }
    .to_core();
    let contexts = prepare_repeats(&model, &scenario, 1000, 50, steps).unwrap();
    (model, scenario, contexts)
}

fn mean_recall(
    model: &ToyModel,
    scenario: &aircache_core::NeedleScenario,
    contexts: &[aircache_bench::RepeatContext],
    p: &PolicyDoc,
    ratio: f64,
) -> f64 {
    contexts
        .iter()
        .map(|c| {
            run_single(model, scenario, c, p, ratio, 0.9, 1)
                .unwrap()
                .needle_recall
        })
        .sum::<f64>()
        / contexts.len() as f64
}

fn mean_agreement(
    model: &ToyModel,
    scenario: &aircache_core::NeedleScenario,
    contexts: &[aircache_bench::RepeatContext],
    p: &PolicyDoc,
    ratio: f64,
    steps: usize,
) -> f64 {
    contexts
        .iter()
        .map(|c| {
            run_single(model, scenario, c, p, ratio, 0.9, steps)
                .unwrap()
                .output_agreement
        })
        .sum::<f64>()
        / contexts.len() as f64
}

#[test]
fn needle_recall_beats_baselines_at_ten_percent() {
    let start = Instant::now();
    let (model, scenario, contexts) = needle_setup(1);
    let elite = mean_recall(&model, &scenario, &contexts, &elite_policy(), 0.1);
    let random = mean_recall(
        &model,
        &scenario,
        &contexts,
        &policy(ScorerDoc::Random, AllocationDoc::Uniform, EvictionDoc::Drop),
        0.1,
    );
    let visual = mean_recall(
        &model,
        &scenario,
        &contexts,
        &policy(
            ScorerDoc::VisualWindow { size: 8 },
            AllocationDoc::Uniform,
            EvictionDoc::Drop,
        ),
        0.1,
    );
    assert!(elite >= 0.9, "attention-guided recall {elite}");
    assert!(random <= 0.3, "random recall {random}");
    assert!(elite > random, "elite {elite} vs random {random}");
    assert!(elite > visual, "elite {elite} vs visual window {visual}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "acceptance needle_recall_beats_baselines_at_ten_percent: pass \
         (elite {elite:.3}, random {random:.3}, visual_window {visual:.3})"
    );
}

#[test]
fn scorer_ablation_preserves_ordering_at_five_percent() {
    let steps = 4;
    let (model, scenario, contexts) = needle_setup(steps);
    let elite = mean_agreement(&model, &scenario, &contexts, &elite_policy(), 0.05, steps);
    let all_text = mean_agreement(
        &model,
        &scenario,
        &contexts,
        &policy(
            ScorerDoc::AllTextTokens { renormalized: true },
            AllocationDoc::Aircache,
            EvictionDoc::Drop,
        ),
        0.05,
        steps,
    );
    let visual = mean_agreement(
        &model,
        &scenario,
        &contexts,
        &policy(
            ScorerDoc::VisualWindow { size: 8 },
            AllocationDoc::Uniform,
            EvictionDoc::Drop,
        ),
        0.05,
        steps,
    );
    assert!(elite >= all_text, "elite {elite} vs all_text {all_text}");
    assert!(
        all_text >= visual,
        "all_text {all_text} vs visual window {visual}"
    );
    assert!(elite > visual, "elite {elite} vs visual window {visual}");
    println!(
        "acceptance scorer_ablation_preserves_ordering_at_five_percent: pass \
         (elite {elite:.3}, all_text {all_text:.3}, visual_window {visual:.3})"
    );
}

#[test]
fn drop_agreement_dominates_full_merge() {
    let model = ToyModel::build(
        ModelDoc {
            n_layers: 4,
            n_heads: 4,
            hidden_dim: 64,
            vocab: 256,
            seed: 0,
        }
        .to_core(),
    )
    .unwrap();
    let scenario = ScenarioDoc {
        n_system: 0,
        n_visual: 100,
        n_text: 12,
        needle_indices: vec![8, 33, 62, 90],
        needle_payload: vec![1, 2, 3, 4],
    }
    .to_core();
    let contexts = prepare_repeats(&model, &scenario, 500, 50, 8).unwrap();
    let drop = policy(
        ScorerDoc::EliteWindow { alpha: None },
        AllocationDoc::Aircache,
        EvictionDoc::Drop,
    );
    let merge = policy(
        ScorerDoc::EliteWindow { alpha: None },
        AllocationDoc::Aircache,
        EvictionDoc::Merge { fraction: 1.0 },
    );
    let mean = |p: &PolicyDoc| {
        contexts
            .iter()
            .map(|c| {
                run_single(&model, &scenario, c, p, 0.1, 0.9, 8)
                    .unwrap()
                    .output_agreement
            })
            .sum::<f64>()
            / contexts.len() as f64
    };
    let drop_mean = mean(&drop);
    let merge_mean = mean(&merge);
    assert!(
        drop_mean >= merge_mean,
        "drop {drop_mean} vs merge {merge_mean}"
    );
    println!(
        "acceptance drop_agreement_dominates_full_merge: pass \
         (drop {drop_mean:.3}, merge {merge_mean:.3})"
    );
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let config = RunConfig {
        model: ModelDoc {
            n_layers: 2,
            n_heads: 2,
            hidden_dim: 16,
            vocab: 32,
            seed: 3,
        },
        scenario: ScenarioDoc {
            n_system: 1,
            n_visual: 40,
            n_text: 8,
            needle_indices: vec![4, 20],
            needle_payload: vec![6, 7],
        },
        policies: vec![
            elite_policy(),
            policy(ScorerDoc::Random, AllocationDoc::Uniform, EvictionDoc::Drop),
            policy(
                ScorerDoc::H2oCumulative,
                AllocationDoc::Pyramid,
                EvictionDoc::Drop,
            ),
        ],
        ratios: vec![0.1, 0.5],
        alphas: vec![0.5, 0.9],
        decode_steps: 4,
        repeats: 3,
        base_seed: 9,
        out_path: None,
    };
    let a = RunReport::build(run_grid(&config, &config.policies.clone()).unwrap());
    let b = RunReport::build(run_grid(&config, &config.policies.clone()).unwrap());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.records.len(), 3 * 2 * 2 * 3);
    println!("acceptance reports_are_byte_identical_across_runs: pass");
}
