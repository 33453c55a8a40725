//! Deterministic desk-scale causal transformer decoder with a
//! visual + text prompt structure.
//!
//! The model is seeded end to end: identical (config, scenario, seed)
//! reproduce identical weights, prompts, and greedy decodes. Needle
//! scenarios plant low-rank query/key channels into the attention
//! projections so that designated visual rows provably receive the
//! attention the scorers are supposed to find, decoy rows mislead naive
//! averaging, and the decoded output depends on the needle rows
//! surviving compression; per-layer gain variation spreads the
//! importance statistics the budget allocator consumes.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::TokenLayout;
use crate::cache::LayerCache;
use crate::error::CoreError;
use crate::linalg::{matmul, softmax_rows, CausalColumnMask, Matrix};

/// Model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub vocab: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            n_layers: 4,
            n_heads: 4,
            hidden_dim: 64,
            vocab: 256,
            seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.n_layers == 0 || self.n_heads == 0 || self.vocab == 0 {
            return Err(CoreError::Config("counts must be >= 1"));
        }
        if self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(CoreError::Config("hidden_dim must divide by n_heads"));
        }
        Ok(())
    }
}

/// Synthetic prompt where designated visual rows carry the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeedleScenario {
    pub n_system: usize,
    pub n_visual: usize,
    pub n_text: usize,
    pub needle_indices: Vec<usize>,
    pub needle_payload: Vec<usize>,
}

impl NeedleScenario {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.n_visual == 0 || self.n_text == 0 {
            return Err(CoreError::Config("n_visual and n_text must be >= 1"));
        }
        if self.needle_indices.iter().any(|&i| i >= self.n_visual) {
            return Err(CoreError::Config("needle index outside visual range"));
        }
        if !self.needle_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(CoreError::Config(
                "needle indices must be strictly increasing",
            ));
        }
        if self.needle_indices.len() * 10 > self.n_visual {
            return Err(CoreError::Config(
                "needles may cover at most 10% of visual tokens",
            ));
        }
        Ok(())
    }
}

struct LayerWeights {
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
    w_o: Matrix,
    w_mlp1: Matrix,
    w_mlp2: Matrix,
}

/// Seeded pre-norm causal decoder.
pub struct ToyModel {
    config: ToyModelConfig,
    layers: Vec<LayerWeights>,
    embed: Matrix,
    w_out: Matrix,
    channels: PlantChannels,
}

/// Planted low-rank attention channels. Row-space directions mark which
/// tokens act as special queries or keys; latent directions live in the
/// Q/K projection space and couple each query channel to its key channel.
struct PlantChannels {
    /// Row direction whose carriers query the needle keys.
    vis_query: Vec<f64>,
    /// Row direction carried by needle rows; makes them attractor keys.
    vis_key: Vec<f64>,
    /// Row direction whose carriers query the instruction keys.
    txt_query: Vec<f64>,
    /// Row direction carried by instruction rows.
    txt_key: Vec<f64>,
    /// Row direction carried by distractor text rows; queries the decoys.
    dec_query: Vec<f64>,
    /// Row direction carried by decoy visual rows.
    dec_key: Vec<f64>,
    /// Latent coupling vis_query tokens to vis_key tokens.
    vis_latent: Vec<f64>,
    /// Latent coupling txt_query tokens to txt_key tokens.
    txt_latent: Vec<f64>,
    /// Latent coupling dec_query tokens to dec_key tokens.
    dec_latent: Vec<f64>,
}

impl PlantChannels {
    fn row_dirs(&self) -> [&[f64]; 6] {
        [
            &self.vis_query,
            &self.vis_key,
            &self.txt_query,
            &self.txt_key,
            &self.dec_query,
            &self.dec_key,
        ]
    }
}

/// Removes the components of `row` along each direction in `dirs`.
fn orthogonalize(row: &mut [f64], dirs: &[&[f64]]) {
    for dir in dirs {
        let dot: f64 = row.iter().zip(dir.iter()).map(|(x, a)| x * a).sum();
        for (x, a) in row.iter_mut().zip(dir.iter()) {
            *x -= dot * a;
        }
    }
}

/// Everything the prompt forward pass leaves behind: per-layer caches plus
/// the projections the scorers read, and the first greedy token.
pub struct PrefillOutput {
    pub caches: Vec<LayerCache>,
    pub q_layers: Vec<Matrix>,
    pub k_layers: Vec<Matrix>,
    pub first_token: usize,
}

const ATTN_PLANT_GAIN: f64 = 3.0;
const NEEDLE_ALIGN_STRENGTH: f64 = 4.0;
const TEXT_ALIGN_STRENGTH: f64 = 6.0;
const DECOY_KEY_STRENGTH: f64 = 4.0;
const DECOY_QUERY_STRENGTH: f64 = 6.0;
const PAYLOAD_CODE_STRENGTH: f64 = 1.0;
const EMBED_ALIGN_STRENGTH: f64 = 12.0;
// The MLP output projection is scaled down so residual updates stay small
// and the planted row directions survive the full depth of the stack.
const MLP_RESIDUAL_SCALE: f64 = 0.3;
const DEPTH_GAIN_COMP: f64 = 0.4;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniform draws.
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

fn random_matrix(rows: usize, cols: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| sigma * gaussian(rng)).collect(),
    )
}

fn layer_norm(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean: f64 = row.iter().sum::<f64>() / n;
    let var: f64 = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / libm::sqrt(var + 1e-6);
    for x in row.iter_mut() {
        *x = (*x - mean) * inv;
    }
}

fn layer_norm_matrix(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        layer_norm(out.row_mut(r));
    }
    out
}

fn sinusoidal_position(pos: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for k in 0..dim / 2 {
        let freq = libm::pow(10000.0, -2.0 * k as f64 / dim as f64);
        let angle = pos as f64 * freq;
        v[2 * k] = libm::sin(angle);
        v[2 * k + 1] = libm::cos(angle);
    }
    v
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl ToyModel {
    /// Draws all weights from the seeded generator and plants the
    /// low-rank channels into every layer's Q/K projections.
    pub fn build(config: ToyModelConfig) -> Result<Self, CoreError> {
        config.validate()?;
        let d = config.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sigma = 1.0 / libm::sqrt(d as f64);

        // Mutually orthonormal row-space directions: three query/key
        // pairs. One pair points instruction tokens (and generated tokens)
        // at the needle keys, one points the instruction suffix at its own
        // key tokens, and one points distractor text at decoy visual rows.
        let mut row_dirs: Vec<Vec<f64>> = Vec::with_capacity(6);
        for _ in 0..6 {
            let mut v: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
            for prev in &row_dirs {
                let dot: f64 = v.iter().zip(prev.iter()).map(|(x, p)| x * p).sum();
                for (x, p) in v.iter_mut().zip(prev.iter()) {
                    *x -= dot * p;
                }
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            for x in v.iter_mut() {
                *x /= norm;
            }
            row_dirs.push(v);
        }

        // Latent directions in projection space, orthogonal within every
        // head's column slice and with equal mass per slice, so each
        // attention head couples to every channel with the same strength
        // and the channels never interfere.
        let head_dim = d / config.n_heads;
        let mut latents: Vec<Vec<f64>> = Vec::with_capacity(3);
        for i in 0..3 {
            let mut v: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
            for h in 0..config.n_heads {
                let lo = h * head_dim;
                let hi = lo + head_dim;
                for prev_latent in latents.iter().take(i) {
                    let prev = &prev_latent[lo..hi];
                    let dot: f64 = v[lo..hi].iter().zip(prev.iter()).map(|(x, p)| x * p).sum();
                    let scale: f64 = prev.iter().map(|p| p * p).sum();
                    for (x, p) in v[lo..hi].iter_mut().zip(prev.iter()) {
                        *x -= dot / scale * p;
                    }
                }
                let slice = &mut v[lo..hi];
                let norm = libm::sqrt(slice.iter().map(|x| x * x).sum::<f64>());
                let target = 1.0 / libm::sqrt(config.n_heads as f64);
                for x in slice.iter_mut() {
                    *x *= target / norm;
                }
            }
            latents.push(v);
        }

        let dec_latent = latents.pop().unwrap();
        let txt_latent = latents.pop().unwrap();
        let vis_latent = latents.pop().unwrap();
        let dec_key = row_dirs.pop().unwrap();
        let dec_query = row_dirs.pop().unwrap();
        let txt_key = row_dirs.pop().unwrap();
        let txt_query = row_dirs.pop().unwrap();
        let vis_key = row_dirs.pop().unwrap();
        let vis_query = row_dirs.pop().unwrap();
        let channels = PlantChannels {
            vis_query,
            vis_key,
            txt_query,
            txt_key,
            dec_query,
            dec_key,
            vis_latent,
            txt_latent,
            dec_latent,
        };

        // Per-layer plant gain: jittered in [0.75, 1.25] of the base so
        // layers differ in how sharply they attend to the channels, and
        // growing with depth to offset the dilution of the planted row
        // directions as residual updates accumulate.
        let align_gain: Vec<f64> = (0..config.n_layers)
            .map(|l| {
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                ATTN_PLANT_GAIN * (0.75 + 0.5 * u) * (1.0 + DEPTH_GAIN_COMP * l as f64)
            })
            .collect();

        let mut layers = Vec::with_capacity(config.n_layers);
        for &g in &align_gain {
            let mut w_q = random_matrix(d, d, sigma, &mut rng);
            let mut w_k = random_matrix(d, d, sigma, &mut rng);
            for i in 0..d {
                for j in 0..d {
                    let qb = g
                        * (channels.vis_query[i] * channels.vis_latent[j]
                            + channels.txt_query[i] * channels.txt_latent[j]
                            + channels.dec_query[i] * channels.dec_latent[j]);
                    let kb = g
                        * (channels.vis_key[i] * channels.vis_latent[j]
                            + channels.txt_key[i] * channels.txt_latent[j]
                            + channels.dec_key[i] * channels.dec_latent[j]);
                    w_q.set(i, j, w_q.get(i, j) + qb);
                    w_k.set(i, j, w_k.get(i, j) + kb);
                }
            }
            layers.push(LayerWeights {
                w_q,
                w_k,
                w_v: random_matrix(d, d, sigma, &mut rng),
                w_o: random_matrix(d, d, sigma, &mut rng),
                w_mlp1: random_matrix(d, 2 * d, sigma, &mut rng),
                w_mlp2: random_matrix(
                    2 * d,
                    d,
                    MLP_RESIDUAL_SCALE / libm::sqrt(2.0 * d as f64),
                    &mut rng,
                ),
            });
        }

        // Every vocabulary embedding carries the needle-query direction, so
        // generated tokens keep attending to the needle keys during decode
        // and the output depends on whether those cache rows survive.
        let mut embed = random_matrix(config.vocab, d, 1.0, &mut rng);
        for r in 0..config.vocab {
            for c in 0..d {
                embed.set(
                    r,
                    c,
                    embed.get(r, c) + EMBED_ALIGN_STRENGTH * channels.vis_query[c],
                );
            }
        }

        Ok(ToyModel {
            embed,
            w_out: random_matrix(d, config.vocab, sigma, &mut rng),
            config,
            layers,
            channels,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    fn head_dim(&self) -> usize {
        self.config.hidden_dim / self.config.n_heads
    }

    fn logit_scale(&self) -> f64 {
        1.0 / libm::sqrt(self.config.hidden_dim as f64)
    }

    /// Sinusoidal position row with its channel components removed, so
    /// absolute position never couples a token to the planted channels.
    fn position_row(&self, pos: usize) -> Vec<f64> {
        let mut v = sinusoidal_position(pos, self.config.hidden_dim);
        orthogonalize(&mut v, &self.channels.row_dirs());
        v
    }

    /// Full causal forward pass over the prompt. Produces the per-layer
    /// caches and the scoring projections.
    pub fn prefill(
        &self,
        embeddings: &Matrix,
        layout: &TokenLayout,
    ) -> Result<PrefillOutput, CoreError> {
        let (logits, caches, q_layers, k_layers) = self.forward(embeddings, layout)?;
        let first_token = argmax(logits.row(logits.rows() - 1));
        Ok(PrefillOutput {
            caches,
            q_layers,
            k_layers,
            first_token,
        })
    }

    /// Logits for every prompt position; position `t` depends only on
    /// tokens `<= t`.
    pub fn prompt_logits(
        &self,
        embeddings: &Matrix,
        layout: &TokenLayout,
    ) -> Result<Matrix, CoreError> {
        Ok(self.forward(embeddings, layout)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn forward(
        &self,
        embeddings: &Matrix,
        layout: &TokenLayout,
    ) -> Result<(Matrix, Vec<LayerCache>, Vec<Matrix>, Vec<Matrix>), CoreError> {
        layout.validate()?;
        let n = layout.total();
        let d = self.config.hidden_dim;
        if embeddings.rows() != n || embeddings.cols() != d {
            return Err(CoreError::Shape {
                expected: (n, d),
                got: (embeddings.rows(), embeddings.cols()),
            });
        }

        let mut x = embeddings.clone();
        for r in 0..n {
            let pos = self.position_row(r);
            for c in 0..d {
                x.set(r, c, x.get(r, c) + pos[c]);
            }
        }

        let positions: Vec<usize> = (0..n).collect();
        let mask = CausalColumnMask {
            col_start: 0,
            col_positions: positions.clone(),
            row_positions: positions,
        };

        let mut caches = Vec::with_capacity(self.config.n_layers);
        let mut q_layers = Vec::with_capacity(self.config.n_layers);
        let mut k_layers = Vec::with_capacity(self.config.n_layers);
        let hd = self.head_dim();
        let scale = self.logit_scale();

        for lw in &self.layers {
            let h = layer_norm_matrix(&x);
            let q = matmul(&h, &lw.w_q)?;
            let k = matmul(&h, &lw.w_k)?;
            let v = matmul(&h, &lw.w_v)?;

            let mut attn_out = Matrix::zeros(n, d);
            for head in 0..self.config.n_heads {
                let q_h = q.slice_cols(head * hd, hd);
                let k_h = k.slice_cols(head * hd, hd);
                let mut logits = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        let dot: f64 = q_h
                            .row(i)
                            .iter()
                            .zip(k_h.row(j).iter())
                            .map(|(a, b)| a * b)
                            .sum();
                        logits.set(i, j, dot * scale);
                    }
                }
                let probs = softmax_rows(&logits, Some(&mask))?;
                for i in 0..n {
                    for j in 0..=i {
                        let p = probs.get(i, j);
                        if p == 0.0 {
                            continue;
                        }
                        for c in 0..hd {
                            let col = head * hd + c;
                            attn_out.set(i, col, attn_out.get(i, col) + p * v.get(j, col));
                        }
                    }
                }
            }

            let proj = matmul(&attn_out, &lw.w_o)?;
            for i in 0..n {
                for c in 0..d {
                    x.set(i, c, x.get(i, c) + proj.get(i, c));
                }
            }

            let h2 = layer_norm_matrix(&x);
            let mut mid = matmul(&h2, &lw.w_mlp1)?;
            for r in 0..mid.rows() {
                for c in 0..mid.cols() {
                    if mid.get(r, c) < 0.0 {
                        mid.set(r, c, 0.0);
                    }
                }
            }
            let mlp = matmul(&mid, &lw.w_mlp2)?;
            for i in 0..n {
                for c in 0..d {
                    x.set(i, c, x.get(i, c) + mlp.get(i, c));
                }
            }

            caches.push(LayerCache::prefill(k.clone(), v, layout)?);
            q_layers.push(q);
            k_layers.push(k);
        }

        let normed = layer_norm_matrix(&x);
        let logits = matmul(&normed, &self.w_out)?;
        Ok((logits, caches, q_layers, k_layers))
    }

    /// Greedy decode for `steps` tokens against the given (possibly
    /// compressed) caches. `first_token` is the argmax of the prefill
    /// logits; each step feeds the current token, appends one row per
    /// layer, and emits the next greedy token.
    pub fn decode(
        &self,
        caches: &mut [LayerCache],
        first_token: usize,
        prompt_len: usize,
        steps: usize,
    ) -> Result<Vec<usize>, CoreError> {
        if steps == 0 {
            return Err(CoreError::Config("steps must be >= 1"));
        }
        if caches.len() != self.config.n_layers {
            return Err(CoreError::Config("cache count must equal n_layers"));
        }
        let d = self.config.hidden_dim;
        let hd = self.head_dim();
        let scale = self.logit_scale();
        let mut token = first_token;
        let mut out = Vec::with_capacity(steps);

        for step in 0..steps {
            let pos = prompt_len + step;
            let mut x: Vec<f64> = self.embed.row(token % self.config.vocab).to_vec();
            let pe = self.position_row(pos);
            for c in 0..d {
                x[c] += pe[c];
            }

            for (l, lw) in self.layers.iter().enumerate() {
                let mut h = x.clone();
                layer_norm(&mut h);
                let hm = Matrix::from_vec(1, d, h);
                let q = matmul(&hm, &lw.w_q)?;
                let k = matmul(&hm, &lw.w_k)?;
                let v = matmul(&hm, &lw.w_v)?;
                caches[l].append(k.row(0), v.row(0))?;

                let cache = &caches[l];
                let rows = cache.rows();
                let mut attn_out = vec![0.0; d];
                for head in 0..self.config.n_heads {
                    let mut logits = vec![0.0; rows];
                    for j in 0..rows {
                        let mut dot = 0.0;
                        for c in 0..hd {
                            let col = head * hd + c;
                            dot += q.get(0, col) * cache.keys().get(j, col);
                        }
                        logits[j] = dot * scale;
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for lg in logits.iter_mut() {
                        *lg = libm::exp(*lg - max);
                        sum += *lg;
                    }
                    for j in 0..rows {
                        let p = logits[j] / sum;
                        for c in 0..hd {
                            let col = head * hd + c;
                            attn_out[col] += p * cache.values().get(j, col);
                        }
                    }
                }
                let proj = matmul(&Matrix::from_vec(1, d, attn_out), &lw.w_o)?;
                for c in 0..d {
                    x[c] += proj.get(0, c);
                }

                let mut h2 = x.clone();
                layer_norm(&mut h2);
                let mut mid = matmul(&Matrix::from_vec(1, d, h2), &lw.w_mlp1)?;
                for c in 0..mid.cols() {
                    if mid.get(0, c) < 0.0 {
                        mid.set(0, c, 0.0);
                    }
                }
                let mlp = matmul(&mid, &lw.w_mlp2)?;
                for c in 0..d {
                    x[c] += mlp.get(0, c);
                }
            }

            let mut normed = x.clone();
            layer_norm(&mut normed);
            let logits = matmul(&Matrix::from_vec(1, d, normed), &self.w_out)?;
            token = argmax(logits.row(0));
            out.push(token);
        }
        Ok(out)
    }

    /// Builds the prompt embeddings for a needle scenario. Visual rows are
    /// noise except the needles, which carry the needle key direction plus
    /// a payload code, and a few decoys carrying the decoy key direction.
    /// Part of the text instruction (always including the last token)
    /// queries the needles so the elite window points at them; distractor
    /// text queries the decoys instead.
    pub fn generate_needle_prompt(
        &self,
        scenario: &NeedleScenario,
        seed: u64,
    ) -> Result<(Matrix, TokenLayout, Vec<usize>), CoreError> {
        scenario.validate()?;
        let d = self.config.hidden_dim;
        let layout = TokenLayout {
            n_system: scenario.n_system,
            n_visual: scenario.n_visual,
            n_text: scenario.n_text,
            hidden_dim: d,
            n_layers: self.config.n_layers,
            n_heads: self.config.n_heads,
        };
        let n = layout.total();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e3779b97f4a7c15));
        let mut emb = random_matrix(n, d, 1.0, &mut rng);

        // Noise rows are orthogonal to every planted direction: only rows
        // that deliberately carry a channel can couple to the attention
        // bumps, so the needles stand out precisely for the instruction
        // queries.
        let dirs = self.channels.row_dirs();
        for r in 0..n {
            orthogonalize(emb.row_mut(r), &dirs);
        }

        for (slot, &idx) in scenario.needle_indices.iter().enumerate() {
            let row = layout.visual_start() + idx;
            let payload =
                scenario.needle_payload.get(slot).copied().unwrap_or(0) % self.config.vocab;
            // The payload code is the channel-free part of the payload
            // token's embedding; the key direction is what makes the row
            // an attractor for needle-querying tokens.
            let mut code: Vec<f64> = self.embed.row(payload).to_vec();
            orthogonalize(&mut code, &dirs);
            for c in 0..d {
                let v = emb.get(row, c)
                    + NEEDLE_ALIGN_STRENGTH * self.channels.vis_key[c]
                    + PAYLOAD_CODE_STRENGTH * code[c];
                emb.set(row, c, v);
            }
        }

        // A sparse set of non-needle visual rows are decoys: attractor keys
        // for the distractor text below, but useless for the task.
        for idx in 0..layout.n_visual {
            if idx % 64 == 7 && !scenario.needle_indices.contains(&idx) {
                let row = layout.visual_start() + idx;
                for c in 0..d {
                    let v = emb.get(row, c) + DECOY_KEY_STRENGTH * self.channels.dec_key[c];
                    emb.set(row, c, v);
                }
            }
        }

        // Every fourth text token plus the last one is "instruction": it
        // queries the needles, queries the other instruction tokens, and is
        // itself an instruction key. Some of the remaining text tokens are
        // distractors whose queries chase the decoy rows; the rest stay
        // noise.
        for t in 0..layout.n_text {
            let row = layout.text_start() + t;
            if t == layout.n_text - 1 || t % 4 == 0 {
                for c in 0..d {
                    let bump = TEXT_ALIGN_STRENGTH
                        * (self.channels.vis_query[c]
                            + self.channels.txt_query[c]
                            + self.channels.txt_key[c]);
                    emb.set(row, c, emb.get(row, c) + bump);
                }
            } else if t % 4 == 2 {
                for c in 0..d {
                    let bump = DECOY_QUERY_STRENGTH * self.channels.dec_query[c];
                    emb.set(row, c, emb.get(row, c) + bump);
                }
            }
        }

        let ground_truth = if scenario.needle_indices.is_empty() {
            let steps = scenario.needle_payload.len();
            if steps == 0 {
                Vec::new()
            } else {
                let out = self.prefill(&emb, &layout)?;
                let mut caches = out.caches;
                self.decode(&mut caches, out.first_token, n, steps)?
            }
        } else {
            scenario.needle_payload.clone()
        };

        Ok((emb, layout, ground_truth))
    }
}
