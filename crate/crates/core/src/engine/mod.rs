//! A small deterministic decoder-only transformer.
//!
//! Each layer is a pre-norm attention block: the hidden state is RMS
//! normalised, projected to Q/K/V, attended over the visible KV entries and
//! projected back. In `SeededRandom` mode the block is residual with random
//! weights. In `Averaging` mode the Q and K projections are zero, V and the
//! output projection are the identity and there is no residual, so every
//! attention output (and hence every hidden state) is the plain mean of the
//! visible value vectors.
//!
//! Keys are cached without rotary encoding; positions travel with the cache
//! and are applied at attention time.

mod attention;
mod kv;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

pub use attention::{attend, HeadShape, Mask, Rope};
pub use kv::{KvPair, KvSeq};

use crate::error::{config, dimension, precondition, Result};
use attention::{attend_rotated, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineMode {
    SeededRandom,
    Averaging,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EngineConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub embed_dim: usize,
    pub vocab: usize,
    pub seed: u64,
    pub mode: EngineMode,
}

impl EngineConfig {
    pub fn new(layers: usize, heads: usize, head_dim: usize, vocab: usize, seed: u64, mode: EngineMode) -> Self {
        Self { layers, heads, head_dim, embed_dim: heads * head_dim, vocab, seed, mode }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("embed_dim", self.embed_dim),
            ("vocab", self.vocab),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(config(format!("{name} must be at least 1")));
        }
        if self.embed_dim != self.heads * self.head_dim {
            return Err(config(format!(
                "embed_dim {} != heads {} x head_dim {}",
                self.embed_dim, self.heads, self.head_dim
            )));
        }
        Ok(())
    }

    /// Stable 64-bit identity of the configuration, written into cache files.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        for v in [self.layers, self.heads, self.head_dim, self.embed_dim, self.vocab] {
            h.write_u64(v as u64);
        }
        h.write_u64(self.seed);
        h.write_u8(match self.mode {
            EngineMode::SeededRandom => 0,
            EngineMode::Averaging => 1,
        });
        h.finish()
    }

    pub fn head_shape(&self) -> HeadShape {
        HeadShape { heads: self.heads, head_dim: self.head_dim }
    }
}

/// Input token: an embedding vector placed at an absolute position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbedding {
    pub vector: Vec<f32>,
    pub position: usize,
}

#[derive(Debug, Clone)]
struct LayerWeights {
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct PrefillOutput {
    /// One entry per input token, in input order.
    pub kv: KvSeq,
    /// Final hidden states `[tokens × embed_dim]` before the readout norm.
    pub hidden: Option<Vec<f32>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pass {
    Hidden,
    KvOnly,
    Profile,
}

/// Immutable after construction; share it freely across threads.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    layers: Vec<LayerWeights>,
    embedding: Vec<f32>,
    placeholder: Vec<f32>,
    residual: bool,
    rope: Rope,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (layers, residual, placeholder) = match config.mode {
            EngineMode::SeededRandom => {
                let scale = 1.0 / (d as f32).sqrt();
                let layers = (0..config.layers)
                    .map(|_| LayerWeights {
                        wq: gaussian(&mut rng, d * d, scale),
                        wk: gaussian(&mut rng, d * d, scale),
                        wv: gaussian(&mut rng, d * d, scale),
                        wo: gaussian(&mut rng, d * d, scale),
                    })
                    .collect();
                (layers, true, unit(gaussian(&mut rng, d, 1.0)))
            }
            EngineMode::Averaging => {
                let eye = identity(d);
                let layers = (0..config.layers)
                    .map(|_| LayerWeights {
                        wq: vec![0.0; d * d],
                        wk: vec![0.0; d * d],
                        wv: eye.clone(),
                        wo: eye.clone(),
                    })
                    .collect();
                // a zero placeholder keeps summary values a function of chunk content only
                (layers, false, vec![0.0; d])
            }
        };
        let embedding = match config.mode {
            EngineMode::SeededRandom => {
                (0..config.vocab).flat_map(|_| unit(gaussian(&mut rng, d, 1.0))).collect()
            }
            EngineMode::Averaging => orthonormal_rows(&mut rng, config.vocab, d),
        };
        Ok(Self { rope: Rope::new(config.head_dim), config, layers, embedding, placeholder, residual })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn rope(&self) -> &Rope {
        &self.rope
    }

    pub fn empty_kv(&self) -> KvSeq {
        KvSeq::new(self.config.layers, self.config.embed_dim)
    }

    /// Embedding row of a vocabulary entry; rows have unit norm.
    pub fn token_embedding(&self, token: usize) -> &[f32] {
        let d = self.dim();
        &self.embedding[token * d..(token + 1) * d]
    }

    /// Shared placeholder vector used as the input of every summary token.
    pub fn summary_placeholder(&self) -> &[f32] {
        &self.placeholder
    }

    /// FNV-1a digest over every weight, embedding and placeholder value.
    pub fn weight_checksum(&self) -> u64 {
        let mut h = FnvHasher::default();
        for layer in &self.layers {
            for m in [&layer.wq, &layer.wk, &layer.wv, &layer.wo] {
                for x in m.iter() {
                    h.write_u32(x.to_bits());
                }
            }
        }
        for x in self.embedding.iter().chain(&self.placeholder) {
            h.write_u32(x.to_bits());
        }
        h.finish()
    }

    /// A unit vector orthogonal to every vocabulary embedding, drawn from
    /// `seed`. Zero when the vocabulary spans the whole embedding space.
    pub fn vocab_orthogonal_vector(&self, seed: u64) -> Vec<f32> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = gram_schmidt(&self.embedding, d);
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return vec![0.0; d];
        }
        v.iter().map(|x| (x / norm) as f32).collect()
    }

    /// Places vectors at the positions immediately following `context`.
    pub fn place_after(&self, context: &KvSeq, vectors: Vec<Vec<f32>>) -> Vec<TokenEmbedding> {
        let start = next_position(context);
        vectors
            .into_iter()
            .enumerate()
            .map(|(i, vector)| TokenEmbedding { vector, position: start + i })
            .collect()
    }

    /// Encodes `tokens` causally with full visibility onto `context`.
    pub fn forward_prefill(&self, tokens: &[TokenEmbedding], context: &KvSeq) -> Result<PrefillOutput> {
        self.run(tokens, context, Pass::Hidden, None)
    }

    /// Like [`Engine::forward_prefill`] but skips the final attention, which
    /// only feeds hidden states; the returned KV entries are identical.
    pub fn forward_prefill_kv(&self, tokens: &[TokenEmbedding], context: &KvSeq) -> Result<KvSeq> {
        Ok(self.run(tokens, context, Pass::KvOnly, None)?.kv)
    }

    /// Final-layer attention weight each context entry receives from
    /// `tokens`, summed over tokens and averaged over heads.
    pub fn attention_profile(&self, tokens: &[TokenEmbedding], context: &KvSeq) -> Result<Vec<f32>> {
        let mut weights = vec![0.0; context.len() + tokens.len()];
        self.run(tokens, context, Pass::Profile, Some(&mut weights))?;
        weights.truncate(context.len());
        Ok(weights)
    }

    /// Feeds one vocabulary token after `context` and returns next-token
    /// logits with the token's new KV entry.
    pub fn forward_decode_step(&self, last_token: usize, context: &KvSeq) -> Result<(Vec<f32>, KvPair)> {
        if context.is_empty() {
            return Err(precondition("decode step requires a nonempty context"));
        }
        if last_token >= self.config.vocab {
            return Err(dimension(format!("token {last_token} outside vocab {}", self.config.vocab)));
        }
        let token = TokenEmbedding {
            vector: self.token_embedding(last_token).to_vec(),
            position: next_position(context),
        };
        let out = self.forward_prefill(std::slice::from_ref(&token), context)?;
        let hidden = out.hidden.expect("hidden requested");
        Ok((self.logits(&hidden), out.kv.get(0)))
    }

    /// Tied readout: `E · rmsnorm(hidden)`.
    pub fn logits(&self, hidden: &[f32]) -> Vec<f32> {
        let normed = rms_norm(hidden);
        self.embedding.chunks_exact(self.dim()).map(|row| dot(row, &normed)).collect()
    }

    fn run(
        &self,
        tokens: &[TokenEmbedding],
        context: &KvSeq,
        pass: Pass,
        weights: Option<&mut [f32]>,
    ) -> Result<PrefillOutput> {
        let d = self.dim();
        if tokens.is_empty() {
            return Err(precondition("prefill requires at least one token"));
        }
        if context.layers() != self.config.layers || context.dim() != d {
            return Err(dimension("context shape does not match engine"));
        }
        let mut last = context.max_position();
        for t in tokens {
            if t.vector.len() != d {
                return Err(dimension(format!("token of width {} for embed_dim {d}", t.vector.len())));
            }
            if t.vector.iter().any(|x| !x.is_finite()) {
                return Err(precondition("token embedding has non-finite entries"));
            }
            if last.is_some_and(|p| t.position <= p) {
                return Err(precondition(format!(
                    "token position {} overlaps preceding position {}",
                    t.position,
                    last.unwrap()
                )));
            }
            last = Some(t.position);
        }

        let n = tokens.len();
        let shape = self.config.head_shape();
        let positions: Vec<usize> = tokens.iter().map(|t| t.position).collect();
        let mut all_positions = context.positions().to_vec();
        all_positions.extend_from_slice(&positions);
        let mut h: Vec<f32> = tokens.iter().flat_map(|t| t.vector.iter().copied()).collect();
        let mut new_keys = Vec::with_capacity(self.config.layers);
        let mut new_values = Vec::with_capacity(self.config.layers);
        let mut weights = weights;

        for (l, w) in self.layers.iter().enumerate() {
            let a: Vec<f32> = h.chunks_exact(d).flat_map(rms_norm).collect();
            let q = matmul_rows(&a, &w.wq, d);
            let k = matmul_rows(&a, &w.wk, d);
            let v = matmul_rows(&a, &w.wv, d);
            let last_layer = l + 1 == self.config.layers;
            if !(last_layer && pass == Pass::KvOnly) {
                let mut keys = Vec::with_capacity((context.len() + n) * d);
                keys.extend_from_slice(context.layer_keys(l));
                keys.extend_from_slice(&k);
                self.rope.rotate_rows(&mut keys, &all_positions, shape.heads);
                let mut values = Vec::with_capacity((context.len() + n) * d);
                values.extend_from_slice(context.layer_values(l));
                values.extend_from_slice(&v);
                let mut qr = q;
                self.rope.rotate_rows(&mut qr, &positions, shape.heads);
                let mut o = vec![0.0; n * d];
                let sink = if last_layer && pass == Pass::Profile { weights.as_deref_mut() } else { None };
                attend_rotated(&qr, &keys, &values, shape, Mask::Causal { prefix: context.len() }, &mut o, sink);
                let proj = matmul_rows(&o, &w.wo, d);
                if self.residual {
                    h.iter_mut().zip(&proj).for_each(|(x, p)| *x += p);
                } else {
                    h = proj;
                }
            }
            new_keys.push(k);
            new_values.push(v);
        }
        let kv = KvSeq::from_parts(d, new_keys, new_values, positions)?;
        Ok(PrefillOutput { kv, hidden: (pass == Pass::Hidden).then_some(h) })
    }
}

/// First free position after `context` (0 for an empty context).
pub fn next_position(context: &KvSeq) -> usize {
    context.max_position().map_or(0, |p| p + 1)
}

/// Root-mean-square normalisation without gain; the zero vector maps to zero.
pub fn rms_norm(x: &[f32]) -> Vec<f32> {
    let ms = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64;
    if ms == 0.0 {
        return vec![0.0; x.len()];
    }
    let inv = (1.0 / ms.sqrt()) as f32;
    x.iter().map(|v| v * inv).collect()
}

/// `rows · Wᵀ` for a row-major `[d × d]` matrix `w`.
fn matmul_rows(rows: &[f32], w: &[f32], d: usize) -> Vec<f32> {
    let mut wt = vec![0.0f32; d * d];
    for i in 0..d {
        for j in 0..d {
            wt[j * d + i] = w[i * d + j];
        }
    }
    let mut out = vec![0.0f32; rows.len()];
    for (row, o) in rows.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        for (&x, col) in row.iter().zip(wt.chunks_exact(d)) {
            for (oi, &c) in o.iter_mut().zip(col) {
                *oi += x * c;
            }
        }
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let x: f32 = StandardNormal.sample(rng);
            x * scale
        })
        .collect()
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn identity(d: usize) -> Vec<f32> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Orthonormal basis (f64) of the span of the given rows.
fn gram_schmidt(rows: &[f32], d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in rows.chunks_exact(d) {
        let mut v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
        if basis.len() == d {
            break;
        }
    }
    basis
}

/// `vocab` unit rows; the first `min(vocab, d)` are mutually orthogonal.
fn orthonormal_rows(rng: &mut ChaCha8Rng, vocab: usize, d: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(vocab * d);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while out.len() < vocab * d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if basis.len() < d {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        let u: Vec<f64> = v.iter().map(|x| x / norm).collect();
        out.extend(u.iter().map(|&x| x as f32));
        if basis.len() < d {
            basis.push(u);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: EngineMode, seed: u64) -> EngineConfig {
        EngineConfig::new(2, 2, 4, 16, seed, mode)
    }

    fn tokens(engine: &Engine, n: usize, seed: u64) -> Vec<TokenEmbedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vecs = (0..n).map(|_| gaussian(&mut rng, engine.dim(), 1.0)).collect();
        engine.place_after(&engine.empty_kv(), vecs)
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg(EngineMode::SeededRandom, 1);
        c.embed_dim = 9;
        assert!(matches!(Engine::new(c), Err(crate::Error::Config(_))));
        let c = EngineConfig::new(0, 2, 4, 16, 1, EngineMode::Averaging);
        assert!(matches!(Engine::new(c), Err(crate::Error::Config(_))));
    }

    #[test]
    fn same_config_same_weights() {
        let a = Engine::new(cfg(EngineMode::SeededRandom, 7)).unwrap();
        let b = Engine::new(cfg(EngineMode::SeededRandom, 7)).unwrap();
        assert_eq!(a.weight_checksum(), b.weight_checksum());
    }

    #[test]
    fn different_seeds_differ() {
        let a = Engine::new(cfg(EngineMode::SeededRandom, 1)).unwrap();
        let b = Engine::new(cfg(EngineMode::SeededRandom, 2)).unwrap();
        assert_ne!(a.weight_checksum(), b.weight_checksum());
    }

    #[test]
    fn averaging_single_token_output_is_its_value() {
        let e = Engine::new(cfg(EngineMode::Averaging, 3)).unwrap();
        let toks = tokens(&e, 1, 11);
        let out = e.forward_prefill(&toks, &e.empty_kv()).unwrap();
        let hidden = out.hidden.unwrap();
        // last layer attends over the single layer-(L-1) value
        for (h, v) in hidden.iter().zip(out.kv.value(1, 0)) {
            assert!((h - v).abs() < 1e-6);
        }
    }

    #[test]
    fn positions_assigned_after_context() {
        let e = Engine::new(cfg(EngineMode::SeededRandom, 3)).unwrap();
        let out = e.forward_prefill(&tokens(&e, 5, 1), &e.empty_kv()).unwrap();
        assert_eq!(out.kv.positions(), &[0, 1, 2, 3, 4]);
        let ctx = out.kv.select(&[0, 1, 2]);
        let more = e.place_after(&ctx, vec![vec![0.5; 8], vec![-0.5; 8]]);
        let out2 = e.forward_prefill(&more, &ctx).unwrap();
        assert_eq!(out2.kv.positions(), &[3, 4]);
    }

    #[test]
    fn overlapping_positions_are_rejected() {
        let e = Engine::new(cfg(EngineMode::SeededRandom, 3)).unwrap();
        let ctx = e.forward_prefill(&tokens(&e, 3, 1), &e.empty_kv()).unwrap().kv;
        let clash = vec![TokenEmbedding { vector: vec![0.0; 8], position: 2 }];
        assert!(matches!(e.forward_prefill(&clash, &ctx), Err(crate::Error::Precondition(_))));
        assert!(matches!(e.forward_prefill(&[], &ctx), Err(crate::Error::Precondition(_))));
    }

    #[test]
    fn kv_only_pass_matches_full_pass() {
        let e = Engine::new(cfg(EngineMode::SeededRandom, 5)).unwrap();
        let toks = tokens(&e, 6, 2);
        let full = e.forward_prefill(&toks, &e.empty_kv()).unwrap();
        let kv = e.forward_prefill_kv(&toks, &e.empty_kv()).unwrap();
        assert_eq!(full.kv, kv);
    }

    #[test]
    fn averaging_hidden_is_mean_of_visible_values() {
        let e = Engine::new(cfg(EngineMode::Averaging, 9)).unwrap();
        let ctx = e.forward_prefill(&tokens(&e, 3, 4), &e.empty_kv()).unwrap().kv;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let more = e.place_after(&ctx, (0..4).map(|_| gaussian(&mut rng, 8, 1.0)).collect());
        let out = e.forward_prefill(&more, &ctx).unwrap();
        let hidden = out.hidden.unwrap();
        let last = e.config().layers - 1;
        for t in 0..4 {
            for c in 0..8 {
                let mut sum = 0.0f64;
                for j in 0..ctx.len() {
                    sum += ctx.value(last, j)[c] as f64;
                }
                for j in 0..=t {
                    sum += out.kv.value(last, j)[c] as f64;
                }
                let mean = sum / (ctx.len() + t + 1) as f64;
                assert!((hidden[t * 8 + c] as f64 - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn decode_step_is_deterministic_and_appends_one_entry() {
        let e = Engine::new(cfg(EngineMode::SeededRandom, 21)).unwrap();
        let ctx = e.forward_prefill(&tokens(&e, 4, 3), &e.empty_kv()).unwrap().kv;
        let (l1, kv1) = e.forward_decode_step(3, &ctx).unwrap();
        let (l2, kv2) = e.forward_decode_step(3, &ctx).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(kv1, kv2);
        assert_eq!(l1.len(), 16);
        assert_eq!(kv1.position, 4);
        assert_eq!(kv1.key.len(), 2 * 8);
        assert!(e.forward_decode_step(0, &e.empty_kv()).is_err());
    }

    #[test]
    fn zero_value_context_does_not_move_argmax_in_averaging_mode() {
        let e = Engine::new(cfg(EngineMode::Averaging, 4)).unwrap();
        let ctx = e.forward_prefill(&tokens(&e, 3, 6), &e.empty_kv()).unwrap().kv;
        let (base, _) = e.forward_decode_step(5, &ctx).unwrap();
        let mut grown = ctx.clone();
        for i in 0..5 {
            grown
                .push(&KvPair { key: vec![0.0; 16], value: vec![0.0; 16], position: 3 + i })
                .unwrap();
        }
        let (more, _) = e.forward_decode_step(5, &grown).unwrap();
        let argmax = |v: &[f32]| {
            v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b })
        };
        assert_eq!(argmax(&base), argmax(&more));
    }

    #[test]
    fn averaging_vocab_rows_are_orthonormal() {
        let e = Engine::new(EngineConfig::new(2, 2, 8, 8, 1, EngineMode::Averaging)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let d = dot(e.token_embedding(i), e.token_embedding(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-5);
            }
        }
        let o = e.vocab_orthogonal_vector(3);
        assert!((dot(&o, &o) - 1.0).abs() < 1e-5);
        for i in 0..8 {
            assert!(dot(&o, e.token_embedding(i)).abs() < 1e-5);
        }
    }

    #[test]
    fn attention_profile_is_uniform_in_averaging_mode() {
        let e = Engine::new(cfg(EngineMode::Averaging, 4)).unwrap();
        let ctx = e.forward_prefill(&tokens(&e, 6, 6), &e.empty_kv()).unwrap().kv;
        let q = e.place_after(&ctx, vec![vec![1.0; 8]]);
        let w = e.attention_profile(&q, &ctx).unwrap();
        for x in &w {
            assert!((x - 1.0 / 7.0).abs() < 1e-6);
        }
    }
}
