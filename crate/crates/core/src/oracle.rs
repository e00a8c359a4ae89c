//! Chunk relevance scoring and top-k selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunking::ChunkSpec;
use crate::compressor::CompressedKv;
use crate::engine::{Engine, KvSeq};
use crate::error::{config, dimension, integrity, Result};

/// A task as seen by the oracles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskQuery {
    /// Prompt token embeddings fed to the engine.
    pub text_tokens: Vec<Vec<f32>>,
    /// Query vector compared against frame embeddings.
    pub embedding: Option<Vec<f32>>,
    pub prompt: String,
}

impl TaskQuery {
    pub fn validate(&self) -> Result<()> {
        if self.text_tokens.is_empty() && self.embedding.is_none() && self.prompt.is_empty() {
            return Err(config("task query has no representation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScores {
    pub scores: Vec<f64>,
    pub oracle: String,
}

impl RelevanceScores {
    pub fn new(scores: Vec<f64>, oracle: impl Into<String>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(config(format!("score of chunk {i} is not finite")));
        }
        Ok(Self { scores, oracle: oracle.into() })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Cosine,
    Attention,
    Random,
    #[value(name = "lastn")]
    LastN,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Random { seed: u64 },
    LastN,
    UniformStride,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Mean cosine similarity between the query and each chunk's frames.
/// Zero-norm vectors score 0.
pub fn score_cosine(query: &[f32], chunk_frames: &[Vec<Vec<f32>>]) -> Result<RelevanceScores> {
    let mut scores = Vec::with_capacity(chunk_frames.len());
    for (i, frames) in chunk_frames.iter().enumerate() {
        if frames.is_empty() {
            scores.push(0.0);
            continue;
        }
        let mut sum = 0.0;
        for f in frames {
            if f.len() != query.len() {
                return Err(dimension(format!(
                    "chunk {i} frame embedding has {} dims, query has {}",
                    f.len(),
                    query.len()
                )));
            }
            sum += cosine(query, f);
        }
        scores.push(sum / frames.len() as f64);
    }
    RelevanceScores::new(scores, "cosine")
}

/// Groups per-frame embeddings by the frame spans of `chunks`.
pub fn group_frames(frames: &[Vec<f32>], chunks: &[ChunkSpec]) -> Result<Vec<Vec<Vec<f32>>>> {
    chunks
        .iter()
        .map(|c| {
            let (a, b) = c.frame_span;
            frames
                .get(a..=b)
                .map(|s| s.to_vec())
                .ok_or_else(|| dimension(format!("chunk {} spans frames {a}..={b} of {}", c.index, frames.len())))
        })
        .collect()
}

/// Final-layer attention mass the task tokens place on each chunk's
/// high-level summaries, normalised to sum to 1.
pub fn score_attention(engine: &Engine, task: &TaskQuery, high: &[CompressedKv], m: usize) -> Result<RelevanceScores> {
    if task.text_tokens.is_empty() {
        return Err(config("attention oracle needs task text tokens"));
    }
    let mut by_chunk: Vec<Option<&CompressedKv>> = vec![None; m];
    for c in high {
        match by_chunk.get_mut(c.chunk_index) {
            Some(slot @ None) => *slot = Some(c),
            Some(Some(_)) => return Err(integrity(format!("chunk {} supplied twice", c.chunk_index))),
            None => return Err(integrity(format!("chunk {} outside 0..{m}", c.chunk_index))),
        }
    }
    let mut ordered = Vec::with_capacity(m);
    let mut owner = Vec::new();
    for (i, c) in by_chunk.iter().enumerate() {
        let c = c.ok_or_else(|| integrity(format!("missing high-level cache for chunk {i}")))?;
        ordered.push(c);
        owner.extend(std::iter::repeat_n(i, c.len()));
    }
    let ctx = concat_contiguous(engine, &ordered)?;
    let tokens = engine.place_after(&ctx, task.text_tokens.clone());
    let weights = engine.attention_profile(&tokens, &ctx)?;
    let mut scores = vec![0.0f64; m];
    for (w, &i) in weights.iter().zip(&owner) {
        scores[i] += *w as f64;
    }
    let sum: f64 = scores.iter().sum();
    if sum > 0.0 {
        scores.iter_mut().for_each(|s| *s /= sum);
    }
    RelevanceScores::new(scores, "attention")
}

/// Scores that induce a fixed heuristic selection.
pub fn score_baseline(kind: Baseline, m: usize, k: usize) -> RelevanceScores {
    let (scores, name) = match kind {
        Baseline::Random { seed } => {
            let mut ranks: Vec<usize> = (0..m).collect();
            ranks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            (ranks.into_iter().map(|r| r as f64).collect(), "random")
        }
        Baseline::LastN => ((0..m).map(|i| i as f64).collect(), "lastn"),
        Baseline::UniformStride => {
            let mut s = vec![0.0; m];
            if k > 0 && m > 0 {
                let stride = (m / k).max(1);
                for i in (0..m).step_by(stride).take(k) {
                    s[i] = 1.0;
                }
            }
            (s, "uniform")
        }
    };
    RelevanceScores { scores, oracle: name.into() }
}

/// Whatever an oracle may consume for one instance.
#[derive(Debug, Clone, Copy)]
pub struct OracleInputs<'a> {
    pub engine: &'a Engine,
    pub task: &'a TaskQuery,
    /// Frame embeddings grouped per chunk (cosine oracle).
    pub chunk_frames: Option<&'a [Vec<Vec<f32>>]>,
    /// High-level caches of every chunk (attention oracle).
    pub high: Option<&'a [CompressedKv]>,
    /// Seed of the random baseline.
    pub seed: u64,
}

/// Scores `m` chunks with the named oracle.
pub fn score(kind: OracleKind, inputs: OracleInputs<'_>, m: usize, k: usize) -> Result<RelevanceScores> {
    match kind {
        OracleKind::Cosine => {
            let q = inputs.task.embedding.as_deref().ok_or_else(|| config("cosine oracle needs a query embedding"))?;
            let frames = inputs.chunk_frames.ok_or_else(|| config("cosine oracle needs frame embeddings"))?;
            if frames.len() != m {
                return Err(dimension(format!("frame embeddings cover {} of {m} chunks", frames.len())));
            }
            score_cosine(q, frames)
        }
        OracleKind::Attention => {
            let high = inputs.high.ok_or_else(|| integrity("attention oracle needs high-level caches"))?;
            score_attention(inputs.engine, inputs.task, high, m)
        }
        OracleKind::Random => Ok(score_baseline(Baseline::Random { seed: inputs.seed }, m, k)),
        OracleKind::LastN => Ok(score_baseline(Baseline::LastN, m, k)),
        OracleKind::Uniform => Ok(score_baseline(Baseline::UniformStride, m, k)),
    }
}

/// Indices of the `k` highest scores, ties to the smaller index, returned
/// in ascending order. `k > m` is clamped.
pub fn select_topk(scores: &RelevanceScores, k: usize) -> Vec<usize> {
    let m = scores.len();
    if k > m {
        tracing::warn!(k, m, "top-k larger than chunk count, clamping");
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores.scores[b].total_cmp(&scores.scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(m));
    order.sort_unstable();
    order
}

/// Concatenates caches in chunk order with contiguous positions.
pub(crate) fn concat_contiguous(engine: &Engine, caches: &[&CompressedKv]) -> Result<KvSeq> {
    let mut ctx = engine.empty_kv();
    for c in caches {
        ctx.extend(&c.kv)?;
    }
    let n = ctx.len();
    ctx.set_positions((0..n).collect())?;
    Ok(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rs(v: &[f64]) -> RelevanceScores {
        RelevanceScores::new(v.to_vec(), "t").unwrap()
    }

    #[test]
    fn topk_examples() {
        assert_eq!(select_topk(&rs(&[0.2, 0.9, 0.5]), 1), vec![1]);
        assert_eq!(select_topk(&rs(&[0.5, 0.9, 0.5]), 2), vec![0, 1]);
        assert_eq!(select_topk(&rs(&[0.5, 0.9]), 5), vec![0, 1]);
        assert!(select_topk(&rs(&[0.5, 0.9]), 0).is_empty());
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(select_topk(&score_baseline(Baseline::LastN, 13, 3), 3), vec![10, 11, 12]);
        assert_eq!(select_topk(&score_baseline(Baseline::UniformStride, 12, 3), 3), vec![0, 4, 8]);
        assert_eq!(select_topk(&score_baseline(Baseline::UniformStride, 13, 3), 3), vec![0, 4, 8]);
        let a = select_topk(&score_baseline(Baseline::Random { seed: 7 }, 20, 4), 4);
        let b = select_topk(&score_baseline(Baseline::Random { seed: 7 }, 20, 4), 4);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn cosine_examples() {
        let q = vec![1.0, 0.0, 0.0];
        let frames = vec![
            vec![vec![0.0, 1.0, 0.0]],
            vec![q.clone(), q.clone()],
            vec![vec![0.0, 0.0, 2.0], vec![0.0; 3]],
        ];
        let s = score_cosine(&q, &frames).unwrap();
        assert_eq!(s.scores, vec![0.0, 1.0, 0.0]);
        assert!(score_cosine(&q, &[vec![vec![1.0]]]).is_err());
    }

    #[test]
    fn attention_scores_follow_kv_counts_under_averaging() {
        use crate::chunking::{partition_widths, VideoTokens};
        use crate::compressor::compress_level;
        use crate::compressor::Level;
        use crate::engine::{EngineConfig, EngineMode};
        let e = Engine::new(EngineConfig::new(2, 2, 4, 8, 1, EngineMode::Averaging)).unwrap();
        let v = VideoTokens::new(8, 1, (0..40 * 8).map(|i| (i % 7) as f32 - 3.0).collect()).unwrap();
        let chunks = partition_widths(40, &[8, 16, 16], 1).unwrap();
        let high = compress_level(&e, &v, &chunks, 4, Level::High).unwrap();
        let task = TaskQuery { text_tokens: vec![vec![0.3; 8], vec![-1.0; 8]], ..Default::default() };
        let s = score_attention(&e, &task, &high, 3).unwrap();
        for (got, want) in s.scores.iter().zip([0.2, 0.4, 0.4]) {
            assert!((got - want).abs() < 1e-5, "{:?}", s.scores);
        }
        let single = score_attention(&e, &task, &high[..1], 1).unwrap();
        assert!((single.scores[0] - 1.0).abs() < 1e-9);
        assert!(matches!(score_attention(&e, &task, &high[..2], 3), Err(crate::Error::Integrity(_))));
    }

    proptest! {
        #[test]
        fn topk_nesting(v in prop::collection::vec(0u8..6, 1..30)) {
            let s = rs(&v.iter().map(|&x| x as f64).collect::<Vec<_>>());
            for k in 0..v.len() {
                let a = select_topk(&s, k);
                let b = select_topk(&s, k + 1);
                prop_assert!(a.iter().all(|i| b.contains(i)));
            }
        }
    }
}
