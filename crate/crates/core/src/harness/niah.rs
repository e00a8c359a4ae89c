//! Synthetic needle-in-a-haystack generation and evaluation.
//!
//! The haystack is i.i.d. Gaussian noise. One chunk is filled with copies of
//! the embedding of a vocabulary token, the needle; the question is answered
//! correctly when the first decoded token is that vocabulary index.

use std::collections::HashMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunking::{ChunkSpec, VideoTokens};
use crate::compressor::{compress_level, CompressedKv, Level};
use crate::engine::{Engine, EngineConfig, EngineMode};
use crate::error::{config, Result};
use crate::hybrid::{build_plan, decode_answer, merge_hybrid, PositionMode};
use crate::oracle::{group_frames, score, OracleInputs, OracleKind, RelevanceScores, TaskQuery};

/// Engine used for NIAH runs: two layers of uniform averaging over a
/// 16-dimensional space with 12 orthonormal vocabulary rows.
pub fn niah_engine_config(seed: u64) -> EngineConfig {
    EngineConfig::new(2, 2, 8, 12, seed, EngineMode::Averaging)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahParams {
    /// Haystack length in tokens.
    pub length: usize,
    /// Needle depth in `[0, 1]`: 0 is the first chunk, 1 the last.
    pub depth: f64,
    pub tokens_per_frame: usize,
    pub frames_per_chunk: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl NiahParams {
    pub fn new(length: usize, depth: f64, noise_scale: f64, seed: u64) -> Self {
        Self { length, depth, tokens_per_frame: 64, frames_per_chunk: 1, noise_scale, seed }
    }
}

#[derive(Debug, Clone)]
pub struct NiahInstance {
    pub n_chunks: usize,
    pub needle_chunk_index: usize,
    pub needle_id: usize,
    pub tokens: VideoTokens,
    pub chunks: Vec<ChunkSpec>,
    pub query: TaskQuery,
    pub seed: u64,
    pub noise_scale: f64,
}

impl NiahInstance {
    /// Frame-mean embeddings grouped per chunk, the cosine oracle's input.
    pub fn chunk_frames(&self) -> Result<Vec<Vec<Vec<f32>>>> {
        group_frames(&self.tokens.frame_means(), &self.chunks)
    }
}

pub fn gen_niah(engine: &Engine, p: &NiahParams) -> Result<NiahInstance> {
    if p.length == 0 || p.tokens_per_frame == 0 || p.frames_per_chunk == 0 {
        return Err(config("haystack length, tokens per frame and frames per chunk must be positive"));
    }
    if !(0.0..=1.0).contains(&p.depth) {
        return Err(config(format!("needle depth {} outside [0, 1]", p.depth)));
    }
    if !(p.noise_scale >= 0.0 && p.noise_scale.is_finite()) {
        return Err(config(format!("noise scale {} must be a nonnegative number", p.noise_scale)));
    }
    let d = engine.dim();
    let chunks = crate::chunking::partition(p.length, p.frames_per_chunk, p.tokens_per_frame)?;
    let m = chunks.len();
    let needle_chunk_index = (p.depth * (m - 1) as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let needle_id = rng.gen_range(0..engine.config().vocab);
    let needle = engine.token_embedding(needle_id).to_vec();
    let noise = Normal::new(0.0, p.noise_scale).expect("checked scale");
    let mut data = Vec::with_capacity(p.length * d);
    for c in &chunks {
        if c.index == needle_chunk_index {
            for _ in 0..c.width {
                data.extend_from_slice(&needle);
            }
        } else {
            data.extend((0..c.width * d).map(|_| noise.sample(&mut rng) as f32));
        }
    }
    let tokens = VideoTokens::new(d, p.tokens_per_frame, data)?;
    let query = TaskQuery {
        text_tokens: vec![engine.vocab_orthogonal_vector(p.seed ^ 0x9e37_79b9_7f4a_7c15)],
        embedding: Some(needle),
        prompt: "which token is hidden in the haystack?".into(),
    };
    Ok(NiahInstance {
        n_chunks: m,
        needle_chunk_index,
        needle_id,
        tokens,
        chunks,
        query,
        seed: p.seed,
        noise_scale: p.noise_scale,
    })
}

/// One retrieval pipeline evaluated on every instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahPipeline {
    pub label: String,
    pub alpha_low: u32,
    pub alpha_high: u32,
    pub k: usize,
    pub oracle: OracleKind,
}

impl NiahPipeline {
    pub fn hybrid(alpha_low: u32, alpha_high: u32, k: usize, oracle: OracleKind) -> Self {
        Self { label: format!("{alpha_low}x/{alpha_high}x k={k} {oracle:?}").to_lowercase(), alpha_low, alpha_high, k, oracle }
    }

    /// Every chunk at one ratio.
    pub fn uniform(alpha: u32) -> Self {
        Self { label: format!("uniform {alpha}x"), alpha_low: alpha, alpha_high: alpha, k: 0, oracle: OracleKind::LastN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahGrid {
    pub lengths: Vec<usize>,
    /// Depths as fractions in `[0, 1]`.
    pub depths: Vec<f64>,
    pub trials: usize,
    pub noise_scale: f64,
    /// Standard deviation of Gaussian noise added to oracle scores.
    pub oracle_noise: f64,
    pub tokens_per_frame: usize,
    pub frames_per_chunk: usize,
    pub seed: u64,
}

impl NiahGrid {
    pub fn new(lengths: Vec<usize>, depths: Vec<f64>, trials: usize, noise_scale: f64, seed: u64) -> Self {
        Self { lengths, depths, trials, noise_scale, oracle_noise: 0.0, tokens_per_frame: 64, frames_per_chunk: 1, seed }
    }

    fn params(&self, li: usize, di: usize, trial: usize) -> NiahParams {
        let mut h = FnvHasher::default();
        for x in [self.seed, li as u64, di as u64, trial as u64] {
            h.write_u64(x);
        }
        NiahParams {
            length: self.lengths[li],
            depth: self.depths[di],
            tokens_per_frame: self.tokens_per_frame,
            frames_per_chunk: self.frames_per_chunk,
            noise_scale: self.noise_scale,
            seed: h.finish(),
        }
    }
}

/// Accuracy per `(depth, length)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub label: String,
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    /// `cells[depth][length]`; empty when no trials ran.
    pub cells: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn mean(&self) -> f64 {
        let n: usize = self.cells.iter().map(Vec::len).sum();
        if n == 0 {
            return f64::NAN;
        }
        self.cells.iter().flatten().sum::<f64>() / n as f64
    }

    pub fn min(&self) -> f64 {
        self.cells.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Compressions of one instance, memoised by ratio. Both passes at the same
/// ratio are identical up to their level tag.
struct Compressions<'a> {
    engine: &'a Engine,
    inst: &'a NiahInstance,
    by_ratio: HashMap<u32, Vec<CompressedKv>>,
}

impl Compressions<'_> {
    fn get(&mut self, ratio: u32) -> Result<&[CompressedKv]> {
        if !self.by_ratio.contains_key(&ratio) {
            let c = compress_level(self.engine, &self.inst.tokens, &self.inst.chunks, ratio, Level::Low)?;
            self.by_ratio.insert(ratio, c);
        }
        Ok(&self.by_ratio[&ratio])
    }

    fn at(&mut self, ratio: u32, level: Level, chunk: usize) -> Result<CompressedKv> {
        let mut c = self.get(ratio)?[chunk].clone();
        c.level = level;
        Ok(c)
    }
}

fn perturb(scores: RelevanceScores, sigma: f64, seed: u64) -> RelevanceScores {
    if sigma == 0.0 {
        return scores;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores_out = scores
        .scores
        .iter()
        .map(|s| s + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    RelevanceScores { scores: scores_out, oracle: scores.oracle }
}

/// Answers one instance with each pipeline; `true` where the first decoded
/// token is the needle.
pub fn answer_instance(
    engine: &Engine,
    inst: &NiahInstance,
    pipelines: &[NiahPipeline],
    oracle_noise: f64,
) -> Result<Vec<bool>> {
    let m = inst.n_chunks;
    let frames = inst.chunk_frames()?;
    let mut comp = Compressions { engine, inst, by_ratio: HashMap::new() };
    let mut out = Vec::with_capacity(pipelines.len());
    for p in pipelines {
        let high: Vec<CompressedKv> = if p.oracle == OracleKind::Attention {
            comp.get(p.alpha_high)?.iter().map(|c| CompressedKv { level: Level::High, ..c.clone() }).collect()
        } else {
            Vec::new()
        };
        let inputs = OracleInputs {
            engine,
            task: &inst.query,
            chunk_frames: Some(&frames),
            high: Some(&high),
            seed: inst.seed,
        };
        let scores = perturb(score(p.oracle, inputs, m, p.k)?, oracle_noise, inst.seed.rotate_left(17));
        let plan = build_plan(&scores, p.k);
        let caches = (0..m)
            .map(|i| match plan.level_of(i) {
                Level::Low => comp.at(p.alpha_low, Level::Low, i),
                _ => comp.at(p.alpha_high, Level::High, i),
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&CompressedKv> = caches.iter().collect();
        let ctx = merge_hybrid(&refs, &plan, PositionMode::Contiguous)?;
        let answer = decode_answer(engine, &ctx, &inst.query.text_tokens, 1)?;
        out.push(answer[0] == inst.needle_id);
    }
    Ok(out)
}

/// Accuracy matrices, one per pipeline, over the grid. Every pipeline sees
/// the same instances.
pub fn eval_niah(engine: &Engine, grid: &NiahGrid, pipelines: &[NiahPipeline]) -> Result<Vec<AccuracyMatrix>> {
    if grid.lengths.is_empty() || grid.depths.is_empty() {
        return Err(config("NIAH grid needs at least one length and one depth"));
    }
    let mut matrices: Vec<AccuracyMatrix> = pipelines
        .iter()
        .map(|p| AccuracyMatrix {
            label: p.label.clone(),
            lengths: grid.lengths.clone(),
            depths: grid.depths.clone(),
            cells: Vec::new(),
        })
        .collect();
    if grid.trials == 0 {
        return Ok(matrices);
    }
    for m in &mut matrices {
        m.cells = vec![vec![0.0; grid.lengths.len()]; grid.depths.len()];
    }
    let cells: Vec<(usize, usize)> =
        (0..grid.depths.len()).flat_map(|di| (0..grid.lengths.len()).map(move |li| (di, li))).collect();
    let hits: Vec<Vec<usize>> = cells
        .par_iter()
        .map(|&(di, li)| {
            let mut hits = vec![0usize; pipelines.len()];
            for t in 0..grid.trials {
                let inst = gen_niah(engine, &grid.params(li, di, t))?;
                for (h, ok) in hits.iter_mut().zip(answer_instance(engine, &inst, pipelines, grid.oracle_noise)?) {
                    *h += ok as usize;
                }
            }
            Ok(hits)
        })
        .collect::<Result<_>>()?;
    for (&(di, li), h) in cells.iter().zip(hits) {
        for (m, hit) in matrices.iter_mut().zip(h) {
            m.cells[di][li] = hit as f64 / grid.trials as f64;
        }
    }
    Ok(matrices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> Engine {
        Engine::new(niah_engine_config(11)).unwrap()
    }

    #[test]
    fn single_chunk_needle_is_recovered() {
        let e = engine();
        for seed in 0..5 {
            let inst = gen_niah(&e, &NiahParams::new(64, 0.0, 0.5, seed)).unwrap();
            assert_eq!(inst.n_chunks, 1);
            let ok = answer_instance(&e, &inst, &[NiahPipeline::hybrid(2, 32, 1, OracleKind::Cosine)], 0.0).unwrap();
            assert_eq!(ok, vec![true]);
        }
    }

    #[test]
    fn same_seed_same_tokens() {
        let e = engine();
        let a = gen_niah(&e, &NiahParams::new(256, 0.5, 0.5, 3)).unwrap();
        let b = gen_niah(&e, &NiahParams::new(256, 0.5, 0.5, 3)).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.needle_id, b.needle_id);
        assert_eq!(a.needle_chunk_index, 2);
    }

    #[test]
    fn zero_noise_haystack_is_zero_and_needle_scores_one() {
        let e = engine();
        let inst = gen_niah(&e, &NiahParams::new(320, 1.0, 0.0, 9)).unwrap();
        assert_eq!(inst.needle_chunk_index, 4);
        assert!(inst.tokens.as_slice()[..4 * 64 * e.dim()].iter().all(|&x| x == 0.0));
        let s = crate::oracle::score_cosine(inst.query.embedding.as_deref().unwrap(), &inst.chunk_frames().unwrap())
            .unwrap();
        assert!((s.scores[4] - 1.0).abs() < 1e-6);
        assert!(s.scores[..4].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn needle_is_unit_norm_and_query_matches_it() {
        let e = engine();
        let inst = gen_niah(&e, &NiahParams::new(128, 0.0, 0.5, 1)).unwrap();
        let q = inst.query.embedding.clone().unwrap();
        let norm: f32 = q.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert_eq!(inst.tokens.token(0), &q[..]);
    }

    #[test]
    fn zero_trials_give_empty_matrices() {
        let e = engine();
        let grid = NiahGrid::new(vec![128], vec![0.0, 1.0], 0, 0.5, 1);
        let m = eval_niah(&e, &grid, &[NiahPipeline::uniform(32)]).unwrap();
        assert!(m[0].cells.is_empty());
    }

    #[test]
    fn small_grid_is_reproducible_and_hybrid_dominates() {
        let e = engine();
        let grid = NiahGrid::new(vec![128, 512], vec![0.0, 0.5, 1.0], 6, 0.5, 42);
        let pipes = [NiahPipeline::hybrid(2, 32, 1, OracleKind::Cosine), NiahPipeline::uniform(32)];
        let a = eval_niah(&e, &grid, &pipes).unwrap();
        assert_eq!(a, eval_niah(&e, &grid, &pipes).unwrap());
        for (row_h, row_u) in a[0].cells.iter().zip(&a[1].cells) {
            for (h, u) in row_h.iter().zip(row_u) {
                assert!(h >= u);
            }
        }
        assert_eq!(a[0].min(), 1.0);
    }
}
