//! Time-to-first-token and cache-size benchmarks.
//!
//! A [`BenchFixture`] holds one synthetic context and its uncompressed
//! baseline in a cold store. Each compression config is prepared once
//! ([`Prepared`]); a measurement then times reload from the cold store,
//! merge, task prefill and the first greedy token.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chunking::{ChunkSpec, VideoTokens};
use crate::compressor::{compress_bilevel, prefill_uncompressed, CompressedKv, CompressionConfig, Level};
use crate::engine::{Engine, EngineConfig, EngineMode};
use crate::error::{config, Error, Result};
use crate::hybrid::{merge, DecodeSession, PositionMode, ReloadPlan};
use crate::kvstore::{measure_reduction, ColdStore, KvStore};
use crate::oracle::{group_frames, score, OracleInputs, OracleKind, TaskQuery};

/// Engine used by the benchmarks.
pub fn bench_engine_config(seed: u64) -> EngineConfig {
    EngineConfig::new(2, 4, 8, 64, seed, EngineMode::SeededRandom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSetup {
    pub n: usize,
    pub tokens_per_frame: usize,
    pub frames_per_chunk: usize,
    pub task_tokens: usize,
    /// Tokens decoded after the first one to measure decode throughput.
    pub decode_tokens: usize,
    /// Upper bound on the uncompressed KV bytes of the context.
    pub memory_budget: usize,
    pub seed: u64,
}

impl Default for BenchSetup {
    fn default() -> Self {
        Self {
            n: 16384,
            tokens_per_frame: 4,
            frames_per_chunk: 10,
            task_tokens: 8,
            decode_tokens: 8,
            memory_budget: 1 << 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub label: String,
    pub alpha_low: u32,
    pub alpha_high: u32,
    pub k: usize,
    pub oracle: String,
    pub n: usize,
    pub m: usize,
    pub ttft_ms: f64,
    pub baseline_ttft_ms: f64,
    pub speedup: f64,
    pub decode_tok_per_s: f64,
    pub reduction_pct: f64,
    pub niah_accuracy: Option<f64>,
}

pub struct BenchFixture {
    pub engine: Engine,
    pub setup: BenchSetup,
    pub tokens: VideoTokens,
    pub chunks: Vec<ChunkSpec>,
    pub task: TaskQuery,
    pub chunk_frames: Vec<Vec<Vec<f32>>>,
    baseline: KvStore,
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
}

/// Caches of one compression config, offloaded to their own cold store.
pub struct Prepared {
    pub cfg: CompressionConfig,
    pub store: KvStore,
    pub high: Vec<CompressedKv>,
}

fn synthetic_tokens(dim: usize, setup: &BenchSetup) -> Result<VideoTokens> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let data = (0..setup.n * dim).map(|_| <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng)).collect();
    VideoTokens::new(dim, setup.tokens_per_frame, data)
}

impl BenchFixture {
    /// Builds the context and its uncompressed baseline under `root`, or
    /// under a fresh temporary directory when `root` is `None`.
    pub fn new(engine_cfg: EngineConfig, setup: BenchSetup, root: Option<&Path>) -> Result<Self> {
        let full_bytes = setup.n * engine_cfg.layers * engine_cfg.embed_dim * 2 * 4;
        if full_bytes > setup.memory_budget {
            return Err(Error::Resource(format!(
                "a {}-token context needs {full_bytes} KV bytes, over the memory budget of {} bytes",
                setup.n, setup.memory_budget
            )));
        }
        let engine = Engine::new(engine_cfg)?;
        let (root, tmp) = match root {
            Some(p) => (p.to_path_buf(), None),
            None => {
                let t = tempfile::tempdir()?;
                (t.path().to_path_buf(), Some(t))
            }
        };
        let tokens = synthetic_tokens(engine.dim(), &setup)?;
        let chunks = tokens.partition(setup.frames_per_chunk)?;
        let mut rng = ChaCha8Rng::seed_from_u64(setup.seed ^ 0x5eed);
        let vocab = engine.config().vocab;
        let text_tokens = (0..setup.task_tokens.max(1))
            .map(|_| engine.token_embedding(rng.gen_range(0..vocab)).to_vec())
            .collect();
        let embedding = (0..engine.dim()).map(|_| rng.gen::<f32>() - 0.5).collect();
        let task = TaskQuery { text_tokens, embedding: Some(embedding), prompt: "describe the scene".into() };
        let chunk_frames = group_frames(&tokens.frame_means(), &chunks)?;
        let full = prefill_uncompressed(&engine, &tokens, &chunks)?;
        let mut baseline = KvStore::new(ColdStore::create(root.join("full"), engine.config())?);
        baseline.offload(&full)?;
        Ok(Self { engine, setup, tokens, chunks, task, chunk_frames, baseline, root, _tmp: tmp })
    }

    pub fn m(&self) -> usize {
        self.chunks.len()
    }

    pub fn prepare(&self, cfg: CompressionConfig) -> Result<Prepared> {
        let b = compress_bilevel(&self.engine, &self.tokens, &self.chunks, &cfg)?;
        let dir = self.root.join(format!("a{}_{}", cfg.alpha_low, cfg.alpha_high));
        let mut store = KvStore::new(ColdStore::create(dir, self.engine.config())?);
        store.offload(&b.low)?;
        store.offload(&b.high)?;
        Ok(Prepared { cfg, store, high: b.high })
    }

    pub fn plan(&self, prepared: &Prepared, oracle: OracleKind, k: usize) -> Result<ReloadPlan> {
        let inputs = OracleInputs {
            engine: &self.engine,
            task: &self.task,
            chunk_frames: Some(&self.chunk_frames),
            high: Some(&prepared.high),
            seed: self.setup.seed,
        };
        Ok(crate::hybrid::build_plan(&score(oracle, inputs, self.m(), k)?, k))
    }

    /// One timed run: reload, merge, task prefill and the first token.
    fn time_first_token(&self, store: &mut KvStore, wanted: &[(usize, Level)]) -> Result<(Duration, f64)> {
        let t = Instant::now();
        let hot = store.reload_levels(wanted)?;
        let caches: Vec<&CompressedKv> = hot.caches().collect();
        let ctx = merge(&caches, PositionMode::Contiguous)?;
        let mut session = DecodeSession::start(&self.engine, &ctx, &self.task.text_tokens)?;
        session.step()?;
        let ttft = t.elapsed();
        let reduction = measure_reduction(hot).reduction_pct;
        Ok((ttft, reduction))
    }

    fn decode_rate(&self, store: &mut KvStore, wanted: &[(usize, Level)]) -> Result<f64> {
        if self.setup.decode_tokens == 0 {
            return Ok(0.0);
        }
        let hot = store.reload_levels(wanted)?;
        let caches: Vec<&CompressedKv> = hot.caches().collect();
        let ctx = merge(&caches, PositionMode::Contiguous)?;
        let mut session = DecodeSession::start(&self.engine, &ctx, &self.task.text_tokens)?;
        session.step()?;
        let t = Instant::now();
        for _ in 0..self.setup.decode_tokens {
            session.step()?;
        }
        Ok(self.setup.decode_tokens as f64 / t.elapsed().as_secs_f64())
    }

    fn median_ttft(&self, store: &mut KvStore, wanted: &[(usize, Level)], reps: usize) -> Result<(f64, f64)> {
        for _ in 0..2 {
            self.time_first_token(store, wanted)?;
        }
        let mut times = Vec::with_capacity(reps);
        let mut reduction = 0.0;
        for _ in 0..reps {
            let (t, r) = self.time_first_token(store, wanted)?;
            times.push(t.as_secs_f64() * 1e3);
            reduction = r;
        }
        Ok((median(&mut times), reduction))
    }

    /// Median TTFT of the uncompressed context.
    pub fn baseline_ttft_ms(&mut self, reps: usize) -> Result<f64> {
        let wanted: Vec<(usize, Level)> = (0..self.m()).map(|i| (i, Level::Full)).collect();
        let mut store = std::mem::replace(&mut self.baseline, KvStore::new(ColdStore::create(self.root.join("full"), self.engine.config())?));
        let r = self.median_ttft(&mut store, &wanted, reps);
        self.baseline = store;
        Ok(r?.0)
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Measures one plan against the uncompressed baseline in the same run.
pub fn bench_config(
    fixture: &mut BenchFixture,
    prepared: &mut Prepared,
    plan: &ReloadPlan,
    label: &str,
    reps: usize,
) -> Result<BenchRecord> {
    if reps < 3 {
        return Err(config(format!("need at least 3 repetitions, got {reps}")));
    }
    let baseline = fixture.baseline_ttft_ms(reps)?;
    let wanted: Vec<(usize, Level)> =
        (0..fixture.m()).map(|i| (i, plan.level_of(i))).collect();
    let (ttft, reduction) = fixture.median_ttft(&mut prepared.store, &wanted, reps)?;
    let rate = fixture.decode_rate(&mut prepared.store, &wanted)?;
    Ok(BenchRecord {
        label: label.to_string(),
        alpha_low: prepared.cfg.alpha_low,
        alpha_high: prepared.cfg.alpha_high,
        k: plan.k,
        oracle: plan.oracle.clone(),
        n: fixture.tokens.len(),
        m: fixture.m(),
        ttft_ms: ttft,
        baseline_ttft_ms: baseline,
        speedup: baseline / ttft,
        decode_tok_per_s: rate,
        reduction_pct: reduction,
        niah_accuracy: None,
    })
}
