//! Two-pass bi-level compression.
//!
//! Each chunk is encoded with summary tokens interleaved, attending over the
//! summary KVs of all earlier chunks of the same pass. Only the summary
//! tokens' KV entries are kept; regular-token KVs are dropped as soon as the
//! chunk is done.

use serde::{Deserialize, Serialize};

use crate::chunking::{interleave, layout_summaries, summary_count, ChunkSpec, SummaryLayout, VideoTokens};
use crate::engine::{next_position, Engine, KvSeq, TokenEmbedding};
use crate::error::{config, precondition, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    /// Low compression ratio, fine-grained.
    Low,
    /// High compression ratio, abstract.
    High,
    /// Uncompressed regular-token KVs (the no-compression baseline).
    Full,
}

impl Level {
    pub fn code(self) -> u8 {
        match self {
            Level::Low => 0,
            Level::High => 1,
            Level::Full => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Level> {
        match code {
            0 => Some(Level::Low),
            1 => Some(Level::High),
            2 => Some(Level::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub alpha_low: u32,
    pub alpha_high: u32,
    /// Permits `alpha_low == alpha_high`, the single-level degenerate case.
    pub allow_equal: bool,
}

impl CompressionConfig {
    pub fn new(alpha_low: u32, alpha_high: u32) -> Self {
        Self { alpha_low, alpha_high, allow_equal: alpha_low == alpha_high }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_low == 0 {
            return Err(config("alpha_low must be at least 1"));
        }
        if self.alpha_low > self.alpha_high || (self.alpha_low == self.alpha_high && !self.allow_equal) {
            return Err(config(format!(
                "need alpha_low < alpha_high, got {} and {}",
                self.alpha_low, self.alpha_high
            )));
        }
        Ok(())
    }

    pub fn ratio(&self, level: Level) -> u32 {
        match level {
            Level::Low => self.alpha_low,
            Level::High => self.alpha_high,
            Level::Full => 1,
        }
    }
}

/// Compressed KV entries of one chunk at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedKv {
    pub chunk_index: usize,
    pub level: Level,
    pub ratio: u32,
    pub source_start: usize,
    pub source_width: usize,
    /// Entries carry their prefill-time positions.
    pub kv: KvSeq,
}

impl CompressedKv {
    pub fn len(&self) -> usize {
        self.kv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kv.is_empty()
    }

    /// Token offset in the original sequence that each entry follows.
    pub fn source_anchors(&self) -> Vec<usize> {
        match self.level {
            Level::Full => (self.source_start + 1..=self.source_start + self.source_width).collect(),
            _ => {
                let chunk = ChunkSpec {
                    index: self.chunk_index,
                    start: self.source_start,
                    width: self.source_width,
                    frame_span: (0, 0),
                };
                layout_summaries(&chunk, self.ratio)
                    .map(|l| l.insert_offsets.iter().map(|o| self.source_start + o).collect())
                    .unwrap_or_default()
            }
        }
    }

    pub fn expected_len(&self) -> usize {
        match self.level {
            Level::Full => self.source_width,
            _ => summary_count(self.source_width, self.ratio),
        }
    }
}

/// Low- and high-level compression results, one entry per chunk each.
#[derive(Debug, Clone, PartialEq)]
pub struct Bilevel {
    pub low: Vec<CompressedKv>,
    pub high: Vec<CompressedKv>,
}

fn concat_prior(engine: &Engine, prior: &[CompressedKv]) -> Result<KvSeq> {
    let total = prior.iter().map(|c| c.len()).sum();
    let mut ctx = KvSeq::with_capacity(engine.config().layers, engine.dim(), total);
    for c in prior {
        ctx.extend(&c.kv)?;
    }
    Ok(ctx)
}

fn check_prior(prior: &[CompressedKv], chunk_index: usize, level: Level) -> Result<()> {
    if prior.len() != chunk_index {
        return Err(precondition(format!(
            "chunk {chunk_index} needs {chunk_index} prior summaries, got {}",
            prior.len()
        )));
    }
    for (i, c) in prior.iter().enumerate() {
        if c.chunk_index != i {
            return Err(precondition(format!("prior summary {i} belongs to chunk {}", c.chunk_index)));
        }
        if c.level != level {
            return Err(precondition(format!("prior summary {i} is {:?}, pass is {level:?}", c.level)));
        }
    }
    Ok(())
}

/// Compression attention over one interleaved chunk.
///
/// `prior` must hold the same-level results of chunks `0..chunk.index` in
/// order; their KVs form the visible prefix.
pub fn prefill_chunk(
    engine: &Engine,
    layout: &SummaryLayout,
    chunk_tokens: &[f32],
    prior: &[CompressedKv],
    level: Level,
) -> Result<CompressedKv> {
    check_prior(prior, layout.chunk.index, level)?;
    let ctx = concat_prior(engine, prior)?;
    compress_with_context(engine, layout, chunk_tokens, &ctx, level)
}

fn compress_with_context(
    engine: &Engine,
    layout: &SummaryLayout,
    chunk_tokens: &[f32],
    ctx: &KvSeq,
    level: Level,
) -> Result<CompressedKv> {
    let chunk = interleave(chunk_tokens, layout, engine.summary_placeholder())?;
    let shifted: Vec<TokenEmbedding> = chunk.shifted(next_position(ctx));
    let kv = engine.forward_prefill_kv(&shifted, ctx)?;
    Ok(CompressedKv {
        chunk_index: layout.chunk.index,
        level,
        ratio: layout.ratio,
        source_start: layout.chunk.start,
        source_width: layout.chunk.width,
        kv: kv.select(&chunk.summary_slots),
    })
}

fn check_chunks(tokens: &VideoTokens, chunks: &[ChunkSpec]) -> Result<()> {
    if chunks.is_empty() {
        return Err(precondition("no chunks to compress"));
    }
    let mut expect = 0;
    for (i, c) in chunks.iter().enumerate() {
        if c.index != i || c.start != expect || c.width == 0 {
            return Err(precondition(format!("chunk {i} is not contiguous with its predecessor")));
        }
        expect = c.end();
    }
    if expect != tokens.len() {
        return Err(precondition(format!("chunks cover {expect} of {} tokens", tokens.len())));
    }
    Ok(())
}

/// One compression pass at a single ratio; chunks run strictly in order.
pub fn compress_level(
    engine: &Engine,
    tokens: &VideoTokens,
    chunks: &[ChunkSpec],
    ratio: u32,
    level: Level,
) -> Result<Vec<CompressedKv>> {
    check_chunks(tokens, chunks)?;
    let mut out: Vec<CompressedKv> = Vec::with_capacity(chunks.len());
    let mut ctx = engine.empty_kv();
    for chunk in chunks {
        let layout = layout_summaries(chunk, ratio)?;
        let c = compress_with_context(engine, &layout, tokens.chunk_slice(chunk), &ctx, level)?;
        ctx.extend(&c.kv)?;
        out.push(c);
    }
    Ok(out)
}

/// Runs the low and high passes independently (concurrently when a second
/// worker is available).
pub fn compress_bilevel(
    engine: &Engine,
    tokens: &VideoTokens,
    chunks: &[ChunkSpec],
    cfg: &CompressionConfig,
) -> Result<Bilevel> {
    cfg.validate()?;
    let (low, high) = rayon::join(
        || compress_level(engine, tokens, chunks, cfg.alpha_low, Level::Low),
        || compress_level(engine, tokens, chunks, cfg.alpha_high, Level::High),
    );
    Ok(Bilevel { low: low?, high: high? })
}

/// Uncompressed KVs of every regular token, grouped per chunk. Each chunk
/// attends over all earlier regular tokens.
pub fn prefill_uncompressed(engine: &Engine, tokens: &VideoTokens, chunks: &[ChunkSpec]) -> Result<Vec<CompressedKv>> {
    check_chunks(tokens, chunks)?;
    let mut out = Vec::with_capacity(chunks.len());
    let mut ctx = engine.empty_kv();
    for chunk in chunks {
        let vecs = tokens.chunk_slice(chunk).chunks_exact(tokens.dim()).map(<[f32]>::to_vec).collect();
        let placed = engine.place_after(&ctx, vecs);
        let kv = engine.forward_prefill_kv(&placed, &ctx)?;
        ctx.extend(&kv)?;
        out.push(CompressedKv {
            chunk_index: chunk.index,
            level: Level::Full,
            ratio: 1,
            source_start: chunk.start,
            source_width: chunk.width,
            kv,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunking::partition;
    use crate::engine::{EngineConfig, EngineMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn engine(mode: EngineMode) -> Engine {
        Engine::new(EngineConfig::new(2, 2, 4, 16, 5, mode)).unwrap()
    }

    fn video(n: usize, dim: usize, seed: u64) -> VideoTokens {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoTokens::new(dim, 1, (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(CompressionConfig::new(2, 32).validate().is_ok());
        assert!(CompressionConfig::new(2, 2).validate().is_ok());
        let bad = CompressionConfig { alpha_low: 2, alpha_high: 2, allow_equal: false };
        assert!(bad.validate().is_err());
        assert!(CompressionConfig::new(8, 4).validate().is_err());
        assert!(CompressionConfig::new(0, 4).validate().is_err());
    }

    #[test]
    fn first_chunk_keeps_one_entry_per_summary() {
        let e = engine(EngineMode::SeededRandom);
        let v = video(4, 8, 1);
        let chunks = partition(4, 4, 1).unwrap();
        let layout = layout_summaries(&chunks[0], 2).unwrap();
        let c = prefill_chunk(&e, &layout, v.chunk_slice(&chunks[0]), &[], Level::Low).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.kv.positions(), &[2, 5]);
    }

    #[test]
    fn prior_summaries_must_be_ordered_and_same_level() {
        let e = engine(EngineMode::SeededRandom);
        let v = video(12, 8, 2);
        let chunks = partition(12, 4, 1).unwrap();
        let low = compress_level(&e, &v, &chunks, 2, Level::Low).unwrap();
        let high = compress_level(&e, &v, &chunks, 4, Level::High).unwrap();
        let layout = layout_summaries(&chunks[2], 2).unwrap();
        let slice = v.chunk_slice(&chunks[2]);
        assert!(prefill_chunk(&e, &layout, slice, &low[..2], Level::Low).is_ok());
        let mixed = vec![low[0].clone(), high[1].clone()];
        assert!(matches!(prefill_chunk(&e, &layout, slice, &mixed, Level::Low), Err(crate::Error::Precondition(_))));
        let swapped = vec![low[1].clone(), low[0].clone()];
        assert!(prefill_chunk(&e, &layout, slice, &swapped, Level::Low).is_err());
        // the standalone path reproduces the chained pass
        let again = prefill_chunk(&e, &layout, slice, &low[..2], Level::Low).unwrap();
        assert_eq!(again, low[2]);
    }

    #[test]
    fn counts_follow_layouts() {
        let e = engine(EngineMode::SeededRandom);
        let v = video(13 * 64, 8, 3);
        let chunks = partition(13 * 64, 64, 1).unwrap();
        let b = compress_bilevel(&e, &v, &chunks, &CompressionConfig::new(2, 32)).unwrap();
        assert!(b.low.iter().all(|c| c.len() == 32));
        assert!(b.high.iter().all(|c| c.len() == 2));
    }

    #[test]
    fn equal_ratios_give_identical_levels() {
        let e = engine(EngineMode::SeededRandom);
        let v = video(50, 8, 4);
        let chunks = partition(50, 16, 1).unwrap();
        let b = compress_bilevel(&e, &v, &chunks, &CompressionConfig::new(4, 4)).unwrap();
        for (l, h) in b.low.iter().zip(&b.high) {
            assert_eq!(l.kv, h.kv);
        }
    }

    #[test]
    fn pass_order_does_not_matter() {
        let e = engine(EngineMode::SeededRandom);
        let v = video(70, 8, 5);
        let chunks = partition(70, 20, 1).unwrap();
        let h_first = compress_level(&e, &v, &chunks, 8, Level::High).unwrap();
        let l_second = compress_level(&e, &v, &chunks, 2, Level::Low).unwrap();
        let b = compress_bilevel(&e, &v, &chunks, &CompressionConfig::new(2, 8)).unwrap();
        assert_eq!(b.low, l_second);
        assert_eq!(b.high, h_first);
    }

    #[test]
    fn chain_causality() {
        // summary inputs are placeholders, so earlier chunks only reach later
        // chunks' retained KVs from the third layer on
        let e = Engine::new(EngineConfig::new(3, 2, 4, 16, 5, EngineMode::SeededRandom)).unwrap();
        let v = video(60, 8, 6);
        let chunks = partition(60, 12, 1).unwrap();
        let base = compress_level(&e, &v, &chunks, 3, Level::Low).unwrap();
        let mut data = v.as_slice().to_vec();
        let j = 2;
        for x in &mut data[chunks[j].start * 8..chunks[j].end() * 8] {
            *x += 0.5;
        }
        let edited = VideoTokens::new(8, 1, data).unwrap();
        let other = compress_level(&e, &edited, &chunks, 3, Level::Low).unwrap();
        for i in 0..chunks.len() {
            assert_eq!(base[i] == other[i], i < j, "chunk {i}");
        }
    }

    #[test]
    fn uncompressed_prefill_matches_one_shot_prefill() {
        let e = engine(EngineMode::SeededRandom);
        let v = video(30, 8, 7);
        let chunks = partition(30, 7, 1).unwrap();
        let per_chunk = prefill_uncompressed(&e, &v, &chunks).unwrap();
        let placed = e.place_after(&e.empty_kv(), v.as_slice().chunks(8).map(<[f32]>::to_vec).collect());
        let whole = e.forward_prefill_kv(&placed, &e.empty_kv()).unwrap();
        let mut joined = e.empty_kv();
        for c in &per_chunk {
            joined.extend(&c.kv).unwrap();
        }
        for l in 0..2 {
            for (a, b) in joined.layer_values(l).iter().zip(whole.layer_values(l)) {
                assert!((a - b).abs() < 1e-5);
            }
        }
        assert_eq!(joined.positions(), whole.positions());
    }

    #[test]
    fn anchors_follow_layout() {
        let e = engine(EngineMode::SeededRandom);
        let v = video(10, 8, 8);
        let chunks = partition_widths(10, &[5, 5]);
        let low = compress_level(&e, &v, &chunks, 2, Level::Low).unwrap();
        assert_eq!(low[1].source_anchors(), vec![7, 9, 10]);
    }

    fn partition_widths(n: usize, w: &[usize]) -> Vec<ChunkSpec> {
        crate::chunking::partition_widths(n, w, 1).unwrap()
    }
}
