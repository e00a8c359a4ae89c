// Compresses a synthetic clip at 2× and 16× and prints what each chunk keeps.
//
//     cargo run --release --example bilevel_compression

use kvx2l::chunking::VideoTokens;
use kvx2l::compressor::{compress_bilevel, CompressionConfig};
use kvx2l::engine::{Engine, EngineConfig, EngineMode};
use rand::{Rng, SeedableRng};

/// Total `(low, high)` entries kept.
pub fn run_example() -> kvx2l::Result<(usize, usize)> {
    let engine = Engine::new(EngineConfig::new(2, 4, 8, 64, 7, EngineMode::SeededRandom))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    // 30 frames of 6 tokens each, 4 frames per chunk; the last chunk is short
    let data = (0..180 * engine.dim()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let tokens = VideoTokens::new(engine.dim(), 6, data)?;
    let chunks = tokens.partition(4)?;
    let cfg = CompressionConfig::new(2, 16);
    let b = compress_bilevel(&engine, &tokens, &chunks, &cfg)?;

    println!("chunk  width  low({}x)  high({}x)  positions(high)", cfg.alpha_low, cfg.alpha_high);
    for ((c, lo), hi) in chunks.iter().zip(&b.low).zip(&b.high) {
        println!("{:>5}  {:>5}  {:>7}  {:>8}  {:?}", c.index, c.width, lo.len(), hi.len(), hi.kv.positions());
    }
    let low: usize = b.low.iter().map(|c| c.len()).sum();
    let high: usize = b.high.iter().map(|c| c.len()).sum();
    println!("{} tokens -> {low} low entries, {high} high entries", tokens.len());
    Ok((low, high))
}

#[allow(dead_code)]
fn main() -> kvx2l::Result<()> {
    run_example().map(|_| ())
}
