// Compares the chunks each relevance oracle picks on the same context.
//
//     cargo run --release --example oracles

use kvx2l::chunking::VideoTokens;
use kvx2l::compressor::{compress_level, Level};
use kvx2l::engine::{Engine, EngineConfig, EngineMode};
use kvx2l::oracle::{group_frames, score, select_topk, OracleInputs, OracleKind, TaskQuery};
use rand::{Rng, SeedableRng};

pub fn run_example() -> kvx2l::Result<Vec<(OracleKind, Vec<usize>)>> {
    let engine = Engine::new(EngineConfig::new(2, 2, 8, 32, 5, EngineMode::SeededRandom))?;
    let d = engine.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let data = (0..480 * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let tokens = VideoTokens::new(d, 4, data)?;
    let chunks = tokens.partition(10)?;
    let high = compress_level(&engine, &tokens, &chunks, 16, Level::High)?;
    let frames = group_frames(&tokens.frame_means(), &chunks)?;
    let task = TaskQuery {
        text_tokens: vec![engine.token_embedding(1).to_vec()],
        embedding: Some(frames[7][3].clone()),
        prompt: String::new(),
    };
    let k = 3;
    let mut out = Vec::new();
    for kind in [OracleKind::Cosine, OracleKind::Attention, OracleKind::Random, OracleKind::LastN, OracleKind::Uniform] {
        let inputs = OracleInputs { engine: &engine, task: &task, chunk_frames: Some(&frames), high: Some(&high), seed: 42 };
        let picked = select_topk(&score(kind, inputs, chunks.len(), k)?, k);
        println!("{kind:?}: {picked:?}");
        out.push((kind, picked));
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> kvx2l::Result<()> {
    run_example().map(|_| ())
}
