// Full round trip: prefill, offload to disk, score chunks for a query,
// reload the hybrid context and decode a short answer.
//
//     cargo run --release --example selective_reload

use kvx2l::chunking::VideoTokens;
use kvx2l::compressor::{compress_bilevel, CompressedKv, CompressionConfig};
use kvx2l::engine::{Engine, EngineConfig, EngineMode};
use kvx2l::hybrid::{build_plan, decode_answer, merge_hybrid, PositionMode};
use kvx2l::kvstore::{measure_reduction, ColdStore, KvStore};
use kvx2l::oracle::{group_frames, score, OracleInputs, OracleKind, TaskQuery};
use rand::{Rng, SeedableRng};

pub struct Outcome {
    pub selected: Vec<usize>,
    pub context_len: usize,
    pub reduction_pct: f64,
    pub answer: Vec<usize>,
}

pub fn run_example() -> kvx2l::Result<Outcome> {
    let engine = Engine::new(EngineConfig::new(2, 4, 8, 64, 11, EngineMode::SeededRandom))?;
    let d = engine.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut data: Vec<f32> = (0..960 * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    // frames 40..48 (chunk 5) lean towards a direction the query asks about
    let topic: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    for t in 320..384 {
        for (x, y) in data[t * d..(t + 1) * d].iter_mut().zip(&topic) {
            *x += 2.0 * y;
        }
    }
    let tokens = VideoTokens::new(d, 8, data)?;
    let chunks = tokens.partition(8)?;
    let cfg = CompressionConfig::new(2, 32);
    let b = compress_bilevel(&engine, &tokens, &chunks, &cfg)?;

    let dir = tempfile::tempdir()?;
    let mut store = KvStore::new(ColdStore::create(dir.path(), engine.config())?);
    store.offload(&b.low)?;
    store.offload(&b.high)?;
    println!("offloaded {} cache files to {}", store.cold.handles().count(), dir.path().display());

    let task = TaskQuery {
        text_tokens: vec![engine.token_embedding(3).to_vec(), engine.token_embedding(9).to_vec()],
        embedding: Some(topic),
        prompt: "what happens in the highlighted scene?".into(),
    };
    let frames = group_frames(&tokens.frame_means(), &chunks)?;
    let inputs = OracleInputs { engine: &engine, task: &task, chunk_frames: Some(&frames), high: None, seed: 0 };
    let scores = score(OracleKind::Cosine, inputs, chunks.len(), 2)?;
    let plan = build_plan(&scores, 2);
    println!("selected chunks {:?} at {}x, {} others at {}x", plan.selected, cfg.alpha_low, plan.complement.len(), cfg.alpha_high);

    let hot = store.reload(&plan)?;
    let caches: Vec<&CompressedKv> = hot.caches().collect();
    let ctx = merge_hybrid(&caches, &plan, PositionMode::Contiguous)?;
    let reduction_pct = measure_reduction(hot).reduction_pct;
    let answer = decode_answer(&engine, &ctx, &task.text_tokens, 6)?;
    println!("context {} entries ({reduction_pct:.1}% smaller), answer {answer:?}", ctx.len());
    Ok(Outcome { selected: plan.selected, context_len: ctx.len(), reduction_pct, answer })
}

#[allow(dead_code)]
fn main() -> kvx2l::Result<()> {
    run_example().map(|_| ())
}
