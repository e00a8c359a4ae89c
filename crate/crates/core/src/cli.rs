//! Command-line front end.
//!
//! Every flag may also come from a `--config` file of `key = value` lines,
//! where `key` is the flag name without dashes. Flags given on the command
//! line win over the file.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::chunking::{ChunkSpec, VideoTokens};
use crate::compressor::{compress_bilevel, CompressedKv, CompressionConfig, Level};
use crate::embeddings;
use crate::engine::{Engine, EngineConfig, EngineMode};
use crate::error::{config, Error, Result};
use crate::harness::bench::{bench_config, bench_engine_config, BenchFixture, BenchSetup};
use crate::harness::niah::{eval_niah, niah_engine_config, NiahGrid, NiahPipeline};
use crate::harness::report::{gnuplot_heatmap, write_accuracy_csv, write_bench_csv};
use crate::harness::sweep::{sweep_k, sweep_ratio_grid, SweepOptions};
use crate::hybrid::{build_plan, decode_answer, merge_hybrid, PositionMode};
use crate::kvstore::{measure_reduction, ColdStore, KvStore};
use crate::oracle::{group_frames, score, OracleInputs, OracleKind, TaskQuery};

#[derive(Debug, Parser)]
#[command(name = "kvx2l", version, about = "Bi-level KV cache compression with selective reload")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines supplying default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress a token sequence at both ratios and offload it to a cache directory.
    Prefill(PrefillArgs),
    /// Score chunks, reload a hybrid context from a cache directory and decode.
    Query(QueryArgs),
    /// Measure time to first token and cache reduction against the uncompressed baseline.
    Bench(BenchArgs),
    /// Needle-in-a-haystack accuracy over lengths and depths.
    Niah(NiahArgs),
    /// Benchmark a range of top-k values or a grid of ratio pairs.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RatioArgs {
    #[arg(long, default_value_t = 2)]
    pub alpha_low: u32,
    #[arg(long, default_value_t = 32)]
    pub alpha_high: u32,
}

#[derive(Debug, Clone, Args)]
pub struct ChunkArgs {
    /// Frames per chunk.
    #[arg(long, default_value_t = 10)]
    pub chunk_frames: usize,
    #[arg(long, default_value_t = 4)]
    pub tokens_per_frame: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[arg(long, default_value_t = 3)]
    pub topk: usize,
    #[arg(long, value_enum, default_value_t = OracleKind::Cosine)]
    pub oracle: OracleKind,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    SeededRandom,
    Averaging,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::SeededRandom)]
    pub engine_mode: ModeArg,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
}

impl EngineArgs {
    fn config(&self, seed: u64) -> EngineConfig {
        let mode = match self.engine_mode {
            ModeArg::SeededRandom => EngineMode::SeededRandom,
            ModeArg::Averaging => EngineMode::Averaging,
        };
        EngineConfig::new(self.layers, self.heads, self.head_dim, self.vocab, seed, mode)
    }
}

#[derive(Debug, Args)]
pub struct PrefillArgs {
    /// Token embeddings (VX2E file); one vector per token.
    #[arg(long, conflicts_with = "synthetic_tokens")]
    pub input: Option<PathBuf>,
    /// Generate this many Gaussian tokens instead of reading `--input`.
    #[arg(long)]
    pub synthetic_tokens: Option<usize>,
    /// Frame embeddings for the cosine oracle (VX2E); defaults to frame means.
    #[arg(long)]
    pub frame_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub ratios: RatioArgs,
    #[command(flatten)]
    pub chunks: ChunkArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "KVX2L_CACHE_DIR")]
    pub cache_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, env = "KVX2L_CACHE_DIR")]
    pub cache_dir: PathBuf,
    #[command(flatten)]
    pub select: SelectArgs,
    /// Comma-separated vocabulary ids of the task prompt.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub prompt_tokens: Vec<usize>,
    /// Query embedding for the cosine oracle (VX2E, first vector used).
    /// Defaults to the mean embedding of the prompt tokens.
    #[arg(long)]
    pub query_embedding: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub max_new: usize,
    #[arg(long, value_enum, default_value_t = PositionMode::Contiguous)]
    pub position_mode: PositionMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Context length in tokens.
    #[arg(long, default_value_t = 16384)]
    pub tokens: usize,
    #[command(flatten)]
    pub ratios: RatioArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub chunks: ChunkArgs,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Largest uncompressed KV size allowed, in bytes.
    #[arg(long, default_value_t = 1 << 30)]
    pub memory_budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where cold caches are written; a temporary directory when absent.
    #[arg(long, env = "KVX2L_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NiahArgs {
    #[arg(long, value_delimiter = ',', default_value = "128,512,2048,8192")]
    pub lengths: Vec<usize>,
    /// Needle depths in percent.
    #[arg(long, value_delimiter = ',', default_value = "0,25,50,75,100")]
    pub depths: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Standard deviation of noise added to oracle scores.
    #[arg(long, default_value_t = 0.0)]
    pub oracle_noise: f64,
    #[command(flatten)]
    pub ratios: RatioArgs,
    #[arg(long, default_value_t = 1)]
    pub topk: usize,
    #[arg(long, value_enum, default_value_t = OracleKind::Cosine)]
    pub oracle: OracleKind,
    #[arg(long, default_value_t = 1)]
    pub chunk_frames: usize,
    #[arg(long, default_value_t = 64)]
    pub tokens_per_frame: usize,
    /// Skip the uniform high-ratio comparison matrix.
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path of the hybrid matrix; the baseline goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a gnuplot heatmap script for the hybrid matrix (needs `--out`).
    #[arg(long, requires = "out")]
    pub emit_gnuplot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepDimension {
    K,
    RatioGrid,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = SweepDimension::K)]
    pub dimension: SweepDimension,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    pub k_values: Vec<usize>,
    /// Ratio pairs `low:high`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2:8,2:16,2:32,2:72")]
    pub grid: Vec<String>,
    #[arg(long, default_value_t = 16384)]
    pub tokens: usize,
    #[command(flatten)]
    pub ratios: RatioArgs,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub chunks: ChunkArgs,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1 << 30)]
    pub memory_budget: usize,
    /// Prepare sweep points sequentially.
    #[arg(long)]
    pub strict_timing: bool,
    /// Also report NIAH accuracy per point with this many trials per cell.
    #[arg(long, default_value_t = 0)]
    pub niah_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "KVX2L_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Written next to the cache files by `prefill`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine: EngineConfig,
    pub compression: CompressionConfig,
    pub n: usize,
    pub tokens_per_frame: usize,
    pub frames_per_chunk: usize,
    pub chunks: Vec<ChunkSpec>,
}

pub const MANIFEST: &str = "manifest.json";
pub const FRAMES: &str = "frames.vx2e";

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Replaces `--config FILE` with the file's `--key value` pairs, placed right
/// after the subcommand so that later command-line flags override them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(PathBuf::from(it.next().ok_or_else(|| config("--config needs a file"))?));
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config(format!("{}:{}: expected `key = value`", path.display(), lineno + 1)))?;
        let key = k.trim().replace('_', "-");
        let value = v.trim().trim_matches('"');
        match value {
            "true" => injected.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                injected.push(format!("--{key}").into());
                injected.push(value.into());
            }
        }
    }
    // position of the subcommand: first non-flag argument after the program name
    let sub = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 2);
    let at = sub.unwrap_or(rest.len()).min(rest.len());
    rest.splice(at..at, injected);
    Ok(rest)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prefill(a) => prefill(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a),
        Command::Niah(a) => niah(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn prefill(a: PrefillArgs) -> Result<()> {
    let engine = Engine::new(a.engine.config(a.seed))?;
    let cfg = CompressionConfig::new(a.ratios.alpha_low, a.ratios.alpha_high);
    cfg.validate()?;
    let d = engine.dim();
    let data: Vec<f32> = match (&a.input, a.synthetic_tokens) {
        (Some(p), _) => {
            let (dim, rows) = embeddings::read(p)?;
            if dim != d {
                return Err(Error::Dimension(format!("input tokens have {dim} dims, engine embeds {d}")));
            }
            rows.into_iter().flatten().collect()
        }
        (None, Some(n)) => {
            use rand::SeedableRng;
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
            (0..n * d).map(|_| <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng)).collect()
        }
        (None, None) => return Err(config("prefill needs --input or --synthetic-tokens")),
    };
    let tokens = VideoTokens::new(d, a.chunks.tokens_per_frame, data)?;
    let chunks = tokens.partition(a.chunks.chunk_frames)?;
    let frames = match &a.frame_embeddings {
        Some(p) => embeddings::read(p)?.1,
        None => tokens.frame_means(),
    };
    if frames.len() != tokens.frames() {
        return Err(Error::Dimension(format!("{} frame embeddings for {} frames", frames.len(), tokens.frames())));
    }
    let b = compress_bilevel(&engine, &tokens, &chunks, &cfg)?;
    let mut store = KvStore::new(ColdStore::create(&a.cache_dir, engine.config())?);
    let handles = store.offload(&b.low)?.len() + store.offload(&b.high)?.len();
    let fdim = frames.first().map_or(d, Vec::len);
    embeddings::write(&a.cache_dir.join(FRAMES), fdim, &frames)?;
    let manifest = Manifest {
        engine: engine.config().clone(),
        compression: cfg,
        n: tokens.len(),
        tokens_per_frame: a.chunks.tokens_per_frame,
        frames_per_chunk: a.chunks.chunk_frames,
        chunks,
    };
    fs::write(a.cache_dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest).expect("serialisable"))?;
    println!(
        "{}",
        serde_json::json!({
            "cache_dir": a.cache_dir,
            "tokens": manifest.n,
            "chunks": manifest.chunks.len(),
            "cache_files": handles,
        })
    );
    Ok(())
}

fn load_manifest(dir: &Path) -> Result<Manifest> {
    let bytes = fs::read(dir.join(MANIFEST))
        .map_err(|e| config(format!("{} is not a prefilled cache directory: {e}", dir.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Integrity(format!("bad manifest: {e}")))
}

fn query(a: QueryArgs) -> Result<()> {
    let manifest = load_manifest(&a.cache_dir)?;
    let engine = Engine::new(manifest.engine.clone())?;
    let m = manifest.chunks.len();
    let vocab = engine.config().vocab;
    if let Some(&bad) = a.prompt_tokens.iter().find(|&&t| t >= vocab) {
        return Err(config(format!("prompt token {bad} outside vocab {vocab}")));
    }
    let text_tokens: Vec<Vec<f32>> = a.prompt_tokens.iter().map(|&t| engine.token_embedding(t).to_vec()).collect();
    let embedding = match &a.query_embedding {
        Some(p) => embeddings::read(p)?.1.into_iter().next(),
        None => Some(mean(&text_tokens)),
    };
    let task = TaskQuery { text_tokens, embedding, prompt: String::new() };
    let mut store = KvStore::new(ColdStore::open(&a.cache_dir, engine.config())?);
    let frames = group_frames(&embeddings::read(&a.cache_dir.join(FRAMES))?.1, &manifest.chunks)?;
    let high: Vec<CompressedKv> = if a.select.oracle == OracleKind::Attention {
        (0..m).map(|i| store.cold.read(i, Level::High)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let inputs = OracleInputs { engine: &engine, task: &task, chunk_frames: Some(&frames), high: Some(&high), seed: a.seed };
    let scores = score(a.select.oracle, inputs, m, a.select.topk)?;
    let plan = build_plan(&scores, a.select.topk);
    let hot = store.reload(&plan)?;
    let caches: Vec<&CompressedKv> = hot.caches().collect();
    let ctx = merge_hybrid(&caches, &plan, a.position_mode)?;
    let tokens = decode_answer(&engine, &ctx, &task.text_tokens, a.max_new)?;
    let report = serde_json::json!({
        "plan": plan,
        "scores": scores.scores,
        "context_len": ctx.len(),
        "reduction_pct": measure_reduction(hot).reduction_pct,
        "tokens": tokens,
    });
    let mut w = output(&a.out)?;
    writeln!(w, "{}", serde_json::to_string_pretty(&report).expect("serialisable"))?;
    Ok(())
}

fn mean(rows: &[Vec<f32>]) -> Vec<f32> {
    let mut out = vec![0.0f32; rows.first().map_or(0, Vec::len)];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x / rows.len() as f32;
        }
    }
    out
}

fn fixture(
    tokens: usize,
    chunks: &ChunkArgs,
    memory_budget: usize,
    seed: u64,
    cache_dir: &Option<PathBuf>,
) -> Result<BenchFixture> {
    let setup = BenchSetup {
        n: tokens,
        tokens_per_frame: chunks.tokens_per_frame,
        frames_per_chunk: chunks.chunk_frames,
        memory_budget,
        seed,
        ..Default::default()
    };
    BenchFixture::new(bench_engine_config(seed), setup, cache_dir.as_deref())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = CompressionConfig::new(a.ratios.alpha_low, a.ratios.alpha_high);
    cfg.validate()?;
    let mut f = fixture(a.tokens, &a.chunks, a.memory_budget, a.seed, &a.cache_dir)?;
    let mut p = f.prepare(cfg)?;
    let m = f.m();
    let hybrid = f.plan(&p, a.select.oracle, a.select.topk)?;
    let uniform_low = crate::hybrid::ReloadPlan::from_selection(m, (0..m).collect(), "all");
    let uniform_high = crate::hybrid::ReloadPlan::from_selection(m, Vec::new(), "none");
    let mut records = Vec::new();
    let (lo, hi) = (cfg.alpha_low, cfg.alpha_high);
    records.push(bench_config(&mut f, &mut p, &hybrid, &format!("hybrid {lo}x/{hi}x"), a.reps)?);
    records.push(bench_config(&mut f, &mut p, &uniform_low, &format!("uniform {lo}x"), a.reps)?);
    records.push(bench_config(&mut f, &mut p, &uniform_high, &format!("uniform {hi}x"), a.reps)?);
    write_bench_csv(output(&a.out)?, &records)
}

fn niah(a: NiahArgs) -> Result<()> {
    let engine = Engine::new(niah_engine_config(a.seed))?;
    let mut grid = NiahGrid::new(a.lengths.clone(), a.depths.iter().map(|d| d / 100.0).collect(), a.trials, a.noise, a.seed);
    grid.oracle_noise = a.oracle_noise;
    grid.tokens_per_frame = a.tokens_per_frame;
    grid.frames_per_chunk = a.chunk_frames;
    let mut pipes = vec![NiahPipeline::hybrid(a.ratios.alpha_low, a.ratios.alpha_high, a.topk, a.oracle)];
    if !a.no_baseline {
        pipes.push(NiahPipeline::uniform(a.ratios.alpha_high));
    }
    let matrices = eval_niah(&engine, &grid, &pipes)?;
    match &a.out {
        Some(path) => {
            write_accuracy_csv(fs::File::create(path)?, &matrices[0])?;
            if let Some(base) = matrices.get(1) {
                let p = path.with_extension(format!("uniform-{}x.csv", a.ratios.alpha_high));
                write_accuracy_csv(fs::File::create(p)?, base)?;
            }
            if let Some(script) = &a.emit_gnuplot {
                let csv = path.to_string_lossy();
                let png = path.with_extension("png");
                fs::write(script, gnuplot_heatmap(&matrices[0], &csv, &png.to_string_lossy()))?;
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            for (i, m) in matrices.iter().enumerate() {
                if i > 0 {
                    writeln!(out)?;
                }
                writeln!(out, "# {}", m.label)?;
                write_accuracy_csv(&mut out, m)?;
            }
        }
    }
    Ok(())
}

fn parse_grid(items: &[String]) -> Result<Vec<(u32, u32)>> {
    items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (l, h) = s.split_once(':').ok_or_else(|| config(format!("grid point `{s}` is not low:high")))?;
            let parse = |x: &str| x.trim().parse::<u32>().map_err(|_| config(format!("bad ratio in `{s}`")));
            Ok((parse(l)?, parse(h)?))
        })
        .collect()
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut f = fixture(a.tokens, &a.chunks, a.memory_budget, a.seed, &a.cache_dir)?;
    let opts = SweepOptions {
        oracle: a.select.oracle,
        reps: a.reps,
        strict_timing: a.strict_timing,
        niah: (a.niah_trials > 0)
            .then(|| NiahGrid::new(vec![128, 512, 2048], vec![0.0, 0.5, 1.0], a.niah_trials, 0.5, a.seed)),
    };
    let records = match a.dimension {
        SweepDimension::K => {
            let cfg = CompressionConfig::new(a.ratios.alpha_low, a.ratios.alpha_high);
            cfg.validate()?;
            sweep_k(&mut f, cfg, &a.k_values, &opts)?
        }
        SweepDimension::RatioGrid => sweep_ratio_grid(&mut f, &parse_grid(&a.grid)?, a.select.topk, &opts)?,
    };
    write_bench_csv(output(&a.out)?, &records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_file_values_are_injected_and_overridable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        fs::write(&cfg, "# defaults\nalpha_high = 16\ntopk = 2\nstrict-timing = true\nreps = 3\n").unwrap();
        let args = expand_config(os(&["kvx2l", "--config", cfg.to_str().unwrap(), "sweep", "--topk", "4"])).unwrap();
        let cli = Cli::try_parse_from(args).unwrap();
        let Command::Sweep(s) = cli.command else { panic!() };
        assert_eq!(s.ratios.alpha_high, 16);
        assert_eq!(s.select.topk, 4);
        assert!(s.strict_timing);
        assert_eq!(s.reps, 3);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid(&["2:8".into(), "4:72".into()]).unwrap(), vec![(2, 8), (4, 72)]);
        assert!(parse_grid(&["2-8".into()]).is_err());
        assert!(parse_grid(&[String::new()]).unwrap().is_empty());
    }

    #[test]
    fn oracle_names() {
        let cli = Cli::try_parse_from(os(&["kvx2l", "query", "--cache-dir", "x", "--oracle", "lastn"])).unwrap();
        let Command::Query(q) = cli.command else { panic!() };
        assert_eq!(q.select.oracle, OracleKind::LastN);
    }
}
