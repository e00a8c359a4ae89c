//! Sweeps over top-k and over compression-ratio grids.

use rayon::prelude::*;

use crate::compressor::CompressionConfig;
use crate::engine::Engine;
use crate::error::Result;
use crate::harness::bench::{bench_config, BenchFixture, BenchRecord, Prepared};
use crate::harness::niah::{eval_niah, niah_engine_config, NiahGrid, NiahPipeline};
use crate::oracle::OracleKind;

/// Ratio pairs with a 2× low level and increasingly coarse high levels.
pub const RATIO_GRID_2X: [(u32, u32); 4] = [(2, 8), (2, 16), (2, 32), (2, 72)];

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub oracle: OracleKind,
    pub reps: usize,
    /// Prepare points one after another instead of in a worker pool.
    pub strict_timing: bool,
    /// Also measure NIAH accuracy of each point on this grid.
    pub niah: Option<NiahGrid>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { oracle: OracleKind::Cosine, reps: 5, strict_timing: false, niah: None }
    }
}

fn niah_accuracy(grid: &NiahGrid, alpha_low: u32, alpha_high: u32, k: usize, oracle: OracleKind) -> Result<f64> {
    let engine = Engine::new(niah_engine_config(grid.seed))?;
    let m = eval_niah(&engine, grid, &[NiahPipeline::hybrid(alpha_low, alpha_high, k, oracle)])?;
    Ok(m[0].mean())
}

fn label(cfg: &CompressionConfig, k: usize) -> String {
    format!("{}x/{}x k={k}", cfg.alpha_low, cfg.alpha_high)
}

/// One record per `k` at a fixed ratio pair.
pub fn sweep_k(
    fixture: &mut BenchFixture,
    cfg: CompressionConfig,
    ks: &[usize],
    opts: &SweepOptions,
) -> Result<Vec<BenchRecord>> {
    if ks.is_empty() {
        return Ok(Vec::new());
    }
    let mut prepared = fixture.prepare(cfg)?;
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let plan = fixture.plan(&prepared, opts.oracle, k)?;
        let mut r = bench_config(fixture, &mut prepared, &plan, &label(&cfg, k), opts.reps)?;
        if let Some(grid) = &opts.niah {
            r.niah_accuracy = Some(niah_accuracy(grid, cfg.alpha_low, cfg.alpha_high, k, opts.oracle)?);
        }
        out.push(r);
    }
    Ok(out)
}

/// One record per ratio pair at a fixed `k`.
pub fn sweep_ratio_grid(
    fixture: &mut BenchFixture,
    grid: &[(u32, u32)],
    k: usize,
    opts: &SweepOptions,
) -> Result<Vec<BenchRecord>> {
    let cfgs: Vec<CompressionConfig> = grid.iter().map(|&(l, h)| CompressionConfig::new(l, h)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let prepared: Vec<Prepared> = if opts.strict_timing {
        cfgs.iter().map(|&c| fixture.prepare(c)).collect::<Result<_>>()?
    } else {
        let f: &BenchFixture = fixture;
        cfgs.par_iter().map(|&c| f.prepare(c)).collect::<Result<_>>()?
    };
    let mut out = Vec::with_capacity(prepared.len());
    for mut p in prepared {
        let plan = fixture.plan(&p, opts.oracle, k)?;
        let name = label(&p.cfg, k);
        let mut r = bench_config(fixture, &mut p, &plan, &name, opts.reps)?;
        if let Some(g) = &opts.niah {
            r.niah_accuracy = Some(niah_accuracy(g, p.cfg.alpha_low, p.cfg.alpha_high, k, opts.oracle)?);
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::bench::{bench_engine_config, BenchSetup};

    fn fixture(n: usize, tpf: usize, fpc: usize) -> BenchFixture {
        let setup = BenchSetup { n, tokens_per_frame: tpf, frames_per_chunk: fpc, decode_tokens: 2, ..Default::default() };
        BenchFixture::new(bench_engine_config(3), setup, None).unwrap()
    }

    #[test]
    fn k_sweep_reduction_strictly_decreases() {
        let mut f = fixture(640, 4, 10);
        let opts = SweepOptions { reps: 3, ..Default::default() };
        let recs = sweep_k(&mut f, CompressionConfig::new(2, 16), &[1, 2, 3, 4, 5, 6], &opts).unwrap();
        assert_eq!(recs.len(), 6);
        for w in recs.windows(2) {
            assert!(w[1].reduction_pct < w[0].reduction_pct);
        }
        for r in &recs {
            assert!((r.speedup - r.baseline_ttft_ms / r.ttft_ms).abs() < 1e-9);
        }
    }

    #[test]
    fn ratio_grid_matches_reference_reductions() {
        let mut f = fixture(13 * 288, 8, 36);
        let opts = SweepOptions { reps: 3, oracle: OracleKind::Uniform, ..Default::default() };
        let recs = sweep_ratio_grid(&mut f, &RATIO_GRID_2X, 3, &opts).unwrap();
        let got: Vec<f64> = recs.iter().map(|r| r.reduction_pct).collect();
        for (g, want) in got.iter().zip([78.8, 83.7, 86.1, 87.4]) {
            assert!((g - want).abs() <= 0.1, "{got:?}");
        }
        assert!(sweep_ratio_grid(&mut f, &[], 3, &opts).unwrap().is_empty());
    }
}
