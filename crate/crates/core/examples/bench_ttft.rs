// Time to first token of hybrid and uniform configs against the
// uncompressed context.
//
//     cargo run --release --example bench_ttft -- [tokens]

use kvx2l::compressor::CompressionConfig;
use kvx2l::harness::bench::{bench_config, bench_engine_config, BenchFixture, BenchRecord, BenchSetup};
use kvx2l::harness::report::write_bench_csv;
use kvx2l::hybrid::ReloadPlan;
use kvx2l::oracle::OracleKind;

pub fn run_example() -> kvx2l::Result<Vec<BenchRecord>> {
    run_with(4096)
}

pub fn run_with(n: usize) -> kvx2l::Result<Vec<BenchRecord>> {
    let setup = BenchSetup { n, ..Default::default() };
    let mut f = BenchFixture::new(bench_engine_config(0), setup, None)?;
    let m = f.m();
    let mut p = f.prepare(CompressionConfig::new(2, 32))?;
    let hybrid = f.plan(&p, OracleKind::Cosine, 3)?;
    let all = ReloadPlan::from_selection(m, (0..m).collect(), "all");
    let none = ReloadPlan::from_selection(m, Vec::new(), "none");
    let records = vec![
        bench_config(&mut f, &mut p, &hybrid, "hybrid 2x/32x", 5)?,
        bench_config(&mut f, &mut p, &all, "uniform 2x", 5)?,
        bench_config(&mut f, &mut p, &none, "uniform 32x", 5)?,
    ];
    write_bench_csv(std::io::stdout().lock(), &records)?;
    Ok(records)
}

#[allow(dead_code)]
fn main() -> kvx2l::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4096);
    run_with(n).map(|_| ())
}
