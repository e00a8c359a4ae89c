// Needle-in-a-haystack accuracy of a 2×/32× hybrid against uniform 32×,
// written as CSV plus a gnuplot script.
//
//     cargo run --release --example niah_heatmap -- [trials]

use std::fs;

use kvx2l::engine::Engine;
use kvx2l::harness::niah::{eval_niah, niah_engine_config, AccuracyMatrix, NiahGrid, NiahPipeline};
use kvx2l::harness::report::{gnuplot_heatmap, write_accuracy_csv};
use kvx2l::oracle::OracleKind;

pub fn run_example() -> kvx2l::Result<Vec<AccuracyMatrix>> {
    run_with(4)
}

pub fn run_with(trials: usize) -> kvx2l::Result<Vec<AccuracyMatrix>> {
    let engine = Engine::new(niah_engine_config(1))?;
    let grid = NiahGrid::new(vec![128, 512, 1024], vec![0.0, 0.5, 1.0], trials, 0.5, 1);
    let pipes = [NiahPipeline::hybrid(2, 32, 1, OracleKind::Cosine), NiahPipeline::uniform(32)];
    let matrices = eval_niah(&engine, &grid, &pipes)?;

    let dir = std::env::temp_dir().join("kvx2l-niah");
    fs::create_dir_all(&dir)?;
    for (m, name) in matrices.iter().zip(["hybrid", "uniform"]) {
        let csv = dir.join(format!("{name}.csv"));
        write_accuracy_csv(fs::File::create(&csv)?, m)?;
        let png = dir.join(format!("{name}.png"));
        fs::write(dir.join(format!("{name}.gp")), gnuplot_heatmap(m, &csv.to_string_lossy(), &png.to_string_lossy()))?;
        println!("{}: mean {:.3}, min {:.3}", m.label, m.mean(), m.min());
        write_accuracy_csv(std::io::stdout().lock(), m)?;
    }
    println!("csv and gnuplot scripts in {}", dir.display());
    Ok(matrices)
}

#[allow(dead_code)]
fn main() -> kvx2l::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    run_with(trials).map(|_| ())
}
