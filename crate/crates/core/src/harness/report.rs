//! CSV and gnuplot emitters.

use std::io::Write;

use crate::error::Result;
use crate::harness::bench::BenchRecord;
use crate::harness::niah::AccuracyMatrix;

pub const BENCH_HEADER: [&str; 13] = [
    "label",
    "alpha_low",
    "alpha_high",
    "k",
    "oracle",
    "n",
    "m",
    "ttft_ms",
    "baseline_ttft_ms",
    "speedup",
    "decode_tok_per_s",
    "reduction_pct",
    "niah_accuracy",
];

/// Writes bench records as CSV. The header is written even when there are
/// no records.
pub fn write_bench_csv<W: Write>(out: W, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(BENCH_HEADER).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an accuracy matrix as CSV: one row per depth (percent), one column
/// per haystack length.
pub fn write_accuracy_csv<W: Write>(out: W, m: &AccuracyMatrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut header = vec!["depth_pct".to_string()];
    header.extend(m.lengths.iter().map(|l| l.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (d, row) in m.depths.iter().zip(&m.cells) {
        let mut rec = vec![format!("{}", d * 100.0)];
        rec.extend(row.iter().map(|a| format!("{a:.4}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Gnuplot script drawing the accuracy CSV at `csv_path` as a heatmap.
pub fn gnuplot_heatmap(m: &AccuracyMatrix, csv_path: &str, png_path: &str) -> String {
    let xtics: Vec<String> = m.lengths.iter().enumerate().map(|(i, l)| format!("\"{l}\" {i}")).collect();
    let ytics: Vec<String> = m.depths.iter().enumerate().map(|(i, d)| format!("\"{}%\" {i}", d * 100.0)).collect();
    format!(
        "set terminal pngcairo size 800,500\n\
         set output '{png_path}'\n\
         set title '{title}'\n\
         set datafile separator ','\n\
         set xlabel 'haystack length (tokens)'\n\
         set ylabel 'needle depth'\n\
         set cbrange [0:1]\n\
         set palette defined (0 '#d73027', 0.5 '#fee08b', 1 '#1a9850')\n\
         set xtics ({xt})\n\
         set ytics ({yt})\n\
         unset key\n\
         plot '{csv_path}' matrix rowheaders columnheaders with image\n",
        title = m.label,
        xt = xtics.join(", "),
        yt = ytics.join(", "),
    )
}

fn csv_err(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => crate::Error::Io(io),
        other => crate::Error::Config(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_bench_csv_is_header_only() {
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", BENCH_HEADER.join(",")));
    }

    #[test]
    fn accuracy_csv_layout() {
        let m = AccuracyMatrix {
            label: "x".into(),
            lengths: vec![128, 512],
            depths: vec![0.0, 0.5],
            cells: vec![vec![1.0, 0.5], vec![0.25, 0.0]],
        };
        let mut buf = Vec::new();
        write_accuracy_csv(&mut buf, &m).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "depth_pct,128,512\n0,1.0000,0.5000\n50,0.2500,0.0000\n"
        );
        let script = gnuplot_heatmap(&m, "acc.csv", "acc.png");
        assert!(script.contains("'acc.csv' matrix"));
        assert!(script.contains("\"50%\" 1"));
    }
}
