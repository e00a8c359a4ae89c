// Cache reduction of hybrid configs over 13 chunks of 288 tokens with the
// three widest chunks kept at the low ratio.
//
//     cargo run --release --example reduction_table

use kvx2l::kvstore::predict_reduction;

pub const CONFIGS: [(u32, u32, usize); 8] =
    [(2, 8, 3), (2, 16, 3), (2, 32, 3), (2, 72, 3), (4, 32, 3), (4, 72, 3), (2, 2, 13), (4, 4, 13)];

pub fn run_example() -> kvx2l::Result<Vec<f64>> {
    let widths = [288usize; 13];
    println!("{:<10} {:>3} {:>9} {:>10}", "config", "k", "entries", "reduction");
    let mut out = Vec::new();
    for (lo, hi, k) in CONFIGS {
        let r = predict_reduction(&widths, lo, hi, k);
        let name = if lo == hi { format!("{lo}x") } else { format!("{lo}x/{hi}x") };
        println!("{name:<10} {k:>3} {:>9} {:>9.2}%", r.retained_entries, r.reduction_pct);
        out.push(r.reduction_pct);
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> kvx2l::Result<()> {
    run_example().map(|_| ())
}
