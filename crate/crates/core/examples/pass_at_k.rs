//! The unbiased Pass@k estimator next to the naive "first k samples" rate.
//!
//! cargo run --example pass_at_k

use adaptive_decoding::env::pass_at_k;

fn main() -> adaptive_decoding::Result<()> {
    let n = 8;
    println!("  c  pass@1  pass@2  pass@4  pass@8");
    for c in 0..=n {
        let row: Vec<String> = [1, 2, 4, 8]
            .iter()
            .map(|&k| pass_at_k(n, c, k).map(|v| format!("{v:.4}")))
            .collect::<adaptive_decoding::Result<_>>()?;
        println!("{c:>3}  {}", row.join("  "));
    }
    Ok(())
}
