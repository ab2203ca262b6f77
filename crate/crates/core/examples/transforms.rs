//! Decoding transforms on a toy next-token distribution.
//!
//! cargo run --example transforms

use adaptive_decoding::categorical::{apply_action, entropy, DecodingAction, Logits};

fn main() -> adaptive_decoding::Result<()> {
    let logits = Logits::new(vec![2.0, 1.5, 0.3, 0.0, -1.0, -3.0])?;
    let actions = [
        DecodingAction::greedy(),
        DecodingAction::temperature(0.5)?,
        DecodingAction::temperature(1.0)?,
        DecodingAction::temperature(1.25)?,
        DecodingAction::sampling(1.0, Some(2), None, None)?,
        DecodingAction::sampling(1.0, None, Some(0.9), None)?,
        DecodingAction::sampling(1.0, None, None, Some(0.2))?,
        DecodingAction::sampling(0.75, Some(5), Some(0.95), Some(0.1))?,
    ];
    for a in &actions {
        let d = apply_action(&logits, a)?;
        let probs: Vec<String> = d.probs().iter().map(|p| format!("{p:.3}")).collect();
        println!("{:<34} H={:.3}  [{}]", a.to_string(), entropy(&d), probs.join(" "));
    }
    Ok(())
}
