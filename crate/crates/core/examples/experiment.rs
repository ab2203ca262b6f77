//! The full pipeline through the harness API: train a budget-aware and a
//! budget-agnostic adapter from one config, then evaluate both next to the
//! static baselines. Same files as the CLI writes.
//!
//! cargo run --release --example experiment [-- path/to/config.json]

use std::path::PathBuf;

use adaptive_decoding::harness::{cmd_eval, cmd_train, RunConfig};

fn main() -> adaptive_decoding::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.json"), PathBuf::from);
    let mut cfg = RunConfig::load(&path)?;
    let dir = tempfile::tempdir().map_err(|e| adaptive_decoding::Error::InvalidInput(e.to_string()))?;

    let mut checkpoints = Vec::new();
    for budget_aware in [false, true] {
        cfg.adapter.budget_aware = budget_aware;
        cfg.output_dir = Some(dir.path().join(format!("budget_aware_{budget_aware}")));
        let out = cmd_train(&cfg, None)?;
        println!("trained ({} steps) -> {}", out.trace.len(), out.checkpoint.display());
        checkpoints.push(out.checkpoint);
    }
    cfg.output_dir = Some(dir.path().join("eval"));
    let report = cmd_eval(&cfg, &checkpoints)?;
    for cell in &report.cells {
        let delta = report
            .delta(cell.method, cell.metric.0)
            .map(|d| format!("{:+.4}", d.absolute))
            .unwrap_or_default();
        println!(
            "{:<18} {:<7} {:.4} ± {:.4} {delta}",
            cell.method.name(),
            String::from(cell.metric),
            cell.mean,
            cell.ci95
        );
    }
    Ok(())
}
