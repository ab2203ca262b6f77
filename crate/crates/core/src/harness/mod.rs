//! Reproducible experiment runs: config, commands and reports.
//!
//! Every file a command writes embeds the resolved config and seed: JSON
//! outputs under a `provenance` key, CSV outputs as leading `#` lines.

mod commands;
mod config;
mod report;
mod sweep;

pub use commands::{
    cmd_eval, cmd_select_actions, cmd_train, SelectOutcome, TrainOutcome, CHECKPOINT_FILE,
    TRACE_FILE,
};
pub use config::{
    ActionSource, AdapterConfig, BanditArm, BanditConfig, EnvConfig, Environment, EvalConfig,
    Metric, RunConfig, SelectionConfig, SweepConfig, TablePreset, TwoRegimeConfig,
    TwoRegimeTable, ALLOWED_K,
};
pub use report::{Delta, Method, ReportCell, RunReport};
pub use sweep::{cmd_sweep, t_interval, SweepOutcome};

use std::path::Path;

use crate::error::{Error, Result};

/// `# seed: ...` and `# config: ...` lines for CSV outputs.
pub fn provenance_header(provenance: &serde_json::Value) -> Result<Vec<u8>> {
    let seed = provenance.get("seed").cloned().unwrap_or(serde_json::Value::Null);
    let config = provenance.get("config").cloned().unwrap_or(serde_json::Value::Null);
    Ok(format!(
        "# seed: {seed}\n# config: {}\n",
        serde_json::to_string(&config)?
    )
    .into_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs `f` on a dedicated pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::InvalidConfig("--workers must be >= 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}
