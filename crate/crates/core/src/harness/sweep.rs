use std::path::PathBuf;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::{Metric, RunConfig};
use super::report::Method;
use super::{cmd_eval, cmd_train, create_dir, provenance_header, write_bytes};
use crate::error::{Error, Result};

/// One (seed, budget, method) result.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub budget: u32,
    pub method: Method,
    pub mean: f64,
    pub ci95: f64,
}

/// Mean over seeds with a t-distribution 95% half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAggregate {
    pub budget: u32,
    pub method: Method,
    pub seeds: usize,
    pub mean: f64,
    /// `None` with fewer than two seeds.
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub aggregate: Vec<SweepAggregate>,
    pub failures: Vec<SweepFailure>,
    pub rows_path: PathBuf,
    pub aggregate_path: PathBuf,
}

/// Mean and t-based 95% half-width of `values`; the half-width is `None`
/// for fewer than two values.
pub fn t_interval(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("interval of no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((mean, Some(t * (var / n).sqrt())))
}

fn run_seed(cfg: &RunConfig, seed: u64, budgets: &[u32]) -> Result<Vec<SweepRow>> {
    let root = cfg.output_dir()?.join(format!("seed_{seed}"));
    let mut base = cfg.clone();
    base.seed = seed;
    base.sweep = None;
    base.eval.metrics = budgets.iter().map(|&b| Metric(b)).collect();
    let mut checkpoints = Vec::new();
    for budget_aware in [false, true] {
        let mut c = base.clone();
        c.adapter.budget_aware = budget_aware;
        c.output_dir = Some(root.join(Method::for_adapter(budget_aware).name()));
        checkpoints.push(cmd_train(&c, None)?.checkpoint);
    }
    let mut c = base;
    c.output_dir = Some(root);
    let report = cmd_eval(&c, &checkpoints)?;
    Ok(report
        .cells
        .iter()
        .map(|cell| SweepRow {
            seed,
            budget: cell.metric.0,
            method: cell.method,
            mean: cell.mean,
            ci95: cell.ci95,
        })
        .collect())
}

/// Trains both adapter variants and evaluates all columns for every seed.
/// A failing seed is recorded and skipped; the sweep then returns
/// [`Error::SweepIncomplete`] after writing everything else.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no sweep section".into()))?;
    let out = cfg.output_dir()?.to_path_buf();
    create_dir(&out)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &seed in &sweep.seeds {
        match run_seed(cfg, seed, &sweep.budgets) {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(SweepFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let mut aggregate = Vec::new();
    for &budget in &sweep.budgets {
        for method in Method::ALL {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.budget == budget && r.method == method)
                .map(|r| r.mean)
                .collect();
            if values.is_empty() {
                continue;
            }
            let (mean, ci95) = t_interval(&values)?;
            aggregate.push(SweepAggregate {
                budget,
                method,
                seeds: values.len(),
                mean,
                ci95,
            });
        }
    }

    let provenance = cfg.provenance()?;
    let mut bytes = provenance_header(&provenance)?;
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(["seed", "budget", "method", "mean", "ci95"])?;
        for r in &rows {
            w.write_record([
                r.seed.to_string(),
                r.budget.to_string(),
                r.method.name().to_string(),
                r.mean.to_string(),
                r.ci95.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<sweep rows>", e))?;
    }
    let rows_path = out.join("sweep_rows.csv");
    write_bytes(&rows_path, &bytes)?;

    let mut bytes = provenance_header(&provenance)?;
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(["budget", "method", "seeds", "mean", "ci95"])?;
        for a in &aggregate {
            w.write_record([
                a.budget.to_string(),
                a.method.name().to_string(),
                a.seeds.to_string(),
                a.mean.to_string(),
                a.ci95.map_or_else(|| "NA".to_string(), |c| c.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<sweep>", e))?;
    }
    let aggregate_path = out.join("sweep.csv");
    write_bytes(&aggregate_path, &bytes)?;

    if !failures.is_empty() {
        let mut bytes = provenance_header(&provenance)?;
        {
            let mut w = csv::Writer::from_writer(&mut bytes);
            w.write_record(["seed", "error"])?;
            for f in &failures {
                w.write_record([f.seed.to_string(), f.error.clone()])?;
            }
            w.flush().map_err(|e| Error::io("<sweep failures>", e))?;
        }
        let path = out.join("sweep_failures.csv");
        write_bytes(&path, &bytes)?;
        let seeds: Vec<String> = failures.iter().map(|f| f.seed.to_string()).collect();
        return Err(Error::SweepIncomplete(format!(
            "{} of {} seeds failed ({}); see {}",
            failures.len(),
            sweep.seeds.len(),
            seeds.join(", "),
            path.display()
        )));
    }
    Ok(SweepOutcome {
        rows,
        aggregate,
        failures,
        rows_path,
        aggregate_path,
    })
}
