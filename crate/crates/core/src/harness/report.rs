use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_bytes, Metric};
use crate::env::MetricScore;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BestStatic,
    MixedStatic,
    AdapterNoBudget,
    AdapterBudget,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::BestStatic,
        Method::MixedStatic,
        Method::AdapterNoBudget,
        Method::AdapterBudget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BestStatic => "best_static",
            Method::MixedStatic => "mixed_static",
            Method::AdapterNoBudget => "adapter_no_budget",
            Method::AdapterBudget => "adapter_budget",
        }
    }

    pub fn for_adapter(budget_aware: bool) -> Self {
        if budget_aware {
            Method::AdapterBudget
        } else {
            Method::AdapterNoBudget
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub method: Method,
    pub metric: Metric,
    pub mean: f64,
    pub ci95: f64,
    pub episodes: usize,
    /// The static action behind a best-static cell.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

impl ReportCell {
    pub fn new(method: Method, score: &MetricScore, action: Option<String>) -> Self {
        Self {
            method,
            metric: Metric(score.k as u32),
            mean: score.mean,
            ci95: score.ci95,
            episodes: score.episodes,
            action,
        }
    }
}

/// Difference to the best-static cell of the same metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub method: Method,
    pub metric: Metric,
    pub absolute: f64,
    /// `None` when the best-static mean is zero.
    pub relative: Option<f64>,
}

pub fn delta(method: Method, metric: Metric, value: f64, best: f64) -> Delta {
    let absolute = value - best;
    Delta {
        method,
        metric,
        absolute,
        relative: (best != 0.0).then(|| absolute / best),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub provenance: serde_json::Value,
    pub metrics: Vec<Metric>,
    pub cells: Vec<ReportCell>,
    pub deltas: Vec<Delta>,
    /// Adapter columns with no checkpoint supplied.
    pub missing: Vec<Method>,
}

impl RunReport {
    pub fn new(
        name: String,
        provenance: serde_json::Value,
        metrics: Vec<Metric>,
        mut cells: Vec<ReportCell>,
    ) -> Self {
        cells.sort_by_key(|c| (c.method, c.metric));
        let mut deltas = Vec::new();
        for c in &cells {
            if c.method == Method::BestStatic {
                continue;
            }
            if let Some(best) = cells
                .iter()
                .find(|b| b.method == Method::BestStatic && b.metric == c.metric)
            {
                deltas.push(delta(c.method, c.metric, c.mean, best.mean));
            }
        }
        let missing = Method::ALL
            .into_iter()
            .filter(|m| !cells.iter().any(|c| c.method == *m))
            .collect();
        Self {
            name,
            provenance,
            metrics,
            cells,
            deltas,
            missing,
        }
    }

    pub fn cell(&self, method: Method, k: u32) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.method == method && c.metric == Metric(k))
    }

    pub fn delta(&self, method: Method, k: u32) -> Option<&Delta> {
        self.deltas.iter().find(|d| d.method == method && d.metric == Metric(k))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = super::provenance_header(&self.provenance)?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record([
                "method", "metric", "mean", "ci95", "episodes", "action", "abs_delta", "rel_delta",
            ])?;
            for c in &self.cells {
                let d = self.delta(c.method, c.metric.0);
                w.write_record([
                    c.method.name().to_string(),
                    String::from(c.metric),
                    c.mean.to_string(),
                    c.ci95.to_string(),
                    c.episodes.to_string(),
                    c.action.clone().unwrap_or_default(),
                    d.map(|d| d.absolute.to_string()).unwrap_or_default(),
                    d.and_then(|d| d.relative).map(|r| r.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush().map_err(|e| crate::Error::io("<report>", e))?;
        }
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join("report.json"), &self.to_json()?)?;
        write_bytes(&dir.join("report.csv"), &self.to_csv()?)
    }
}
