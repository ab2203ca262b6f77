//! Run configuration: one strict JSON document per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actions::{
    build_candidate_pool, estimate_reward_matrix, greedy_select, ActionSet, CandidatePool,
    GridSpec, DEFAULT_SELECTION_K,
};
use crate::categorical::DecodingAction;
use crate::env::{
    seq_instances, ForkingChain, ForkingChainSpec, TableBandit, TwoRegime, TwoRegimeEntry,
    TwoRegimeSpec,
};
use crate::error::{Error, Result};
use crate::policy::{AdapterKind, PolicyConfig};
use crate::rng::Streams;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    ForkingChain(ForkingChainSpec),
    TwoRegime(TwoRegimeConfig),
    TableBandit(BanditConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TablePreset {
    /// Success probabilities derived from every strategy in the candidate grid.
    Pool,
    /// Four actions whose per-class optimum depends on the budget.
    BudgetSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TwoRegimeTable {
    Preset(TablePreset),
    Entries(Vec<TwoRegimeEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoRegimeConfig {
    pub class_mix: f64,
    #[serde(default)]
    pub obs_noise: Option<f64>,
    pub table: TwoRegimeTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditArm {
    pub action: DecodingAction,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub rewards: Vec<BanditArm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub k: usize,
    pub samples_per_cell: usize,
    pub validation_instances: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_SELECTION_K,
            samples_per_cell: 16,
            validation_instances: 200,
        }
    }
}

/// Where the adapter's action set comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionSource {
    /// greedy, T = 0.5, 1.0, 1.25.
    TokenDefault,
    /// The actions listed by the environment's own table.
    Environment,
    /// Greedy coverage selection over the candidate grid, run in place.
    Select,
    Inline(Vec<DecodingAction>),
    /// The greedy selection stored in an `action_set.json`.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub budget_aware: bool,
    pub actions: ActionSource,
    #[serde(default)]
    pub policy: PolicyConfig,
}

/// A `Pass@k` metric name such as `"pass@4"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Metric(pub u32);

pub const ALLOWED_K: [u32; 4] = [1, 2, 4, 8];

impl TryFrom<String> for Metric {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        let k = s
            .to_ascii_lowercase()
            .strip_prefix("pass@")
            .and_then(|k| k.parse::<u32>().ok())
            .ok_or_else(|| format!("unknown metric {s:?}, expected pass@k"))?;
        if ALLOWED_K.contains(&k) {
            Ok(Metric(k))
        } else {
            Err(format!("metric {s:?}: k must be one of {ALLOWED_K:?}"))
        }
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        format!("pass@{}", m.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    pub instances: usize,
    pub samples_per_instance: usize,
    /// Token budget the token-level adapter sees; defaults to the horizon.
    pub token_budget: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: ALLOWED_K.iter().map(|&k| Metric(k)).collect(),
            instances: 500,
            samples_per_instance: 8,
            token_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<u32>,
}

fn default_budgets() -> Vec<u32> {
    ALLOWED_K.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub environment: EnvConfig,
    #[serde(default)]
    pub candidate_grid: GridSpec,
    #[serde(default)]
    pub selection: SelectionConfig,
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Write a numbered checkpoint every this many steps; 0 writes only the
    /// final one.
    #[serde(default)]
    pub checkpoint_interval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Not embedded in outputs, so runs in different directories produce
    /// identical files.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

/// A built environment.
pub enum Environment {
    ForkingChain(ForkingChain),
    TwoRegime(TwoRegime),
    TableBandit(TableBandit),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::InvalidConfig(format!("config file {} not found", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }

    /// JSON value of the resolved config, as embedded in every output.
    pub fn provenance(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "seed": self.seed,
            "config": serde_json::to_value(self)?,
        }))
    }

    pub fn streams(&self) -> Streams {
        Streams::new(self.seed)
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| {
            Error::InvalidConfig("no output directory: set output_dir or pass --out".into())
        })
    }

    pub fn metric_ks(&self) -> Vec<usize> {
        self.eval.metrics.iter().map(|m| m.0 as usize).collect()
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidConfig("name must be non-empty".into()));
        }
        self.adapter.policy.validate()?;
        self.train.validate()?;
        if self.selection.k == 0 || self.selection.samples_per_cell == 0 {
            return Err(Error::InvalidConfig("selection k and samples_per_cell must be >= 1".into()));
        }
        if self.selection.validation_instances == 0 {
            return Err(Error::InvalidConfig("selection needs validation instances".into()));
        }
        if self.eval.metrics.is_empty() {
            return Err(Error::InvalidConfig("eval.metrics must be non-empty".into()));
        }
        if self.eval.instances < 2 || self.eval.samples_per_instance == 0 {
            return Err(Error::InvalidConfig(
                "eval needs >= 2 instances and >= 1 sample per instance".into(),
            ));
        }
        if let Some(s) = &self.sweep {
            if s.seeds.is_empty() {
                return Err(Error::InvalidConfig("sweep.seeds must be non-empty".into()));
            }
            if let Some(b) = s.budgets.iter().find(|b| !ALLOWED_K.contains(b)) {
                return Err(Error::InvalidConfig(format!(
                    "sweep budget {b} not in {ALLOWED_K:?}"
                )));
            }
        }
        let env = self.build_env()?;
        if self.adapter.kind == AdapterKind::Tok {
            let Environment::ForkingChain(chain) = &env else {
                return Err(Error::InvalidConfig(
                    "token-level adapters need a token-level environment (forking_chain)".into(),
                ));
            };
            if let Some(b) = self.eval.token_budget {
                if b < chain.spec().length {
                    return Err(Error::InvalidConfig(format!(
                        "eval.token_budget {b} shorter than the chain length {}",
                        chain.spec().length
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn candidate_pool(&self) -> Result<CandidatePool> {
        build_candidate_pool(&self.candidate_grid)
    }

    pub fn build_env(&self) -> Result<Environment> {
        Ok(match &self.environment {
            EnvConfig::ForkingChain(spec) => Environment::ForkingChain(ForkingChain::new(spec.clone())?),
            EnvConfig::TwoRegime(c) => {
                let mut spec = match &c.table {
                    TwoRegimeTable::Preset(TablePreset::Pool) => {
                        TwoRegimeSpec::from_pool(&self.candidate_pool()?, c.class_mix)?
                    }
                    TwoRegimeTable::Preset(TablePreset::BudgetSplit) => TwoRegimeSpec {
                        class_mix: c.class_mix,
                        ..TwoRegimeSpec::budget_split()
                    },
                    TwoRegimeTable::Entries(entries) => TwoRegimeSpec {
                        class_mix: c.class_mix,
                        obs_noise: 0.1,
                        table: entries.clone(),
                    },
                };
                if let Some(noise) = c.obs_noise {
                    spec.obs_noise = noise;
                }
                Environment::TwoRegime(TwoRegime::new(spec)?)
            }
            EnvConfig::TableBandit(b) => Environment::TableBandit(TableBandit::new(
                b.rewards.iter().map(|a| (a.action, a.reward)).collect(),
            )?),
        })
    }

    /// The adapter's action set.
    pub fn resolve_actions(&self, env: &Environment) -> Result<ActionSet> {
        match &self.adapter.actions {
            ActionSource::TokenDefault => Ok(ActionSet::token_default()),
            ActionSource::Inline(actions) => ActionSet::fixed(actions.clone()),
            ActionSource::Environment => match env {
                Environment::TwoRegime(e) => {
                    ActionSet::fixed(e.spec().table.iter().map(|t| t.action).collect())
                }
                Environment::TableBandit(e) => ActionSet::fixed(e.actions()),
                Environment::ForkingChain(_) => Err(Error::InvalidConfig(
                    "forking_chain has no action table; use token_default or inline".into(),
                )),
            },
            ActionSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let doc: serde_json::Value = serde_json::from_str(&text)?;
                let set = doc.get("greedy").cloned().ok_or_else(|| {
                    Error::InvalidConfig(format!("{} has no greedy selection", path.display()))
                })?;
                let set: ActionSet = serde_json::from_value(set)?;
                ActionSet::fixed(set.actions.clone())?;
                Ok(set)
            }
            ActionSource::Select => {
                let pool = self.candidate_pool()?;
                let rewards = crate::with_seq_env!(env, e => {
                    let streams = self.streams();
                    let val = seq_instances(e, &streams, "select", self.selection.validation_instances);
                    estimate_reward_matrix(e, &val, &pool, self.selection.samples_per_cell, &streams)
                })?;
                greedy_select(&rewards, self.selection.k)?.into_action_set(&pool)
            }
        }
    }
}

/// Runs `$body` with `$e` bound to the environment as a `SequenceEnv`.
#[macro_export]
#[doc(hidden)]
macro_rules! with_seq_env {
    ($env:expr, $e:ident => $body:expr) => {
        match $env {
            $crate::harness::Environment::ForkingChain($e) => $body,
            $crate::harness::Environment::TwoRegime($e) => $body,
            $crate::harness::Environment::TableBandit($e) => $body,
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "seed": 3,
        "environment": {"type": "two_regime", "class_mix": 0.5, "table": "budget_split"},
        "adapter": {"kind": "seq", "budget_aware": true, "actions": "environment"}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.selection.k, 6);
        assert_eq!(cfg.metric_ks(), vec![1, 2, 4, 8]);
        let env = cfg.build_env().unwrap();
        assert_eq!(cfg.resolve_actions(&env).unwrap().len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"sede\": 4");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::InvalidConfig(_))));
        let bad = MINIMAL.replace("\"budget_split\"}", "\"budget_split\", \"noise\": 1}");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn required_fields_have_no_silent_defaults() {
        let no_seed = MINIMAL.replace("\"seed\": 3,", "");
        assert!(matches!(RunConfig::from_json(&no_seed), Err(Error::InvalidConfig(_))));
        let no_kind = MINIMAL.replace("\"kind\": \"seq\", ", "");
        assert!(RunConfig::from_json(&no_kind).is_err());
    }

    #[test]
    fn invalid_adapter_kind_and_metrics() {
        let bad = MINIMAL.replace("\"seq\"", "\"sequence\"");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::InvalidConfig(_))));
        let bad = MINIMAL.replace(
            "\"adapter\"",
            "\"eval\": {\"metrics\": [\"pass@3\"]}, \"adapter\"",
        );
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn token_adapter_needs_token_env() {
        let cfg = RunConfig::from_json(&MINIMAL.replace("\"seq\"", "\"tok\"")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn output_dir_not_embedded() {
        let mut cfg = RunConfig::from_json(MINIMAL).unwrap();
        cfg.output_dir = Some("/tmp/somewhere".into());
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(!text.contains("somewhere"));
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back.output_dir, None);
    }
}
