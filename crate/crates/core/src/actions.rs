//! Candidate decoding-strategy pools and coverage-based action-set selection.
//!
//! The coverage objective is `F(S) = sum_i max_{s in S} R(i, s)`: the reward
//! of a best-of-S decoder summed over validation instances. It is monotone
//! and submodular, so greedy marginal-gain selection is within `1 - 1/e` of
//! the best subset of the same size.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::DecodingAction;
use crate::env::SequenceEnv;
use crate::error::{Error, Result};
use crate::rng::Streams;

/// Default number of selected strategies.
pub const DEFAULT_SELECTION_K: usize = 6;

/// Parameter ranges for the candidate pool. `None` entries mean "off".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub temperatures: Vec<f64>,
    pub top_k: Vec<Option<usize>>,
    pub top_p: Vec<Option<f64>>,
    pub min_p: Vec<Option<f64>>,
    /// Append a greedy action after the sampled grid.
    #[serde(default)]
    pub include_greedy: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            temperatures: vec![0.3, 0.5, 0.75, 1.0, 1.25],
            top_k: vec![Some(5), Some(10), Some(50), None],
            top_p: vec![Some(0.9), Some(0.95), None],
            min_p: vec![Some(0.1), Some(0.2), None],
            include_greedy: false,
        }
    }
}

/// Ordered, duplicate-free list of candidate strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    strategies: Vec<DecodingAction>,
}

impl CandidatePool {
    pub fn new(strategies: Vec<DecodingAction>) -> Result<Self> {
        if strategies.is_empty() {
            return Err(Error::InvalidConfig("candidate pool is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &strategies {
            if !seen.insert(s.key()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate strategy in pool: {s}"
                )));
            }
        }
        Ok(Self { strategies })
    }

    pub fn strategies(&self) -> &[DecodingAction] {
        &self.strategies
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        (0..self.len()).map(strategy_id).collect()
    }
}

pub fn strategy_id(index: usize) -> String {
    format!("s{index:03}")
}

/// Cartesian product of the grid, temperature outermost, min-p innermost.
pub fn build_candidate_pool(grid: &GridSpec) -> Result<CandidatePool> {
    for (name, empty) in [
        ("temperatures", grid.temperatures.is_empty()),
        ("top_k", grid.top_k.is_empty()),
        ("top_p", grid.top_p.is_empty()),
        ("min_p", grid.min_p.is_empty()),
    ] {
        if empty {
            return Err(Error::InvalidConfig(format!("grid range {name} is empty")));
        }
    }
    let mut strategies = Vec::with_capacity(
        grid.temperatures.len() * grid.top_k.len() * grid.top_p.len() * grid.min_p.len() + 1,
    );
    for &t in &grid.temperatures {
        for &k in &grid.top_k {
            for &p in &grid.top_p {
                for &m in &grid.min_p {
                    let a = DecodingAction::sampling(t, k, p, m)
                        .map_err(|e| Error::InvalidConfig(format!("grid entry invalid: {e}")))?;
                    strategies.push(a);
                }
            }
        }
    }
    if grid.include_greedy {
        strategies.push(DecodingAction::greedy());
    }
    CandidatePool::new(strategies)
}

/// Rewards of every candidate strategy on every validation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    rewards: Vec<f64>,
    instance_ids: Vec<String>,
    strategy_ids: Vec<String>,
}

impl RewardMatrix {
    /// `rows[i][s]` is the reward of strategy `s` on instance `i`.
    pub fn new(
        rows: Vec<Vec<f64>>,
        instance_ids: Vec<String>,
        strategy_ids: Vec<String>,
    ) -> Result<Self> {
        let n = rows.len();
        let m = strategy_ids.len();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput(
                "reward matrix needs at least one instance and one strategy".into(),
            ));
        }
        if instance_ids.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} instance ids for {n} rows",
                instance_ids.len()
            )));
        }
        let mut rewards = Vec::with_capacity(n * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            for r in row {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidInput(format!(
                        "reward {r} in row {i} outside [0, 1]"
                    )));
                }
                rewards.push(r);
            }
        }
        Ok(Self {
            rewards,
            instance_ids,
            strategy_ids,
        })
    }

    /// Convenience constructor with generated ids.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        Self::new(
            rows,
            (0..n).map(|i| i.to_string()).collect(),
            (0..m).map(strategy_id).collect(),
        )
    }

    pub fn num_instances(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn num_strategies(&self) -> usize {
        self.strategy_ids.len()
    }

    pub fn get(&self, instance: usize, strategy: usize) -> f64 {
        self.rewards[instance * self.num_strategies() + strategy]
    }

    pub fn row(&self, instance: usize) -> &[f64] {
        let m = self.num_strategies();
        &self.rewards[instance * m..(instance + 1) * m]
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn strategy_ids(&self) -> &[String] {
        &self.strategy_ids
    }

    /// Empirical performance `Q(s)`: column mean.
    pub fn column_mean(&self, strategy: usize) -> f64 {
        let n = self.num_instances();
        (0..n).map(|i| self.get(i, strategy)).sum::<f64>() / n as f64
    }

    /// Header row of strategy ids, then one row per instance.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["instance_id".to_string()];
        header.extend(self.strategy_ids.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.instance_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|r| r.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Lines starting with `#` are provenance comments and are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let header = r.headers()?.clone();
        let strategy_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut instance_ids = Vec::new();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut it = rec.iter();
            instance_ids.push(it.next().unwrap_or_default().to_string());
            let row = it
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad reward {v:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows, instance_ids, strategy_ids)
    }
}

/// `F(S)` summed over instances. Returns `(sum, sum / N)`.
pub fn coverage_value(subset: &[usize], rewards: &RewardMatrix) -> Result<(f64, f64)> {
    if subset.is_empty() {
        return Err(Error::InvalidInput("coverage of an empty set".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&s| s >= rewards.num_strategies()) {
        return Err(Error::InvalidInput(format!(
            "strategy index {bad} out of range ({})",
            rewards.num_strategies()
        )));
    }
    let total: f64 = (0..rewards.num_instances())
        .map(|i| {
            subset
                .iter()
                .map(|&s| rewards.get(i, s))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok((total, total / rewards.num_instances() as f64))
}

/// Result of a selection routine: chosen strategy indices in pick order and
/// the normalized coverage `F(S)/N` after each pick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub coverage_trace: Vec<f64>,
}

impl Selection {
    pub fn coverage(&self) -> f64 {
        self.coverage_trace.last().copied().unwrap_or(0.0)
    }

    pub fn into_action_set(self, pool: &CandidatePool) -> Result<ActionSet> {
        let actions = self
            .indices
            .iter()
            .map(|&i| {
                pool.strategies().get(i).copied().ok_or_else(|| {
                    Error::InvalidInput(format!("selection index {i} outside pool"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ActionSet {
            actions,
            pool_indices: self.indices,
            coverage_trace: self.coverage_trace,
        })
    }
}

/// A compact set of decoding actions the adapters choose among.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSet {
    pub actions: Vec<DecodingAction>,
    #[serde(default)]
    pub pool_indices: Vec<usize>,
    #[serde(default)]
    pub coverage_trace: Vec<f64>,
}

impl ActionSet {
    /// An action set given directly rather than selected from a pool.
    pub fn fixed(actions: Vec<DecodingAction>) -> Result<Self> {
        CandidatePool::new(actions.clone())?;
        Ok(Self {
            actions,
            pool_indices: Vec::new(),
            coverage_trace: Vec::new(),
        })
    }

    /// greedy, T = 0.5, 1.0, 1.25: the token-level action set.
    pub fn token_default() -> Self {
        let mut actions = vec![DecodingAction::greedy()];
        for t in [0.5, 1.0, 1.25] {
            actions.push(DecodingAction::temperature(t).expect("positive temperature"));
        }
        Self {
            actions,
            pool_indices: Vec::new(),
            coverage_trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn same_actions(&self, other: &ActionSet) -> bool {
        self.actions == other.actions
    }
}

fn check_k(rewards: &RewardMatrix, k: usize) -> Result<()> {
    if k == 0 || k > rewards.num_strategies() {
        return Err(Error::InvalidConfig(format!(
            "selection size {k} must be in 1..={}",
            rewards.num_strategies()
        )));
    }
    Ok(())
}

/// Greedy marginal-gain maximization of the coverage objective. Ties go to
/// the lowest strategy index.
pub fn greedy_select(rewards: &RewardMatrix, k: usize) -> Result<Selection> {
    check_k(rewards, k)?;
    let n = rewards.num_instances();
    let m = rewards.num_strategies();
    // best reward so far per instance; rewards are >= 0 so an empty set covers 0
    let mut covered = vec![0.0_f64; n];
    let mut chosen = vec![false; m];
    let mut indices = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for s in (0..m).filter(|&s| !chosen[s]) {
            let gain: f64 = (0..n)
                .map(|i| (rewards.get(i, s) - covered[i]).max(0.0))
                .sum();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((s, gain));
            }
        }
        let (s, _) = best.expect("k <= m leaves a candidate");
        chosen[s] = true;
        indices.push(s);
        for (i, c) in covered.iter_mut().enumerate() {
            *c = c.max(rewards.get(i, s));
        }
        trace.push(covered.iter().sum::<f64>() / n as f64);
    }
    Ok(Selection {
        indices,
        coverage_trace: trace,
    })
}

/// Baseline: the `k` strategies with the highest mean reward.
pub fn topk_by_mean_select(rewards: &RewardMatrix, k: usize) -> Result<Selection> {
    check_k(rewards, k)?;
    let means: Vec<f64> = (0..rewards.num_strategies())
        .map(|s| rewards.column_mean(s))
        .collect();
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| {
        means[b]
            .partial_cmp(&means[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let indices: Vec<usize> = order.into_iter().take(k).collect();
    let trace = (1..=k)
        .map(|j| coverage_value(&indices[..j], rewards).map(|(_, norm)| norm))
        .collect::<Result<Vec<_>>>()?;
    Ok(Selection {
        indices,
        coverage_trace: trace,
    })
}

/// Monte Carlo mean reward for every (instance, strategy) cell. Each cell
/// draws from its own substream, so the result does not depend on how cells
/// are scheduled across threads.
pub fn estimate_reward_matrix<E: SequenceEnv>(
    env: &E,
    instances: &[E::Instance],
    pool: &CandidatePool,
    samples_per_cell: usize,
    streams: &Streams,
) -> Result<RewardMatrix> {
    if samples_per_cell == 0 {
        return Err(Error::InvalidConfig("samples_per_cell must be >= 1".into()));
    }
    if instances.is_empty() {
        return Err(Error::InvalidConfig("no validation instances".into()));
    }
    let m = pool.len();
    let cells: Vec<f64> = (0..instances.len() * m)
        .into_par_iter()
        .map(|cell| {
            let (i, s) = (cell / m, cell % m);
            let inst = &instances[i];
            let mut rng = streams.stream("reward_matrix", &[env.instance_id(inst), s as u64]);
            let action = &pool.strategies()[s];
            let mut total = 0.0;
            for _ in 0..samples_per_cell {
                total += env.sample_reward(inst, action, &mut rng)?;
            }
            Ok(total / samples_per_cell as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = cells.chunks(m).map(<[f64]>::to_vec).collect();
    RewardMatrix::new(
        rows,
        instances
            .iter()
            .map(|inst| env.instance_id(inst).to_string())
            .collect(),
        pool.ids(),
    )
}
