//! Pass@k evaluation of static actions, uniform mixtures and trained
//! adapters, reported as mean with a normal-approximation 95% interval.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rollout, SequenceEnv, TokenEnv};
use crate::categorical::DecodingAction;
use crate::error::{Error, Result};
use crate::policy::{SeqPolicy, TokPolicy};
use crate::rng::Streams;

const Z_95: f64 = 1.959_963_984_540_054;

/// Unbiased Pass@k estimate `1 - C(n-c, k) / C(n, k)` from `c` correct
/// samples out of `n`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("pass@k needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if c > n {
        return Err(Error::InvalidInput(format!("{c} correct out of {n} samples")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
    let ratio: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub k: usize,
    pub mean: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub ci95: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scores: Vec<MetricScore>,
}

impl EvalSummary {
    pub fn score(&self, k: usize) -> Option<&MetricScore> {
        self.scores.iter().find(|s| s.k == k)
    }
}

/// One line of the per-episode JSON-lines log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub instance_id: u64,
    pub k: usize,
    /// Actions used by each sample (one entry per step for token-level).
    pub actions: Vec<Vec<usize>>,
    pub correct: usize,
    pub samples: usize,
    pub reward: f64,
    pub length: usize,
}

pub fn write_episode_logs<W: Write>(mut out: W, logs: &[EpisodeLog]) -> Result<()> {
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n").map_err(|e| Error::io("<episode log>", e))?;
    }
    Ok(())
}

fn summarize(ks: &[usize], per_k: Vec<Vec<f64>>) -> Result<EvalSummary> {
    let scores = ks
        .iter()
        .zip(per_k)
        .map(|(&k, values)| {
            let n = values.len();
            if n < 2 {
                return Err(Error::InvalidInput("evaluation needs >= 2 episodes".into()));
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Ok(MetricScore {
                k,
                mean,
                ci95: Z_95 * (var / n as f64).sqrt(),
                episodes: n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary { scores })
}

fn check_ks(ks: &[usize], samples: usize) -> Result<usize> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidInput("metrics must be non-empty Pass@k with k >= 1".into()));
    }
    let max_k = *ks.iter().max().expect("non-empty");
    Ok(samples.max(max_k))
}

/// How a sequence-level method picks its action for an instance.
#[derive(Debug, Clone, Copy)]
pub enum SeqMethod<'a> {
    Static(&'a DecodingAction),
    /// Uniformly random action per instance.
    Uniform(&'a [DecodingAction]),
    /// Deterministic adapter choice; budget-aware adapters see `B = k`.
    Policy(&'a SeqPolicy),
}

/// Mean Pass@k over `instances`. Each instance draws
/// `max(samples, k)` generations with the method's action.
pub fn evaluate_seq<E: SequenceEnv>(
    env: &E,
    instances: &[E::Instance],
    method: SeqMethod<'_>,
    ks: &[usize],
    samples: usize,
    streams: &Streams,
) -> Result<(EvalSummary, Vec<EpisodeLog>)> {
    let n = check_ks(ks, samples)?;
    let rows: Vec<(Vec<f64>, Vec<EpisodeLog>)> = instances
        .par_iter()
        .map(|inst| {
            let id = env.instance_id(inst);
            let mut values = Vec::with_capacity(ks.len());
            let mut logs = Vec::with_capacity(ks.len());
            for &k in ks {
                let mut rng = streams.stream("eval/seq", &[id, k as u64]);
                let (idx, action) = match method {
                    SeqMethod::Static(a) => (0, *a),
                    SeqMethod::Uniform(actions) => {
                        let i = rng.gen_range(0..actions.len());
                        (i, actions[i])
                    }
                    SeqMethod::Policy(p) => {
                        let d = p.select(env.context(inst), Some(k as u32), true, &mut rng)?;
                        (d.index, p.actions().actions[d.index])
                    }
                };
                let mut correct = 0;
                for _ in 0..n {
                    if env.sample_reward(inst, &action, &mut rng)? >= 0.5 {
                        correct += 1;
                    }
                }
                let v = pass_at_k(n, correct, k)?;
                values.push(v);
                logs.push(EpisodeLog {
                    instance_id: id,
                    k,
                    actions: vec![vec![idx]; n],
                    correct,
                    samples: n,
                    reward: v,
                    length: 1,
                });
            }
            Ok((values, logs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_k = vec![Vec::with_capacity(instances.len()); ks.len()];
    let mut all_logs = Vec::with_capacity(instances.len() * ks.len());
    for (values, logs) in rows {
        for (j, v) in values.into_iter().enumerate() {
            per_k[j].push(v);
        }
        all_logs.extend(logs);
    }
    Ok((summarize(ks, per_k)?, all_logs))
}

/// How a token-level method picks its action at each step.
#[derive(Debug, Clone, Copy)]
pub enum TokMethod<'a> {
    /// The same action at every step.
    Static(&'a DecodingAction),
    /// Uniformly random action at every step.
    Uniform(&'a [DecodingAction]),
    /// Fixed action index per step kind, used for closed-form oracles:
    /// `(action set, per-step index)`.
    Schedule(&'a [DecodingAction], &'a [usize]),
    /// Deterministic adapter choice per step.
    Policy(&'a TokPolicy),
}

/// Mean Pass@k for a token-level method, with `token_budget` as the budget
/// the policy conditions on.
pub fn evaluate_tok<E: TokenEnv>(
    env: &E,
    instances: &[E::Instance],
    method: TokMethod<'_>,
    ks: &[usize],
    samples: usize,
    token_budget: usize,
    streams: &Streams,
) -> Result<(EvalSummary, Vec<EpisodeLog>)> {
    let n = check_ks(ks, samples)?;
    if token_budget < env.horizon() {
        return Err(Error::InvalidInput(format!(
            "token budget {token_budget} shorter than horizon {}",
            env.horizon()
        )));
    }
    let static_set;
    let actions: &[DecodingAction] = match method {
        TokMethod::Static(a) => {
            static_set = [*a];
            &static_set
        }
        TokMethod::Uniform(a) | TokMethod::Schedule(a, _) => a,
        TokMethod::Policy(p) => &p.actions().actions,
    };
    if let TokMethod::Schedule(_, sched) = method {
        if sched.len() != env.horizon() || sched.iter().any(|&i| i >= actions.len()) {
            return Err(Error::InvalidInput("schedule does not match horizon/actions".into()));
        }
    }
    let rows: Vec<(Vec<f64>, Vec<EpisodeLog>)> = instances
        .par_iter()
        .map(|inst| {
            let id = env.instance_id(inst);
            let mut values = Vec::with_capacity(ks.len());
            let mut logs = Vec::with_capacity(ks.len());
            for &k in ks {
                let mut correct = 0;
                let mut used = Vec::with_capacity(n);
                for sample_idx in 0..n {
                    let mut rng = streams.stream("eval/tok", &[id, k as u64, sample_idx as u64]);
                    let traj = rollout(
                        env,
                        inst,
                        actions,
                        |view, rng| match method {
                            TokMethod::Static(_) => Ok(0),
                            TokMethod::Uniform(a) => Ok(rng.gen_range(0..a.len())),
                            TokMethod::Schedule(_, sched) => Ok(sched[view.step]),
                            TokMethod::Policy(p) => {
                                let x = p.features(view.observation, token_budget - view.step, token_budget)?;
                                Ok(p.select(&x, true, rng)?.index)
                            }
                        },
                        &mut rng,
                    )?;
                    if traj.reward >= 0.5 {
                        correct += 1;
                    }
                    used.push(traj.actions);
                }
                let v = pass_at_k(n, correct, k)?;
                values.push(v);
                logs.push(EpisodeLog {
                    instance_id: id,
                    k,
                    actions: used,
                    correct,
                    samples: n,
                    reward: v,
                    length: env.horizon(),
                });
            }
            Ok((values, logs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_k = vec![Vec::with_capacity(instances.len()); ks.len()];
    let mut all_logs = Vec::new();
    for (values, logs) in rows {
        for (j, v) in values.into_iter().enumerate() {
            per_k[j].push(v);
        }
        all_logs.extend(logs);
    }
    Ok((summarize(ks, per_k)?, all_logs))
}
