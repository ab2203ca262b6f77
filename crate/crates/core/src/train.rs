//! REINFORCE training for both adapters.
//!
//! Each step draws a batch of episodes in parallel from named substreams
//! (one per `(step, episode)`), then accumulates gradients serially in
//! episode order and applies one Adam update per network. Results are
//! therefore independent of the worker count.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::{entropy, sample, CategoricalDist};
use crate::env::{
    evaluate_seq, evaluate_tok, rollout, SeqMethod, SequenceEnv, TokMethod, TokenEnv,
};
use crate::error::{Error, Result};
use crate::net::{adam_step, Mode, OptimizerState};
use crate::policy::{SeqForward, SeqPolicy, TokForward, TokPolicy};
use crate::rng::Streams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineMode {
    BatchMean,
    Ema { decay: f64 },
}

/// Drops training instances whose rolling mean reward leaves `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptFilter {
    pub min: f64,
    pub max: f64,
    pub window: usize,
}

impl Default for PromptFilter {
    fn default() -> Self {
        Self {
            min: 0.02,
            max: 0.98,
            window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Entropy coefficient, decayed linearly from `beta_start` to `beta_end`.
    pub beta_start: f64,
    pub beta_end: f64,
    pub baseline: BaselineMode,
    /// Parallel budgets sampled per episode by budget-aware sequence policies.
    pub parallel_budgets: Vec<u32>,
    /// Parallel budget used by budget-agnostic sequence policies.
    pub fixed_budget: u32,
    /// Token budgets sampled per episode by budget-aware token policies;
    /// empty means the environment horizon.
    pub token_budgets: Vec<usize>,
    pub mask_threshold: f64,
    pub prompt_filter: Option<PromptFilter>,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub steps_per_epoch: usize,
    pub train_instances: usize,
    /// Validation every this many steps; 0 disables it.
    pub eval_interval: usize,
    pub val_instances: usize,
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 1000,
            beta_start: 0.05,
            beta_end: 0.005,
            baseline: BaselineMode::BatchMean,
            parallel_budgets: vec![1, 2, 4, 8],
            fixed_budget: 1,
            token_budgets: Vec::new(),
            mask_threshold: 0.95,
            prompt_filter: Some(PromptFilter::default()),
            learning_rate: 0.01,
            lr_decay: 0.97,
            steps_per_epoch: 100,
            train_instances: 1000,
            eval_interval: 100,
            val_instances: 200,
            val_samples: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("train: {m}")));
        if self.batch_size == 0 || self.train_instances == 0 {
            return bad("batch_size and train_instances must be >= 1".into());
        }
        for (name, b) in [("beta_start", self.beta_start), ("beta_end", self.beta_end)] {
            if !(b.is_finite() && b >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {b}"));
            }
        }
        if let BaselineMode::Ema { decay } = self.baseline {
            if !(0.0..1.0).contains(&decay) {
                return bad(format!("EMA decay must be in [0, 1), got {decay}"));
            }
        }
        if self.parallel_budgets.is_empty() || self.parallel_budgets.contains(&0) {
            return bad("parallel_budgets must be non-empty and positive".into());
        }
        if self.fixed_budget == 0 {
            return bad("fixed_budget must be >= 1".into());
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold <= 1.0) {
            return bad(format!("mask_threshold must be in (0, 1], got {}", self.mask_threshold));
        }
        if let Some(f) = &self.prompt_filter {
            if f.window == 0 || !(0.0..=1.0).contains(&f.min) || !(f.min..=1.0).contains(&f.max) {
                return bad("prompt_filter needs window >= 1 and 0 <= min <= max <= 1".into());
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]".into());
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be >= 1".into());
        }
        if self.eval_interval > 0 && (self.val_instances < 2 || self.val_samples == 0) {
            return bad("validation needs >= 2 instances and >= 1 sample".into());
        }
        Ok(())
    }

    /// Entropy coefficient at `step`.
    pub fn beta(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.beta_start;
        }
        let frac = (step.min(self.steps - 1)) as f64 / (self.steps - 1) as f64;
        self.beta_start + (self.beta_end - self.beta_start) * frac
    }

    fn token_budgets_for(&self, horizon: usize) -> Result<Vec<usize>> {
        if self.token_budgets.is_empty() {
            return Ok(vec![horizon]);
        }
        if let Some(b) = self.token_budgets.iter().find(|&&b| b < horizon) {
            return Err(Error::InvalidConfig(format!(
                "token budget {b} shorter than horizon {horizon}"
            )));
        }
        Ok(self.token_budgets.clone())
    }
}

/// One policy decision inside an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub features: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub probs: Vec<f64>,
    /// Masked steps contribute no gradient.
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instance: usize,
    pub decisions: Vec<StepRecord>,
    pub reward: f64,
    pub budget: usize,
}

/// Baseline for a batch of rewards. In EMA mode `state` holds the running
/// value and is updated in place; the updated value is returned.
pub fn compute_baseline(rewards: &[f64], mode: BaselineMode, state: &mut f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::InvalidInput("baseline of an empty batch".into()));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(match mode {
        BaselineMode::BatchMean => mean,
        BaselineMode::Ema { decay } => {
            *state = decay * *state + (1.0 - decay) * mean;
            *state
        }
    })
}

/// Gradient of `-(advantage * log pi(action) + beta * H(pi))` with respect to
/// the raw policy logits, where `pi = softmax(logits / temperature)`.
pub fn policy_gradient_logits(
    dist: &CategoricalDist,
    action: usize,
    advantage: f64,
    beta: f64,
    temperature: f64,
) -> Vec<f64> {
    let p = dist.probs();
    let h = entropy(dist);
    p.iter()
        .enumerate()
        .map(|(j, &pj)| {
            let score = f64::from(u8::from(j == action)) - pj;
            let dh = if pj > 0.0 { -pj * (pj.ln() + h) } else { 0.0 };
            -(advantage * score + beta * dh) / temperature
        })
        .collect()
}

/// Per-step row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mean_reward: f64,
    pub baseline: f64,
    pub entropy: f64,
    pub action_probs: Vec<f64>,
    pub lr: f64,
    pub active_instances: usize,
    pub validation: Option<f64>,
}

pub fn write_trace_csv<W: Write>(out: W, action_names: &[String], rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "step".to_string(),
        "mean_reward".into(),
        "baseline".into(),
        "entropy".into(),
    ];
    header.extend(action_names.iter().map(|n| format!("p[{n}]")));
    header.extend(["lr".into(), "active_instances".into(), "validation".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.step.to_string(),
            r.mean_reward.to_string(),
            r.baseline.to_string(),
            r.entropy.to_string(),
        ];
        rec.extend(r.action_probs.iter().map(f64::to_string));
        rec.push(r.lr.to_string());
        rec.push(r.active_instances.to_string());
        rec.push(r.validation.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

/// Everything besides parameters needed to resume training exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub step: usize,
    pub ema: f64,
    pub windows: Vec<VecDeque<f64>>,
    pub dropped: Vec<bool>,
}

impl TrainProgress {
    fn new(instances: usize) -> Self {
        Self {
            step: 0,
            ema: 0.0,
            windows: vec![VecDeque::new(); instances],
            dropped: vec![false; instances],
        }
    }

    fn active(&self) -> Vec<usize> {
        (0..self.dropped.len()).filter(|&i| !self.dropped[i]).collect()
    }

    fn record(&mut self, filter: Option<&PromptFilter>, instance: usize, reward: f64) {
        let Some(f) = filter else { return };
        let w = &mut self.windows[instance];
        w.push_back(reward);
        if w.len() > f.window {
            w.pop_front();
        }
        if w.len() == f.window {
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            if mean < f.min || mean > f.max {
                self.dropped[instance] = true;
            }
        }
    }
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged(format!("{what} is {v} at step {step}")))
    }
}

fn add_into(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(g) {
        *a += scale * x;
    }
}

struct BatchStats {
    mean_reward: f64,
    baseline: f64,
    entropy: f64,
    action_probs: Vec<f64>,
}

fn batch_stats(episodes: &[EpisodeRecord], baseline: f64, num_actions: usize) -> BatchStats {
    let mut probs = vec![0.0; num_actions];
    let mut ent = 0.0;
    let mut count = 0usize;
    for ep in episodes {
        for d in &ep.decisions {
            add_into(&mut probs, &d.probs, 1.0);
            ent += entropy(&CategoricalDist::new(d.probs.clone()).expect("policy distribution"));
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    probs.iter_mut().for_each(|p| *p /= n);
    BatchStats {
        mean_reward: episodes.iter().map(|e| e.reward).sum::<f64>() / episodes.len() as f64,
        baseline,
        entropy: ent / n,
        action_probs: probs,
    }
}

/// Sequence-level REINFORCE trainer.
pub struct SeqTrainer<'a, E: SequenceEnv> {
    env: &'a E,
    cfg: TrainConfig,
    streams: Streams,
    train: Vec<E::Instance>,
    val: Vec<E::Instance>,
    pub policy: SeqPolicy,
    pub trunk_opt: OptimizerState,
    pub embed_opt: Option<OptimizerState>,
    pub progress: TrainProgress,
}

impl<'a, E: SequenceEnv> SeqTrainer<'a, E> {
    pub fn new(env: &'a E, policy: SeqPolicy, cfg: TrainConfig, streams: Streams) -> Result<Self> {
        cfg.validate()?;
        if policy.context_dim() != env.context_dim() {
            return Err(Error::Incompatible(format!(
                "policy context {} != environment context {}",
                policy.context_dim(),
                env.context_dim()
            )));
        }
        let train = crate::env::seq_instances(env, &streams, "train", cfg.train_instances);
        let val = if cfg.eval_interval > 0 {
            crate::env::seq_instances(env, &streams, "val", cfg.val_instances)
        } else {
            Vec::new()
        };
        let trunk_opt = OptimizerState::new(policy.trunk().num_params(), cfg.learning_rate, cfg.lr_decay);
        let embed_opt = policy
            .embedder()
            .map(|e| OptimizerState::new(e.num_params(), cfg.learning_rate, cfg.lr_decay));
        let progress = TrainProgress::new(train.len());
        Ok(Self {
            env,
            cfg,
            streams,
            train,
            val,
            policy,
            trunk_opt,
            embed_opt,
            progress,
        })
    }

    /// Restores optimizer moments and loop state saved from an earlier run
    /// with the same config and seed.
    pub fn resume(
        &mut self,
        trunk_opt: OptimizerState,
        embed_opt: Option<OptimizerState>,
        progress: TrainProgress,
    ) -> Result<()> {
        if trunk_opt.num_params() != self.policy.trunk().num_params()
            || embed_opt.as_ref().map(OptimizerState::num_params)
                != self.policy.embedder().map(|e| e.num_params())
            || progress.dropped.len() != self.train.len()
        {
            return Err(Error::Incompatible("resume state does not match the trainer".into()));
        }
        self.trunk_opt = trunk_opt;
        self.embed_opt = embed_opt;
        self.progress = progress;
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.progress.step >= self.cfg.steps
    }

    fn episode(&self, step: usize, j: usize, active: &[usize]) -> Result<(EpisodeRecord, SeqForward)> {
        let mut rng = self.streams.stream("train_seq", &[step as u64, j as u64]);
        let instance = active[rng.gen_range(0..active.len())];
        let inst = &self.train[instance];
        let budget = if self.policy.is_budget_aware() {
            self.cfg.parallel_budgets[rng.gen_range(0..self.cfg.parallel_budgets.len())]
        } else {
            self.cfg.fixed_budget
        };
        let context = self.env.context(inst);
        let fwd = self.policy.forward(context, Some(budget), Mode::Train, &mut rng)?;
        let action = sample(&fwd.dist, &mut rng);
        let chosen = &self.policy.actions().actions[action];
        let mut reward = f64::NEG_INFINITY;
        for _ in 0..budget {
            reward = reward.max(self.env.sample_reward(inst, chosen, &mut rng)?);
        }
        let record = EpisodeRecord {
            instance,
            decisions: vec![StepRecord {
                features: context.to_vec(),
                action,
                log_prob: fwd.dist.probs()[action].ln(),
                probs: fwd.dist.probs().to_vec(),
                masked: false,
            }],
            reward,
            budget: budget as usize,
        };
        Ok((record, fwd))
    }

    /// Runs one training step and returns its trace row.
    pub fn step(&mut self) -> Result<TraceRow> {
        let step = self.progress.step;
        let active = self.progress.active();
        if active.is_empty() {
            return Err(Error::TrainingDiverged(
                "prompt filter removed every training instance".into(),
            ));
        }
        let batch: Vec<(EpisodeRecord, SeqForward)> = (0..self.cfg.batch_size)
            .into_par_iter()
            .map(|j| self.episode(step, j, &active))
            .collect::<Result<_>>()?;
        let rewards: Vec<f64> = batch.iter().map(|(e, _)| e.reward).collect();
        for &r in &rewards {
            check_finite(step, "reward", r)?;
        }
        let baseline = compute_baseline(&rewards, self.cfg.baseline, &mut self.progress.ema)?;
        let beta = self.cfg.beta(step);
        let temp = self.policy.policy_temperature();
        let scale = 1.0 / batch.len() as f64;
        let policy = &self.policy;
        let grads: Vec<_> = batch
            .par_iter()
            .map(|(ep, fwd)| {
                let d = &ep.decisions[0];
                let g = policy_gradient_logits(&fwd.dist, d.action, ep.reward - baseline, beta, temp);
                policy.backward(fwd, &g)
            })
            .collect::<Result<_>>()?;
        let mut g_trunk = vec![0.0; self.policy.trunk().num_params()];
        let mut g_embed = self.policy.embedder().map(|e| vec![0.0; e.num_params()]);
        for g in &grads {
            add_into(&mut g_trunk, &g.trunk, scale);
            if let (Some(acc), Some(ge)) = (g_embed.as_mut(), g.embedder.as_ref()) {
                add_into(acc, ge, scale);
            }
        }
        let lr = self.trunk_opt.lr();
        adam_step(self.policy.trunk_mut().params_mut(), &g_trunk, &mut self.trunk_opt)?;
        if let (Some(e), Some(opt), Some(g)) =
            (self.policy.embedder_mut(), self.embed_opt.as_mut(), g_embed.as_ref())
        {
            adam_step(e.params_mut(), g, opt)?;
        }
        let episodes: Vec<EpisodeRecord> = batch.into_iter().map(|(e, _)| e).collect();
        for ep in &episodes {
            self.progress.record(self.cfg.prompt_filter.as_ref(), ep.instance, ep.reward);
        }
        self.progress.step += 1;
        if self.progress.step.is_multiple_of(self.cfg.steps_per_epoch) {
            self.trunk_opt.end_epoch();
            if let Some(o) = self.embed_opt.as_mut() {
                o.end_epoch();
            }
        }
        let validation = if self.cfg.eval_interval > 0 && self.progress.step.is_multiple_of(self.cfg.eval_interval) {
            Some(self.validate()?)
        } else {
            None
        };
        let stats = batch_stats(&episodes, baseline, self.policy.actions().len());
        check_finite(step, "policy entropy", stats.entropy)?;
        Ok(TraceRow {
            step,
            mean_reward: stats.mean_reward,
            baseline: stats.baseline,
            entropy: stats.entropy,
            action_probs: stats.action_probs,
            lr,
            active_instances: active.len(),
            validation,
        })
    }

    /// Mean Pass@B on the validation split at the fixed budget.
    pub fn validate(&self) -> Result<f64> {
        let k = self.cfg.fixed_budget as usize;
        let streams = Streams::new(self.streams.key("validation", &[]));
        let (summary, _) = evaluate_seq(
            self.env,
            &self.val,
            SeqMethod::Policy(&self.policy),
            &[k],
            self.cfg.val_samples,
            &streams,
        )?;
        Ok(summary.scores[0].mean)
    }

    pub fn run(&mut self) -> Result<Vec<TraceRow>> {
        let mut rows = Vec::new();
        while !self.is_done() {
            rows.push(self.step()?);
        }
        Ok(rows)
    }
}

/// Trains a sequence-level policy for `cfg.steps` steps.
pub fn train_seq<E: SequenceEnv>(
    policy: SeqPolicy,
    env: &E,
    cfg: &TrainConfig,
    streams: &Streams,
) -> Result<(SeqPolicy, Vec<TraceRow>)> {
    let mut t = SeqTrainer::new(env, policy, cfg.clone(), *streams)?;
    let rows = t.run()?;
    Ok((t.policy, rows))
}

/// Sum over unmasked steps of the per-step logit gradients, backpropagated
/// through the policy. Masked steps are skipped entirely.
pub fn tok_episode_gradient(
    policy: &TokPolicy,
    record: &EpisodeRecord,
    forwards: &[TokForward],
    advantage: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    if forwards.len() != record.decisions.len() {
        return Err(Error::ContractViolation("one forward record per decision".into()));
    }
    let mut grad = vec![0.0; policy.trunk().num_params()];
    for (d, fwd) in record.decisions.iter().zip(forwards) {
        if d.masked {
            continue;
        }
        let g = policy_gradient_logits(&fwd.dist, d.action, advantage, beta, policy.policy_temperature());
        add_into(&mut grad, &policy.backward(fwd, &g)?, 1.0);
    }
    Ok(grad)
}

/// One training-mode trajectory with per-step sampled actions. Steps whose
/// base distribution has maximum probability above `mask_threshold` are
/// flagged as masked. The returned record's `instance` is 0.
pub fn tok_episode<E: TokenEnv>(
    policy: &TokPolicy,
    env: &E,
    instance: &E::Instance,
    budget: usize,
    mask_threshold: f64,
    rng: &mut crate::rng::StreamRng,
) -> Result<(EpisodeRecord, Vec<TokForward>)> {
    if budget < env.horizon() {
        return Err(Error::InvalidInput(format!(
            "token budget {budget} shorter than horizon {}",
            env.horizon()
        )));
    }
    let mut decisions = Vec::with_capacity(env.horizon());
    let mut forwards = Vec::with_capacity(env.horizon());
    let traj = rollout(
        env,
        instance,
        &policy.actions().actions,
        |view, rng| {
            let x = policy.features(view.observation, budget - view.step, budget)?;
            let fwd = policy.forward(&x, Mode::Train, rng)?;
            let action = sample(&fwd.dist, rng);
            decisions.push(StepRecord {
                features: x,
                action,
                log_prob: fwd.dist.probs()[action].ln(),
                probs: fwd.dist.probs().to_vec(),
                masked: view.base.max_prob() > mask_threshold,
            });
            forwards.push(fwd);
            Ok(action)
        },
        rng,
    )?;
    let record = EpisodeRecord {
        instance: 0,
        decisions,
        reward: traj.reward,
        budget,
    };
    Ok((record, forwards))
}

/// Token-level REINFORCE trainer.
pub struct TokTrainer<'a, E: TokenEnv> {
    env: &'a E,
    cfg: TrainConfig,
    streams: Streams,
    budgets: Vec<usize>,
    train: Vec<E::Instance>,
    val: Vec<E::Instance>,
    pub policy: TokPolicy,
    pub opt: OptimizerState,
    pub progress: TrainProgress,
}

impl<'a, E: TokenEnv> TokTrainer<'a, E> {
    pub fn new(env: &'a E, policy: TokPolicy, cfg: TrainConfig, streams: Streams) -> Result<Self> {
        cfg.validate()?;
        if policy.obs_dim() != env.obs_dim() {
            return Err(Error::Incompatible(format!(
                "policy observation {} != environment observation {}",
                policy.obs_dim(),
                env.obs_dim()
            )));
        }
        let budgets = cfg.token_budgets_for(env.horizon())?;
        let train = crate::env::tok_instances(env, &streams, "train", cfg.train_instances);
        let val = if cfg.eval_interval > 0 {
            crate::env::tok_instances(env, &streams, "val", cfg.val_instances)
        } else {
            Vec::new()
        };
        let opt = OptimizerState::new(policy.trunk().num_params(), cfg.learning_rate, cfg.lr_decay);
        let progress = TrainProgress::new(train.len());
        Ok(Self {
            env,
            cfg,
            streams,
            budgets,
            train,
            val,
            policy,
            opt,
            progress,
        })
    }

    pub fn resume(&mut self, opt: OptimizerState, progress: TrainProgress) -> Result<()> {
        if opt.num_params() != self.policy.trunk().num_params()
            || progress.dropped.len() != self.train.len()
        {
            return Err(Error::Incompatible("resume state does not match the trainer".into()));
        }
        self.opt = opt;
        self.progress = progress;
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.progress.step >= self.cfg.steps
    }

    fn episode(&self, step: usize, j: usize, active: &[usize]) -> Result<(EpisodeRecord, Vec<TokForward>)> {
        let mut rng = self.streams.stream("train_tok", &[step as u64, j as u64]);
        let instance = active[rng.gen_range(0..active.len())];
        let budget = if self.policy.is_budget_aware() {
            self.budgets[rng.gen_range(0..self.budgets.len())]
        } else {
            self.budgets[0]
        };
        let (mut record, forwards) = tok_episode(
            &self.policy,
            self.env,
            &self.train[instance],
            budget,
            self.cfg.mask_threshold,
            &mut rng,
        )?;
        record.instance = instance;
        Ok((record, forwards))
    }

    pub fn step(&mut self) -> Result<TraceRow> {
        let step = self.progress.step;
        let active = self.progress.active();
        if active.is_empty() {
            return Err(Error::TrainingDiverged(
                "prompt filter removed every training instance".into(),
            ));
        }
        let batch: Vec<(EpisodeRecord, Vec<TokForward>)> = (0..self.cfg.batch_size)
            .into_par_iter()
            .map(|j| self.episode(step, j, &active))
            .collect::<Result<_>>()?;
        let rewards: Vec<f64> = batch.iter().map(|(e, _)| e.reward).collect();
        for &r in &rewards {
            check_finite(step, "reward", r)?;
        }
        let baseline = compute_baseline(&rewards, self.cfg.baseline, &mut self.progress.ema)?;
        let beta = self.cfg.beta(step);
        let policy = &self.policy;
        let grads: Vec<Vec<f64>> = batch
            .par_iter()
            .map(|(ep, fwds)| tok_episode_gradient(policy, ep, fwds, ep.reward - baseline, beta))
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut g = vec![0.0; self.policy.trunk().num_params()];
        for ge in &grads {
            add_into(&mut g, ge, scale);
        }
        let lr = self.opt.lr();
        adam_step(self.policy.trunk_mut().params_mut(), &g, &mut self.opt)?;
        let episodes: Vec<EpisodeRecord> = batch.into_iter().map(|(e, _)| e).collect();
        for ep in &episodes {
            self.progress.record(self.cfg.prompt_filter.as_ref(), ep.instance, ep.reward);
        }
        self.progress.step += 1;
        if self.progress.step.is_multiple_of(self.cfg.steps_per_epoch) {
            self.opt.end_epoch();
        }
        let validation = if self.cfg.eval_interval > 0 && self.progress.step.is_multiple_of(self.cfg.eval_interval) {
            Some(self.validate()?)
        } else {
            None
        };
        let stats = batch_stats(&episodes, baseline, self.policy.actions().len());
        check_finite(step, "policy entropy", stats.entropy)?;
        Ok(TraceRow {
            step,
            mean_reward: stats.mean_reward,
            baseline: stats.baseline,
            entropy: stats.entropy,
            action_probs: stats.action_probs,
            lr,
            active_instances: active.len(),
            validation,
        })
    }

    /// Mean Pass@1 on the validation split with the first token budget.
    pub fn validate(&self) -> Result<f64> {
        let streams = Streams::new(self.streams.key("validation", &[]));
        let (summary, _) = evaluate_tok(
            self.env,
            &self.val,
            TokMethod::Policy(&self.policy),
            &[1],
            self.cfg.val_samples,
            self.budgets[0],
            &streams,
        )?;
        Ok(summary.scores[0].mean)
    }

    pub fn run(&mut self) -> Result<Vec<TraceRow>> {
        let mut rows = Vec::new();
        while !self.is_done() {
            rows.push(self.step()?);
        }
        Ok(rows)
    }
}

/// Trains a token-level policy for `cfg.steps` steps.
pub fn train_tok<E: TokenEnv>(
    policy: TokPolicy,
    env: &E,
    cfg: &TrainConfig,
    streams: &Streams,
) -> Result<(TokPolicy, Vec<TraceRow>)> {
    let mut t = TokTrainer::new(env, policy, cfg.clone(), *streams)?;
    let rows = t.run()?;
    Ok((t.policy, rows))
}
