//! Frozen base-model environments with verifiable terminal rewards.
//!
//! Two interfaces: [`SequenceEnv`] for decisions made once per instance (the
//! contextual-bandit setting), and [`TokenEnv`] for per-step decisions over a
//! simulated next-token distribution.

mod bandit;
mod eval;
mod forking;
mod two_regime;

pub use bandit::TableBandit;
pub use eval::{
    evaluate_seq, evaluate_tok, pass_at_k, write_episode_logs, EpisodeLog, EvalSummary,
    MetricScore, SeqMethod, TokMethod,
};
pub use forking::{ChainInstance, ForkingChain, ForkingChainSpec};
pub use two_regime::{RegimeInstance, TwoRegime, TwoRegimeEntry, TwoRegimeSpec};

use rand::Rng;

use crate::categorical::{apply_action, sample, softmax, CategoricalDist, DecodingAction, Logits};
use crate::error::{Error, Result};
use crate::rng::{StreamRng, Streams};

/// Environment where one decoding action is chosen per instance and each
/// sample yields a terminal reward.
pub trait SequenceEnv: Sync {
    type Instance: Send + Sync;

    fn make_instance(&self, id: u64, rng: &mut StreamRng) -> Self::Instance;

    fn instance_id(&self, instance: &Self::Instance) -> u64;

    fn context_dim(&self) -> usize;

    /// Fixed per-instance features standing in for a prompt embedding.
    fn context<'a>(&self, instance: &'a Self::Instance) -> &'a [f64];

    /// One full generation under `action`, returning its verified reward.
    fn sample_reward(
        &self,
        instance: &Self::Instance,
        action: &DecodingAction,
        rng: &mut StreamRng,
    ) -> Result<f64>;
}

/// Environment with an explicit next-token distribution at every step.
pub trait TokenEnv: Sync {
    type Instance: Send + Sync;

    fn make_instance(&self, id: u64, rng: &mut StreamRng) -> Self::Instance;

    fn instance_id(&self, instance: &Self::Instance) -> u64;

    /// Number of decoding steps in a trajectory.
    fn horizon(&self) -> usize;

    fn obs_dim(&self) -> usize;

    fn base_logits(&self, instance: &Self::Instance, prefix: &[usize]) -> Logits;

    /// Step features standing in for the generator's hidden state.
    fn observe(&self, instance: &Self::Instance, prefix: &[usize], rng: &mut StreamRng)
        -> Vec<f64>;

    /// Terminal verifier; returns 0 or 1.
    fn verify(&self, instance: &Self::Instance, tokens: &[usize]) -> f64;
}

/// What a per-step controller sees before choosing an action.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: usize,
    pub observation: &'a [f64],
    pub base: &'a CategoricalDist,
}

/// A completed token-level rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<usize>,
    pub actions: Vec<usize>,
    /// Maximum base-distribution probability at each step.
    pub base_max_prob: Vec<f64>,
    pub reward: f64,
}

/// Run one trajectory. At every step the controller picks an index into
/// `actions`; the chosen transform is applied to the base logits and a token
/// is sampled from the result.
pub fn rollout<E, C>(
    env: &E,
    instance: &E::Instance,
    actions: &[DecodingAction],
    mut controller: C,
    rng: &mut StreamRng,
) -> Result<Trajectory>
where
    E: TokenEnv,
    C: FnMut(&StepView<'_>, &mut StreamRng) -> Result<usize>,
{
    let horizon = env.horizon();
    let mut tokens = Vec::with_capacity(horizon);
    let mut chosen = Vec::with_capacity(horizon);
    let mut max_probs = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let logits = env.base_logits(instance, &tokens);
        let base = softmax(&logits);
        let observation = env.observe(instance, &tokens, rng);
        let view = StepView {
            step,
            observation: &observation,
            base: &base,
        };
        let a = controller(&view, rng)?;
        let action = actions.get(a).ok_or_else(|| {
            Error::InvalidInput(format!(
                "controller chose action {a} of {}",
                actions.len()
            ))
        })?;
        let dist = apply_action(&logits, action)?;
        tokens.push(sample(&dist, rng));
        chosen.push(a);
        max_probs.push(base.max_prob());
    }
    let reward = env.verify(instance, &tokens);
    Ok(Trajectory {
        tokens,
        actions: chosen,
        base_max_prob: max_probs,
        reward,
    })
}

/// Deterministic instance set for a named split.
pub fn seq_instances<E: SequenceEnv>(
    env: &E,
    streams: &Streams,
    split: &str,
    count: usize,
) -> Vec<E::Instance> {
    (0..count as u64)
        .map(|id| env.make_instance(id, &mut streams.stream(&format!("instance/{split}"), &[id])))
        .collect()
}

pub fn tok_instances<E: TokenEnv>(
    env: &E,
    streams: &Streams,
    split: &str,
    count: usize,
) -> Vec<E::Instance> {
    (0..count as u64)
        .map(|id| env.make_instance(id, &mut streams.stream(&format!("instance/{split}"), &[id])))
        .collect()
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    sigma * z
}
