//! A chain of decoding steps with planted forking tokens.
//!
//! Off-fork steps put most base mass on the correct token, so sharpening
//! helps there. At a fork the viable branch is never the argmax, so greedy
//! decoding always fails and higher temperature helps. A controller that
//! decodes greedily off-fork and hot at forks beats every static action.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{gaussian, rollout, SequenceEnv, TokenEnv, Trajectory};
use crate::categorical::{apply_action, DecodingAction, Logits};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Logit assigned to tokens with zero base mass; `exp` of it underflows to 0.
const ZERO_LOGIT: f64 = -1.0e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForkingChainSpec {
    pub length: usize,
    pub fork_positions: Vec<usize>,
    /// Base probability of the viable branch at a fork; the dead-end branch
    /// takes the rest.
    pub fork_viable_prob: f64,
    /// Total base probability on dead-end tokens at non-fork steps.
    pub off_fork_noise: f64,
    /// How many dead-end tokens share `off_fork_noise`.
    #[serde(default = "default_noise_tokens")]
    pub noise_tokens: usize,
    pub vocab_size: usize,
    /// Standard deviation of the additive observation noise.
    #[serde(default = "default_obs_noise")]
    pub obs_noise: f64,
}

fn default_noise_tokens() -> usize {
    1
}

fn default_obs_noise() -> f64 {
    0.1
}

impl Default for ForkingChainSpec {
    fn default() -> Self {
        Self {
            length: 20,
            fork_positions: vec![6, 13],
            fork_viable_prob: 0.45,
            off_fork_noise: 0.3,
            noise_tokens: 1,
            vocab_size: 8,
            obs_noise: 0.1,
        }
    }
}

impl ForkingChainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("forking chain: {m}")));
        if self.length == 0 {
            return bad("length must be >= 1".into());
        }
        if !(self.fork_viable_prob > 0.0 && self.fork_viable_prob < 0.5) {
            return bad(format!(
                "fork_viable_prob must be in (0, 0.5), got {}",
                self.fork_viable_prob
            ));
        }
        if !(0.0..0.5).contains(&self.off_fork_noise) {
            return bad(format!(
                "off_fork_noise must be in [0, 0.5), got {}",
                self.off_fork_noise
            ));
        }
        if self.noise_tokens == 0 || self.noise_tokens + 1 > self.vocab_size {
            return bad(format!(
                "noise_tokens must be in 1..={}",
                self.vocab_size.saturating_sub(1)
            ));
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be >= 2".into());
        }
        let mut seen = vec![false; self.length];
        for &f in &self.fork_positions {
            if f >= self.length {
                return bad(format!("fork position {f} outside chain of {}", self.length));
            }
            if std::mem::replace(&mut seen[f], true) {
                return bad(format!("duplicate fork position {f}"));
            }
        }
        if !(self.obs_noise >= 0.0 && self.obs_noise.is_finite()) {
            return bad("obs_noise must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn num_forks(&self) -> usize {
        self.fork_positions.len()
    }

    pub fn is_fork(&self, step: usize) -> bool {
        self.fork_positions.contains(&step)
    }

    /// Base logits with the target at token 0 and distractors after it.
    fn canonical_logits(&self, fork: bool) -> Logits {
        let mut z = vec![ZERO_LOGIT; self.vocab_size];
        if fork {
            z[0] = self.fork_viable_prob.ln();
            z[1] = (1.0 - self.fork_viable_prob).ln();
        } else {
            z[0] = (1.0 - self.off_fork_noise).ln();
            if self.off_fork_noise > 0.0 {
                let each = (self.off_fork_noise / self.noise_tokens as f64).ln();
                for zi in z.iter_mut().skip(1).take(self.noise_tokens) {
                    *zi = each;
                }
            }
        }
        Logits::new(z).expect("finite logits")
    }

    /// Probability that `action` emits the target token at a fork (or
    /// off-fork) step.
    pub fn step_success(&self, action: &DecodingAction, fork: bool) -> Result<f64> {
        Ok(apply_action(&self.canonical_logits(fork), action)?.probs()[0])
    }

    /// Expected reward of using `action` at every step.
    pub fn static_value(&self, action: &DecodingAction) -> Result<f64> {
        let forks = self.num_forks() as i32;
        let off = (self.length - self.num_forks()) as i32;
        Ok(self.step_success(action, true)?.powi(forks)
            * self.step_success(action, false)?.powi(off))
    }

    /// Best per-step-kind action choice from `actions`: returns the expected
    /// reward and the (off-fork, fork) action indices achieving it.
    pub fn oracle_value(&self, actions: &[DecodingAction]) -> Result<(f64, usize, usize)> {
        let best = |fork: bool| -> Result<(usize, f64)> {
            let mut out = (0, f64::NEG_INFINITY);
            for (i, a) in actions.iter().enumerate() {
                let p = self.step_success(a, fork)?;
                if p > out.1 {
                    out = (i, p);
                }
            }
            Ok(out)
        };
        let (off_idx, off_p) = best(false)?;
        let (fork_idx, fork_p) = best(true)?;
        let value = fork_p.powi(self.num_forks() as i32)
            * off_p.powi((self.length - self.num_forks()) as i32);
        Ok((value, off_idx, fork_idx))
    }

    /// Best single action from `actions` used at every step.
    pub fn best_static(&self, actions: &[DecodingAction]) -> Result<(usize, f64)> {
        let mut out = (0, f64::NEG_INFINITY);
        for (i, a) in actions.iter().enumerate() {
            let v = self.static_value(a)?;
            if v > out.1 {
                out = (i, v);
            }
        }
        Ok(out)
    }
}

/// One chain: a random relabeling of token ids at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainInstance {
    pub id: u64,
    /// Token that must be emitted at each step.
    pub targets: Vec<usize>,
    logits: Vec<Logits>,
    context: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForkingChain {
    spec: ForkingChainSpec,
}

impl ForkingChain {
    pub fn new(spec: ForkingChainSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &ForkingChainSpec {
        &self.spec
    }

    /// Runs a trajectory with a static action at every step.
    pub fn static_rollout(
        &self,
        instance: &ChainInstance,
        action: &DecodingAction,
        rng: &mut StreamRng,
    ) -> Result<Trajectory> {
        rollout(self, instance, std::slice::from_ref(action), |_, _| Ok(0), rng)
    }
}

impl TokenEnv for ForkingChain {
    type Instance = ChainInstance;

    fn make_instance(&self, id: u64, rng: &mut StreamRng) -> ChainInstance {
        let v = self.spec.vocab_size;
        let mut targets = Vec::with_capacity(self.spec.length);
        let mut logits = Vec::with_capacity(self.spec.length);
        let mut perm: Vec<usize> = (0..v).collect();
        for step in 0..self.spec.length {
            perm.shuffle(rng);
            let canon = self.spec.canonical_logits(self.spec.is_fork(step));
            let mut z = vec![0.0; v];
            for (canonical, &token) in perm.iter().enumerate() {
                z[token] = canon.values()[canonical];
            }
            targets.push(perm[0]);
            logits.push(Logits::new(z).expect("finite logits"));
        }
        let fork_fraction = self.spec.num_forks() as f64 / self.spec.length as f64;
        let context = vec![
            fork_fraction + gaussian(rng, self.spec.obs_noise),
            1.0 + gaussian(rng, self.spec.obs_noise),
        ];
        ChainInstance {
            id,
            targets,
            logits,
            context,
        }
    }

    fn instance_id(&self, instance: &ChainInstance) -> u64 {
        instance.id
    }

    fn horizon(&self) -> usize {
        self.spec.length
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn base_logits(&self, instance: &ChainInstance, prefix: &[usize]) -> Logits {
        instance.logits[prefix.len()].clone()
    }

    /// One-hot of (fork, non-fork) plus Gaussian noise.
    fn observe(&self, _instance: &ChainInstance, prefix: &[usize], rng: &mut StreamRng) -> Vec<f64> {
        let fork = self.spec.is_fork(prefix.len());
        let (a, b) = if fork { (1.0, 0.0) } else { (0.0, 1.0) };
        vec![
            a + gaussian(rng, self.spec.obs_noise),
            b + gaussian(rng, self.spec.obs_noise),
        ]
    }

    fn verify(&self, instance: &ChainInstance, tokens: &[usize]) -> f64 {
        let ok = tokens.len() == instance.targets.len()
            && tokens.iter().zip(&instance.targets).all(|(t, g)| t == g);
        if ok {
            1.0
        } else {
            0.0
        }
    }
}

impl SequenceEnv for ForkingChain {
    type Instance = ChainInstance;

    fn make_instance(&self, id: u64, rng: &mut StreamRng) -> ChainInstance {
        <Self as TokenEnv>::make_instance(self, id, rng)
    }

    fn instance_id(&self, instance: &ChainInstance) -> u64 {
        instance.id
    }

    fn context_dim(&self) -> usize {
        2
    }

    fn context<'a>(&self, instance: &'a ChainInstance) -> &'a [f64] {
        &instance.context
    }

    fn sample_reward(
        &self,
        instance: &ChainInstance,
        action: &DecodingAction,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        Ok(self.static_rollout(instance, action, rng)?.reward)
    }
}
