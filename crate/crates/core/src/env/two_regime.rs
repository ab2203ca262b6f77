//! Two classes of instances that prefer different decoding actions.
//!
//! Each class has a success probability per action. Sampled actions succeed
//! independently per draw. Greedy decoding is deterministic, so every greedy
//! draw on an instance returns the same verdict: Pass@B under greedy equals
//! Pass@1, while a sampled action with success `p` reaches `1 - (1-p)^B`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian, SequenceEnv};
use crate::actions::CandidatePool;
use crate::categorical::{apply_action, entropy, DecodingAction, Logits};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoRegimeEntry {
    pub action: DecodingAction,
    /// Success probability for class 0 and class 1.
    pub success: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoRegimeSpec {
    /// Probability that an instance belongs to class 0.
    pub class_mix: f64,
    #[serde(default = "default_obs_noise")]
    pub obs_noise: f64,
    pub table: Vec<TwoRegimeEntry>,
}

fn default_obs_noise() -> f64 {
    0.1
}

/// Reference next-token distribution used to score how exploratory an
/// action is: geometric with ratio e^-0.5 over 32 tokens.
fn reference_logits() -> Logits {
    Logits::new((0..32).map(|i| -0.5 * i as f64).collect()).expect("finite")
}

/// Entropy of `action` on the reference distribution, normalized to [0, 1].
pub fn stochasticity(action: &DecodingAction) -> Result<f64> {
    let z = reference_logits();
    Ok(entropy(&apply_action(&z, action)?) / (z.len() as f64).ln())
}

impl TwoRegimeSpec {
    /// Class 0 rewards precision (greedy 0.9, sampled `0.6 (1 - h)`); class 1
    /// rewards exploration (greedy 0.02, sampled `0.05 + 0.5 h`), where `h`
    /// is the action's normalized entropy on a reference distribution.
    pub fn from_pool(pool: &CandidatePool, class_mix: f64) -> Result<Self> {
        let table = pool
            .strategies()
            .iter()
            .map(|a| {
                let success = if a.is_greedy() {
                    [0.9, 0.02]
                } else {
                    let h = stochasticity(a)?;
                    [0.6 * (1.0 - h), 0.05 + 0.5 * h]
                };
                Ok(TwoRegimeEntry {
                    action: *a,
                    success,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            class_mix,
            obs_noise: default_obs_noise(),
            table,
        })
    }

    /// Over {greedy, T=0.5, 1.0, 1.25}: class 0 is best served by greedy at
    /// B = 1 but by T = 0.5 at B = 8; class 1 by T = 1.25 at every budget.
    pub fn budget_split() -> Self {
        let rows = [
            (DecodingAction::greedy(), [0.9, 0.0]),
            (DecodingAction::temperature(0.5).expect("valid"), [0.6, 0.1]),
            (DecodingAction::temperature(1.0).expect("valid"), [0.2, 0.25]),
            (DecodingAction::temperature(1.25).expect("valid"), [0.1, 0.35]),
        ];
        Self {
            class_mix: 0.5,
            obs_noise: default_obs_noise(),
            table: rows
                .into_iter()
                .map(|(action, success)| TwoRegimeEntry { action, success })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.class_mix) {
            return Err(Error::InvalidConfig(format!(
                "two-regime class_mix {} outside [0, 1]",
                self.class_mix
            )));
        }
        if self.table.is_empty() {
            return Err(Error::InvalidConfig("two-regime table is empty".into()));
        }
        for e in &self.table {
            if e.success.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidConfig(format!(
                    "two-regime success probabilities for {} outside [0, 1]",
                    e.action
                )));
            }
        }
        CandidatePool::new(self.table.iter().map(|e| e.action).collect())?;
        if !(self.obs_noise >= 0.0 && self.obs_noise.is_finite()) {
            return Err(Error::InvalidConfig("obs_noise must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn success(&self, class: usize, action: &DecodingAction) -> Result<f64> {
        self.table
            .iter()
            .find(|e| e.action == *action)
            .map(|e| e.success[class])
            .ok_or_else(|| Error::InvalidConfig(format!("action {action} not in two-regime table")))
    }

    /// Expected Pass@B for one class under a fixed action.
    pub fn expected_pass(&self, class: usize, action: &DecodingAction, budget: u32) -> Result<f64> {
        let p = self.success(class, action)?;
        Ok(if action.is_greedy() {
            p
        } else {
            1.0 - (1.0 - p).powi(budget as i32)
        })
    }

    /// Best action index within `actions` for `class` at budget `B`, with
    /// its expected Pass@B.
    pub fn class_optimum(
        &self,
        class: usize,
        actions: &[DecodingAction],
        budget: u32,
    ) -> Result<(usize, f64)> {
        let mut out = (0, f64::NEG_INFINITY);
        for (i, a) in actions.iter().enumerate() {
            let v = self.expected_pass(class, a, budget)?;
            if v > out.1 {
                out = (i, v);
            }
        }
        Ok(out)
    }

    /// Mixture-weighted value of the per-class oracle.
    pub fn oracle_value(&self, actions: &[DecodingAction], budget: u32) -> Result<f64> {
        let v0 = self.class_optimum(0, actions, budget)?.1;
        let v1 = self.class_optimum(1, actions, budget)?.1;
        Ok(self.class_mix * v0 + (1.0 - self.class_mix) * v1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeInstance {
    pub id: u64,
    pub class: usize,
    /// Uniform draw fixing the greedy verdict for this instance.
    greedy_draw: f64,
    features: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TwoRegime {
    spec: TwoRegimeSpec,
}

impl TwoRegime {
    pub fn new(spec: TwoRegimeSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &TwoRegimeSpec {
        &self.spec
    }
}

impl SequenceEnv for TwoRegime {
    type Instance = RegimeInstance;

    fn make_instance(&self, id: u64, rng: &mut StreamRng) -> RegimeInstance {
        let class = if rng.gen::<f64>() < self.spec.class_mix { 0 } else { 1 };
        let greedy_draw = rng.gen::<f64>();
        let mut features = vec![0.0, 0.0];
        features[class] = 1.0;
        for f in &mut features {
            *f += gaussian(rng, self.spec.obs_noise);
        }
        RegimeInstance {
            id,
            class,
            greedy_draw,
            features,
        }
    }

    fn instance_id(&self, instance: &RegimeInstance) -> u64 {
        instance.id
    }

    fn context_dim(&self) -> usize {
        2
    }

    fn context<'a>(&self, instance: &'a RegimeInstance) -> &'a [f64] {
        &instance.features
    }

    fn sample_reward(
        &self,
        instance: &RegimeInstance,
        action: &DecodingAction,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        let p = self.spec.success(instance.class, action)?;
        let u = if action.is_greedy() {
            instance.greedy_draw
        } else {
            rng.gen::<f64>()
        };
        Ok(if u < p { 1.0 } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{build_candidate_pool, GridSpec};
    use crate::rng::Streams;

    fn spec_with(greedy: [f64; 2], explore: [f64; 2]) -> TwoRegimeSpec {
        TwoRegimeSpec {
            class_mix: 0.5,
            obs_noise: 0.1,
            table: vec![
                TwoRegimeEntry {
                    action: DecodingAction::greedy(),
                    success: greedy,
                },
                TwoRegimeEntry {
                    action: DecodingAction::temperature(1.0).unwrap(),
                    success: explore,
                },
            ],
        }
    }

    fn instance_of_class(env: &TwoRegime, class: usize, streams: &Streams) -> RegimeInstance {
        (0..)
            .map(|id| env.make_instance(id, &mut streams.stream("i", &[id])))
            .find(|i| i.class == class)
            .unwrap()
    }

    #[test]
    fn degenerate_probabilities() {
        let env = TwoRegime::new(spec_with([1.0, 0.0], [0.5, 0.5])).unwrap();
        let streams = Streams::new(5);
        let a = instance_of_class(&env, 0, &streams);
        let b = instance_of_class(&env, 1, &streams);
        let mut rng = streams.stream("r", &[]);
        for _ in 0..100 {
            assert_eq!(env.sample_reward(&a, &DecodingAction::greedy(), &mut rng).unwrap(), 1.0);
            assert_eq!(env.sample_reward(&b, &DecodingAction::greedy(), &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn unknown_action_is_config_error() {
        let env = TwoRegime::new(spec_with([1.0, 0.0], [0.5, 0.5])).unwrap();
        let streams = Streams::new(5);
        let inst = env.make_instance(0, &mut streams.stream("i", &[0]));
        let err = env
            .sample_reward(&inst, &DecodingAction::temperature(0.3).unwrap(), &mut streams.stream("r", &[]))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn pass_at_eight_of_exploratory_action() {
        let env = TwoRegime::new(spec_with([1.0, 0.0], [0.5, 0.5])).unwrap();
        let streams = Streams::new(8);
        let inst = instance_of_class(&env, 1, &streams);
        let action = DecodingAction::temperature(1.0).unwrap();
        let trials = 20_000;
        let mut rng = streams.stream("r", &[]);
        let mut hits = 0usize;
        for _ in 0..trials {
            let any = (0..8).any(|_| env.sample_reward(&inst, &action, &mut rng).unwrap() > 0.5);
            hits += usize::from(any);
        }
        let p = 1.0 - 0.5f64.powi(8);
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        let est = hits as f64 / trials as f64;
        assert!((est - p).abs() < 3.0 * sigma, "{est} vs {p}");
        assert_eq!(env.spec().expected_pass(1, &action, 8).unwrap(), p);
    }

    #[test]
    fn budget_split_optima_differ() {
        let spec = TwoRegimeSpec::budget_split();
        let actions: Vec<_> = spec.table.iter().map(|e| e.action).collect();
        assert_eq!(spec.class_optimum(0, &actions, 1).unwrap().0, 0);
        assert_eq!(spec.class_optimum(0, &actions, 8).unwrap().0, 1);
        assert_eq!(spec.class_optimum(1, &actions, 1).unwrap().0, 3);
        assert_eq!(spec.class_optimum(1, &actions, 8).unwrap().0, 3);
    }

    #[test]
    fn pool_table_covers_default_grid() {
        let pool = build_candidate_pool(&GridSpec::default()).unwrap();
        let spec = TwoRegimeSpec::from_pool(&pool, 0.5).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.table.len(), 180);
        for e in &spec.table {
            let h = stochasticity(&e.action).unwrap();
            assert!((0.0..=1.0).contains(&h));
        }
    }
}
