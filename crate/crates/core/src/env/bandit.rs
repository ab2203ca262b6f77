use serde::{Deserialize, Serialize};

use super::SequenceEnv;
use crate::categorical::DecodingAction;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Context-free bandit with a deterministic reward per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableBandit {
    pub rewards: Vec<(DecodingAction, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    id: u64,
}

const CONTEXT: [f64; 1] = [1.0];

impl TableBandit {
    pub fn new(rewards: Vec<(DecodingAction, f64)>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::InvalidConfig("table bandit needs at least one arm".into()));
        }
        if rewards.iter().any(|(_, r)| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidConfig("table bandit rewards must lie in [0, 1]".into()));
        }
        Ok(Self { rewards })
    }

    pub fn actions(&self) -> Vec<DecodingAction> {
        self.rewards.iter().map(|(a, _)| *a).collect()
    }

    pub fn reward_of(&self, action: &DecodingAction) -> Result<f64> {
        self.rewards
            .iter()
            .find(|(a, _)| a == action)
            .map(|(_, r)| *r)
            .ok_or_else(|| Error::InvalidConfig(format!("action {action} not in bandit table")))
    }
}

impl SequenceEnv for TableBandit {
    type Instance = BanditInstance;

    fn make_instance(&self, id: u64, _rng: &mut StreamRng) -> BanditInstance {
        BanditInstance { id }
    }

    fn instance_id(&self, instance: &BanditInstance) -> u64 {
        instance.id
    }

    fn context_dim(&self) -> usize {
        1
    }

    fn context<'a>(&self, _instance: &'a BanditInstance) -> &'a [f64] {
        &CONTEXT
    }

    fn sample_reward(
        &self,
        _instance: &BanditInstance,
        action: &DecodingAction,
        _rng: &mut StreamRng,
    ) -> Result<f64> {
        self.reward_of(action)
    }
}
