//! Decoding adapters.
//!
//! [`SeqPolicy`] picks one decoding action per instance from context features
//! and, when budget-aware, an embedding of the parallel sampling budget.
//! [`TokPolicy`] picks an action at every decoding step from step features
//! and, when budget-aware, the normalized remaining token budget. Both
//! return `softmax(MLP(x) / T_pol)` over their action set.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actions::ActionSet;
use crate::categorical::{sample, softmax, CategoricalDist, Logits};
use crate::error::{Error, Result};
use crate::net::checkpoint::Checkpoint;
use crate::net::{Cache, Mlp, Mode, OptimizerState};

/// Network shape shared by both adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "default_hidden")]
    pub hidden_width: usize,
    /// Number of affine layers in the trunk.
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Width of the two-layer budget embedder (sequence level).
    #[serde(default = "default_embed")]
    pub embed_width: usize,
    #[serde(default = "default_temperature")]
    pub policy_temperature: f64,
}

fn default_hidden() -> usize {
    32
}
fn default_layers() -> usize {
    3
}
fn default_dropout() -> f64 {
    0.1
}
fn default_embed() -> usize {
    8
}
fn default_temperature() -> f64 {
    1.0
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_width: default_hidden(),
            num_layers: default_layers(),
            dropout: default_dropout(),
            embed_width: default_embed(),
            policy_temperature: default_temperature(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.num_layers == 0 || self.embed_width == 0 {
            return Err(Error::InvalidConfig(
                "policy widths and layer count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.policy_temperature.is_finite() && self.policy_temperature > 0.0) {
            return Err(Error::InvalidConfig("policy_temperature must be > 0".into()));
        }
        Ok(())
    }

    fn trunk_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.num_layers - 1));
        dims.push(output);
        dims
    }
}

/// A chosen action with the distribution it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub index: usize,
    pub dist: CategoricalDist,
    pub log_prob: f64,
}

fn policy_dist(logits: &[f64], temperature: f64) -> Result<CategoricalDist> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    Logits::new(scaled).map(|z| softmax(&z)).map_err(|_| {
        Error::TrainingDiverged("policy produced non-finite logits".into())
    })
}

fn decide<R: Rng + ?Sized>(dist: CategoricalDist, deterministic: bool, rng: &mut R) -> Decision {
    let index = if deterministic {
        dist.argmax()
    } else {
        sample(&dist, rng)
    };
    let log_prob = dist.probs()[index].ln();
    Decision {
        index,
        dist,
        log_prob,
    }
}

/// Everything a backward pass through a sequence policy needs.
#[derive(Debug, Clone)]
pub struct SeqForward {
    pub dist: CategoricalDist,
    trunk_cache: Cache,
    embed_cache: Option<Cache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqGrads {
    pub trunk: Vec<f64>,
    pub embedder: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqPolicy {
    trunk: Mlp,
    embedder: Option<Mlp>,
    actions: ActionSet,
    policy_temperature: f64,
    context_dim: usize,
}

impl SeqPolicy {
    pub fn new<R: Rng + ?Sized>(
        context_dim: usize,
        actions: ActionSet,
        budget_aware: bool,
        cfg: &PolicyConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if actions.is_empty() {
            return Err(Error::InvalidConfig("action set is empty".into()));
        }
        let embedder = if budget_aware {
            Some(Mlp::new(&[1, cfg.embed_width, cfg.embed_width], cfg.dropout, rng)?)
        } else {
            None
        };
        let input = context_dim + if budget_aware { cfg.embed_width } else { 0 };
        let trunk = Mlp::new(&cfg.trunk_dims(input, actions.len()), cfg.dropout, rng)?;
        Ok(Self {
            trunk,
            embedder,
            actions,
            policy_temperature: cfg.policy_temperature,
            context_dim,
        })
    }

    pub fn from_parts(
        trunk: Mlp,
        embedder: Option<Mlp>,
        actions: ActionSet,
        policy_temperature: f64,
        context_dim: usize,
    ) -> Result<Self> {
        let embed_width = embedder.as_ref().map_or(0, Mlp::output_dim);
        if trunk.input_dim() != context_dim + embed_width {
            return Err(Error::Incompatible(format!(
                "trunk input {} != context {} + embedding {}",
                trunk.input_dim(),
                context_dim,
                embed_width
            )));
        }
        if trunk.output_dim() != actions.len() {
            return Err(Error::Incompatible(format!(
                "trunk has {} outputs but the action set has {} actions",
                trunk.output_dim(),
                actions.len()
            )));
        }
        if let Some(e) = &embedder {
            if e.input_dim() != 1 {
                return Err(Error::Incompatible("budget embedder input must be scalar".into()));
            }
        }
        Ok(Self {
            trunk,
            embedder,
            actions,
            policy_temperature,
            context_dim,
        })
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn is_budget_aware(&self) -> bool {
        self.embedder.is_some()
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn embedder(&self) -> Option<&Mlp> {
        self.embedder.as_ref()
    }

    pub fn embedder_mut(&mut self) -> Option<&mut Mlp> {
        self.embedder.as_mut()
    }

    pub fn policy_temperature(&self) -> f64 {
        self.policy_temperature
    }

    pub fn set_policy_temperature(&mut self, t: f64) -> Result<()> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidParameter(format!("policy temperature {t}")));
        }
        self.policy_temperature = t;
        Ok(())
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        context: &[f64],
        budget: Option<u32>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<SeqForward> {
        if context.len() != self.context_dim {
            return Err(Error::InvalidInput(format!(
                "context has {} features, policy expects {}",
                context.len(),
                self.context_dim
            )));
        }
        let (input, embed_cache) = match &self.embedder {
            Some(embedder) => {
                let b = budget.ok_or_else(|| {
                    Error::InvalidInput("budget-aware policy requires a budget".into())
                })?;
                let (emb, cache) = embedder.forward(&[f64::from(b)], mode, rng)?;
                let mut z = context.to_vec();
                z.extend(emb);
                (z, Some(cache))
            }
            None => (context.to_vec(), None),
        };
        let (logits, trunk_cache) = self.trunk.forward(&input, mode, rng)?;
        Ok(SeqForward {
            dist: policy_dist(&logits, self.policy_temperature)?,
            trunk_cache,
            embed_cache,
        })
    }

    /// Eval-mode action distribution.
    pub fn seq_forward(&self, context: &[f64], budget: Option<u32>) -> Result<CategoricalDist> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward(context, budget, Mode::Eval, &mut rng)?.dist)
    }

    /// Argmax (lowest index on ties) when deterministic, else a draw from
    /// the eval-mode distribution.
    pub fn select<R: Rng + ?Sized>(
        &self,
        context: &[f64],
        budget: Option<u32>,
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Decision> {
        let dist = self.seq_forward(context, budget)?;
        Ok(decide(dist, deterministic, rng))
    }

    /// Backpropagates `grad_logits` (gradient w.r.t. the raw network
    /// outputs, before the policy temperature).
    pub fn backward(&self, fwd: &SeqForward, grad_logits: &[f64]) -> Result<SeqGrads> {
        let (trunk, grad_input) = self.trunk.backward(&fwd.trunk_cache, grad_logits)?;
        let embedder = match (&self.embedder, &fwd.embed_cache) {
            (Some(e), Some(cache)) => Some(e.backward(cache, &grad_input[self.context_dim..])?.0),
            (None, None) => None,
            _ => {
                return Err(Error::ContractViolation(
                    "forward record does not match policy budget mode".into(),
                ))
            }
        };
        Ok(SeqGrads { trunk, embedder })
    }
}

/// Token-level step features: `e_t` followed by `b_t / b`.
pub fn tok_features(step_features: &[f64], remaining: usize, budget: usize) -> Result<Vec<f64>> {
    if budget == 0 {
        return Err(Error::InvalidInput("token budget must be >= 1".into()));
    }
    if remaining > budget {
        return Err(Error::InvalidInput(format!(
            "remaining budget {remaining} exceeds total {budget}"
        )));
    }
    let mut x = step_features.to_vec();
    x.push(remaining as f64 / budget as f64);
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct TokForward {
    pub dist: CategoricalDist,
    cache: Cache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokPolicy {
    trunk: Mlp,
    actions: ActionSet,
    policy_temperature: f64,
    obs_dim: usize,
    budget_aware: bool,
}

impl TokPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        actions: ActionSet,
        budget_aware: bool,
        cfg: &PolicyConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if actions.is_empty() {
            return Err(Error::InvalidConfig("action set is empty".into()));
        }
        let input = obs_dim + usize::from(budget_aware);
        let trunk = Mlp::new(&cfg.trunk_dims(input, actions.len()), cfg.dropout, rng)?;
        Ok(Self {
            trunk,
            actions,
            policy_temperature: cfg.policy_temperature,
            obs_dim,
            budget_aware,
        })
    }

    pub fn from_parts(
        trunk: Mlp,
        actions: ActionSet,
        policy_temperature: f64,
        obs_dim: usize,
        budget_aware: bool,
    ) -> Result<Self> {
        if trunk.input_dim() != obs_dim + usize::from(budget_aware) {
            return Err(Error::Incompatible(format!(
                "trunk input {} does not match observation {} (budget-aware: {budget_aware})",
                trunk.input_dim(),
                obs_dim
            )));
        }
        if trunk.output_dim() != actions.len() {
            return Err(Error::Incompatible(format!(
                "trunk has {} outputs but the action set has {} actions",
                trunk.output_dim(),
                actions.len()
            )));
        }
        Ok(Self {
            trunk,
            actions,
            policy_temperature,
            obs_dim,
            budget_aware,
        })
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn is_budget_aware(&self) -> bool {
        self.budget_aware
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn policy_temperature(&self) -> f64 {
        self.policy_temperature
    }

    /// Policy input for one step; the budget feature is appended only for
    /// budget-aware policies.
    pub fn features(&self, step_features: &[f64], remaining: usize, budget: usize) -> Result<Vec<f64>> {
        if self.budget_aware {
            tok_features(step_features, remaining, budget)
        } else {
            Ok(step_features.to_vec())
        }
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], mode: Mode, rng: &mut R) -> Result<TokForward> {
        let (logits, cache) = self.trunk.forward(x, mode, rng)?;
        Ok(TokForward {
            dist: policy_dist(&logits, self.policy_temperature)?,
            cache,
        })
    }

    pub fn tok_forward(&self, x: &[f64]) -> Result<CategoricalDist> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        Ok(self.forward(x, Mode::Eval, &mut rng)?.dist)
    }

    pub fn select<R: Rng + ?Sized>(&self, x: &[f64], deterministic: bool, rng: &mut R) -> Result<Decision> {
        let dist = self.tok_forward(x)?;
        Ok(decide(dist, deterministic, rng))
    }

    pub fn backward(&self, fwd: &TokForward, grad_logits: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trunk.backward(&fwd.cache, grad_logits)?.0)
    }
}

/// Which adapter a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Seq,
    Tok,
}

/// JSON sidecar written next to every policy checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySidecar {
    pub kind: AdapterKind,
    pub budget_aware: bool,
    pub input_dim: usize,
    pub policy_temperature: f64,
    pub action_set: ActionSet,
    /// Copied from the checkpoint's `meta.provenance` on save.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdapterPolicy {
    Seq(SeqPolicy),
    Tok(TokPolicy),
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

impl AdapterPolicy {
    pub fn sidecar(&self) -> PolicySidecar {
        match self {
            AdapterPolicy::Seq(p) => PolicySidecar {
                kind: AdapterKind::Seq,
                budget_aware: p.is_budget_aware(),
                input_dim: p.context_dim,
                policy_temperature: p.policy_temperature,
                action_set: p.actions.clone(),
                provenance: None,
            },
            AdapterPolicy::Tok(p) => PolicySidecar {
                kind: AdapterKind::Tok,
                budget_aware: p.budget_aware,
                input_dim: p.obs_dim,
                policy_temperature: p.policy_temperature,
                action_set: p.actions.clone(),
                provenance: None,
            },
        }
    }

    pub fn actions(&self) -> &ActionSet {
        match self {
            AdapterPolicy::Seq(p) => p.actions(),
            AdapterPolicy::Tok(p) => p.actions(),
        }
    }

    pub fn is_budget_aware(&self) -> bool {
        match self {
            AdapterPolicy::Seq(p) => p.is_budget_aware(),
            AdapterPolicy::Tok(p) => p.is_budget_aware(),
        }
    }

    /// Checkpoint holding the networks, optional optimizer states and
    /// metadata; the sidecar is embedded under `meta.policy`.
    pub fn to_checkpoint(
        &self,
        optimizers: Vec<(String, OptimizerState)>,
        mut meta: serde_json::Value,
    ) -> Result<Checkpoint> {
        let mut networks = Vec::new();
        match self {
            AdapterPolicy::Seq(p) => {
                networks.push(("trunk".to_string(), p.trunk.clone()));
                if let Some(e) = &p.embedder {
                    networks.push(("budget_embedder".to_string(), e.clone()));
                }
            }
            AdapterPolicy::Tok(p) => networks.push(("trunk".to_string(), p.trunk.clone())),
        }
        if !meta.is_object() {
            meta = serde_json::json!({});
        }
        meta["policy"] = serde_json::to_value(self.sidecar())?;
        Ok(Checkpoint {
            networks,
            optimizers,
            meta,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let sidecar: PolicySidecar = serde_json::from_value(
            ck.meta
                .get("policy")
                .cloned()
                .ok_or_else(|| Error::InvalidInput("checkpoint has no policy metadata".into()))?,
        )?;
        Self::from_checkpoint_with(ck, &sidecar)
    }

    pub fn from_checkpoint_with(ck: &Checkpoint, sidecar: &PolicySidecar) -> Result<Self> {
        let trunk = ck
            .network("trunk")
            .cloned()
            .ok_or_else(|| Error::InvalidInput("checkpoint has no trunk network".into()))?;
        match sidecar.kind {
            AdapterKind::Seq => {
                let embedder = ck.network("budget_embedder").cloned();
                if embedder.is_some() != sidecar.budget_aware {
                    return Err(Error::Incompatible(
                        "budget embedder presence disagrees with sidecar".into(),
                    ));
                }
                Ok(AdapterPolicy::Seq(SeqPolicy::from_parts(
                    trunk,
                    embedder,
                    sidecar.action_set.clone(),
                    sidecar.policy_temperature,
                    sidecar.input_dim,
                )?))
            }
            AdapterKind::Tok => Ok(AdapterPolicy::Tok(TokPolicy::from_parts(
                trunk,
                sidecar.action_set.clone(),
                sidecar.policy_temperature,
                sidecar.input_dim,
                sidecar.budget_aware,
            )?)),
        }
    }

    /// Writes the checkpoint and its JSON sidecar.
    pub fn save(&self, path: &Path, ck: &Checkpoint) -> Result<()> {
        ck.save(path)?;
        let side = sidecar_path(path);
        let mut sidecar = self.sidecar();
        sidecar.provenance = ck.meta.get("provenance").cloned();
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        std::fs::write(&side, text).map_err(|e| Error::io(side, e))
    }

    /// Loads a checkpoint, preferring the sidecar file when present.
    pub fn load(path: &Path) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::load(path)?;
        let side = sidecar_path(path);
        let policy = if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let sidecar: PolicySidecar = serde_json::from_str(&text)?;
            Self::from_checkpoint_with(&ck, &sidecar)?
        } else {
            Self::from_checkpoint(&ck)?
        };
        Ok((policy, ck))
    }
}
