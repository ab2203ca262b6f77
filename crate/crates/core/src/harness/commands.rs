use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{Environment, RunConfig};
use super::report::{Method, ReportCell, RunReport};
use super::{create_dir, provenance_header, write_bytes};
use crate::actions::{estimate_reward_matrix, greedy_select, topk_by_mean_select, ActionSet};
use crate::env::{
    evaluate_seq, evaluate_tok, seq_instances, tok_instances, write_episode_logs, EpisodeLog,
    EvalSummary, SeqMethod, SequenceEnv, TokMethod, TokenEnv,
};
use crate::error::{Error, Result};
use crate::net::checkpoint::Checkpoint;
use crate::net::OptimizerState;
use crate::policy::{AdapterKind, AdapterPolicy, SeqPolicy, TokPolicy};
use crate::rng::Streams;
use crate::train::{write_trace_csv, SeqTrainer, TokTrainer, TraceRow, TrainProgress};
use crate::with_seq_env;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SelectOutcome {
    pub greedy: ActionSet,
    pub topk_by_mean: ActionSet,
    pub action_set_path: PathBuf,
    pub reward_matrix_path: PathBuf,
}

#[derive(Serialize)]
struct ActionSetFile<'a> {
    provenance: &'a serde_json::Value,
    pool_size: usize,
    greedy: &'a ActionSet,
    topk_by_mean: &'a ActionSet,
}

/// Estimates the reward matrix on validation instances and writes the
/// greedy-coverage and top-k-by-mean selections.
pub fn cmd_select_actions(cfg: &RunConfig) -> Result<SelectOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir()?.to_path_buf();
    let env = cfg.build_env()?;
    let pool = cfg.candidate_pool()?;
    if cfg.selection.k > pool.len() {
        return Err(Error::InvalidConfig(format!(
            "selection k = {} exceeds the pool of {}",
            cfg.selection.k,
            pool.len()
        )));
    }
    let streams = cfg.streams();
    let rewards = with_seq_env!(&env, e => {
        let val = seq_instances(e, &streams, "select", cfg.selection.validation_instances);
        estimate_reward_matrix(e, &val, &pool, cfg.selection.samples_per_cell, &streams)
    })?;
    let greedy = greedy_select(&rewards, cfg.selection.k)?.into_action_set(&pool)?;
    let topk = topk_by_mean_select(&rewards, cfg.selection.k)?.into_action_set(&pool)?;
    let provenance = cfg.provenance()?;

    create_dir(&out)?;
    let mut csv = provenance_header(&provenance)?;
    rewards.write_csv(&mut csv)?;
    let reward_matrix_path = out.join("reward_matrix.csv");
    write_bytes(&reward_matrix_path, &csv)?;
    let mut json = serde_json::to_vec_pretty(&ActionSetFile {
        provenance: &provenance,
        pool_size: pool.len(),
        greedy: &greedy,
        topk_by_mean: &topk,
    })?;
    json.push(b'\n');
    let action_set_path = out.join("action_set.json");
    write_bytes(&action_set_path, &json)?;
    Ok(SelectOutcome {
        greedy,
        topk_by_mean: topk,
        action_set_path,
        reward_matrix_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub trace_path: PathBuf,
    pub trace: Vec<TraceRow>,
    pub policy: AdapterPolicy,
}

struct Resume {
    policy: AdapterPolicy,
    checkpoint: Checkpoint,
    progress: TrainProgress,
    trace: Vec<TraceRow>,
}

fn load_resume(path: &Path, provenance: &serde_json::Value, actions: &ActionSet) -> Result<Resume> {
    let (policy, checkpoint) = AdapterPolicy::load(path)?;
    if checkpoint.meta.get("provenance") != Some(provenance) {
        return Err(Error::Incompatible(format!(
            "{} was written with a different config or seed",
            path.display()
        )));
    }
    if !policy.actions().same_actions(actions) {
        return Err(Error::Incompatible("checkpoint action set differs from config".into()));
    }
    let field = |name: &str| {
        checkpoint
            .meta
            .get(name)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("checkpoint has no {name} to resume from")))
    };
    let progress = serde_json::from_value(field("progress")?)?;
    let trace = serde_json::from_value(field("trace")?)?;
    Ok(Resume {
        policy,
        checkpoint,
        progress,
        trace,
    })
}

fn optimizer(ck: &Checkpoint, name: &str) -> Result<OptimizerState> {
    ck.optimizer(name)
        .cloned()
        .ok_or_else(|| Error::InvalidInput(format!("checkpoint has no {name} optimizer")))
}

struct Saver<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    provenance: &'a serde_json::Value,
    action_names: Vec<String>,
}

impl Saver<'_> {
    fn checkpoint(
        &self,
        file: &str,
        policy: &AdapterPolicy,
        optimizers: Vec<(String, OptimizerState)>,
        progress: &TrainProgress,
        trace: &[TraceRow],
    ) -> Result<PathBuf> {
        let meta = serde_json::json!({
            "provenance": self.provenance,
            "progress": progress,
            "trace": trace,
        });
        let ck = policy.to_checkpoint(optimizers, meta)?;
        let path = self.out.join(file);
        policy.save(&path, &ck)?;
        Ok(path)
    }

    fn trace(&self, trace: &[TraceRow]) -> Result<PathBuf> {
        let mut bytes = provenance_header(self.provenance)?;
        write_trace_csv(&mut bytes, &self.action_names, trace)?;
        let path = self.out.join(super::commands::TRACE_FILE);
        write_bytes(&path, &bytes)?;
        Ok(path)
    }

    fn interval_due(&self, step: usize, done: bool) -> bool {
        self.cfg.checkpoint_interval > 0 && step.is_multiple_of(self.cfg.checkpoint_interval) && !done
    }
}

/// Trains the configured adapter, writing numbered checkpoints at the
/// configured interval plus the final checkpoint and trace. `resume` picks up
/// from a checkpoint written by the same config and seed.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir()?.to_path_buf();
    let env = cfg.build_env()?;
    let actions = cfg.resolve_actions(&env)?;
    let provenance = cfg.provenance()?;
    let resume = resume
        .map(|p| load_resume(p, &provenance, &actions))
        .transpose()?;
    create_dir(&out)?;
    let saver = Saver {
        cfg,
        out: &out,
        provenance: &provenance,
        action_names: actions.actions.iter().map(ToString::to_string).collect(),
    };
    match (cfg.adapter.kind, &env) {
        (AdapterKind::Seq, env) => {
            with_seq_env!(env, e => train_seq_job(cfg, e, actions, resume, &saver))
        }
        (AdapterKind::Tok, Environment::ForkingChain(e)) => {
            train_tok_job(cfg, e, actions, resume, &saver)
        }
        (AdapterKind::Tok, _) => Err(Error::InvalidConfig(
            "token-level adapters need a token-level environment".into(),
        )),
    }
}

fn train_seq_job<E: SequenceEnv>(
    cfg: &RunConfig,
    env: &E,
    actions: ActionSet,
    resume: Option<Resume>,
    saver: &Saver<'_>,
) -> Result<TrainOutcome> {
    let streams = cfg.streams();
    let (policy, prior) = match resume {
        Some(Resume {
            policy: AdapterPolicy::Seq(p),
            checkpoint,
            progress,
            trace,
        }) => (p, Some((checkpoint, progress, trace))),
        Some(_) => return Err(Error::Incompatible("checkpoint holds a token-level policy".into())),
        None => (
            SeqPolicy::new(
                env.context_dim(),
                actions,
                cfg.adapter.budget_aware,
                &cfg.adapter.policy,
                &mut streams.stream("policy_init", &[]),
            )?,
            None,
        ),
    };
    let mut t = SeqTrainer::new(env, policy, cfg.train.clone(), streams)?;
    let mut trace = Vec::new();
    if let Some((ck, progress, rows)) = prior {
        let embed = if t.policy.is_budget_aware() {
            Some(optimizer(&ck, "budget_embedder")?)
        } else {
            None
        };
        t.resume(optimizer(&ck, "trunk")?, embed, progress)?;
        trace = rows;
    }
    let save = |t: &SeqTrainer<'_, E>, trace: &[TraceRow], file: &str| {
        let mut opts = vec![("trunk".to_string(), t.trunk_opt.clone())];
        if let Some(o) = &t.embed_opt {
            opts.push(("budget_embedder".to_string(), o.clone()));
        }
        saver.checkpoint(file, &AdapterPolicy::Seq(t.policy.clone()), opts, &t.progress, trace)
    };
    while !t.is_done() {
        trace.push(t.step()?);
        let step = t.progress.step;
        if saver.interval_due(step, t.is_done()) {
            save(&t, &trace, &format!("checkpoint_step{step}.bin"))?;
        }
    }
    let checkpoint = save(&t, &trace, CHECKPOINT_FILE)?;
    let trace_path = saver.trace(&trace)?;
    Ok(TrainOutcome {
        checkpoint,
        trace_path,
        trace,
        policy: AdapterPolicy::Seq(t.policy),
    })
}

fn train_tok_job<E: TokenEnv>(
    cfg: &RunConfig,
    env: &E,
    actions: ActionSet,
    resume: Option<Resume>,
    saver: &Saver<'_>,
) -> Result<TrainOutcome> {
    let streams = cfg.streams();
    let (policy, prior) = match resume {
        Some(Resume {
            policy: AdapterPolicy::Tok(p),
            checkpoint,
            progress,
            trace,
        }) => (p, Some((checkpoint, progress, trace))),
        Some(_) => return Err(Error::Incompatible("checkpoint holds a sequence-level policy".into())),
        None => (
            TokPolicy::new(
                env.obs_dim(),
                actions,
                cfg.adapter.budget_aware,
                &cfg.adapter.policy,
                &mut streams.stream("policy_init", &[]),
            )?,
            None,
        ),
    };
    let mut t = TokTrainer::new(env, policy, cfg.train.clone(), streams)?;
    let mut trace = Vec::new();
    if let Some((ck, progress, rows)) = prior {
        t.resume(optimizer(&ck, "trunk")?, progress)?;
        trace = rows;
    }
    let save = |t: &TokTrainer<'_, E>, trace: &[TraceRow], file: &str| {
        let opts = vec![("trunk".to_string(), t.opt.clone())];
        saver.checkpoint(file, &AdapterPolicy::Tok(t.policy.clone()), opts, &t.progress, trace)
    };
    while !t.is_done() {
        trace.push(t.step()?);
        let step = t.progress.step;
        if saver.interval_due(step, t.is_done()) {
            save(&t, &trace, &format!("checkpoint_step{step}.bin"))?;
        }
    }
    let checkpoint = save(&t, &trace, CHECKPOINT_FILE)?;
    let trace_path = saver.trace(&trace)?;
    Ok(TrainOutcome {
        checkpoint,
        trace_path,
        trace,
        policy: AdapterPolicy::Tok(t.policy),
    })
}

/// Adapter checkpoints keyed by their report column.
fn load_adapters(
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    actions: &ActionSet,
) -> Result<Vec<(Method, AdapterPolicy)>> {
    let mut adapters: Vec<(Method, AdapterPolicy)> = Vec::new();
    for path in checkpoints {
        let (policy, _) = AdapterPolicy::load(path)?;
        let kind = policy.sidecar().kind;
        if kind != cfg.adapter.kind {
            return Err(Error::Incompatible(format!(
                "{} holds a {kind:?} adapter but the config asks for {:?}",
                path.display(),
                cfg.adapter.kind
            )));
        }
        if !policy.actions().same_actions(actions) {
            return Err(Error::Incompatible(format!(
                "{} was trained on actions [{}] but the config resolves to [{}]",
                path.display(),
                join(&policy.actions().actions),
                join(&actions.actions)
            )));
        }
        let method = Method::for_adapter(policy.is_budget_aware());
        if adapters.iter().any(|(m, _)| *m == method) {
            return Err(Error::InvalidInput(format!(
                "two checkpoints for the {} column",
                method.name()
            )));
        }
        adapters.push((method, policy));
    }
    Ok(adapters)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

type Evaluated = (Vec<ReportCell>, Vec<(Method, Vec<EpisodeLog>)>);

fn cells_from(method: Method, summary: &EvalSummary) -> Vec<ReportCell> {
    summary
        .scores
        .iter()
        .map(|s| ReportCell::new(method, s, None))
        .collect()
}

/// Best static action per metric: the maximum over individually evaluated
/// actions, lowest index on ties.
fn best_static(actions: &ActionSet, summaries: &[EvalSummary], ks: &[usize]) -> Vec<ReportCell> {
    ks.iter()
        .map(|&k| {
            let mut best: Option<(usize, &crate::env::MetricScore)> = None;
            for (i, s) in summaries.iter().enumerate() {
                let score = s.score(k).expect("every metric evaluated");
                if best.is_none_or(|(_, b)| score.mean > b.mean) {
                    best = Some((i, score));
                }
            }
            let (i, score) = best.expect("non-empty action set");
            ReportCell::new(Method::BestStatic, score, Some(actions.actions[i].to_string()))
        })
        .collect()
}

fn eval_seq_job<E: SequenceEnv>(
    cfg: &RunConfig,
    env: &E,
    actions: &ActionSet,
    adapters: &[(Method, AdapterPolicy)],
) -> Result<Evaluated> {
    let streams = cfg.streams();
    let test = seq_instances(env, &streams, "test", cfg.eval.instances);
    let eval_streams = Streams::new(streams.key("eval", &[]));
    let ks = cfg.metric_ks();
    let n = cfg.eval.samples_per_instance;
    let run = |m: SeqMethod<'_>| evaluate_seq(env, &test, m, &ks, n, &eval_streams);
    let statics = actions
        .actions
        .iter()
        .map(|a| Ok(run(SeqMethod::Static(a))?.0))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = best_static(actions, &statics, &ks);
    cells.extend(cells_from(Method::MixedStatic, &run(SeqMethod::Uniform(&actions.actions))?.0));
    let mut logs = Vec::new();
    for (method, policy) in adapters {
        let AdapterPolicy::Seq(p) = policy else {
            return Err(Error::Incompatible("expected a sequence-level adapter".into()));
        };
        let (summary, episodes) = run(SeqMethod::Policy(p))?;
        cells.extend(cells_from(*method, &summary));
        logs.push((*method, episodes));
    }
    Ok((cells, logs))
}

fn eval_tok_job<E: TokenEnv>(
    cfg: &RunConfig,
    env: &E,
    actions: &ActionSet,
    adapters: &[(Method, AdapterPolicy)],
) -> Result<Evaluated> {
    let streams = cfg.streams();
    let test = tok_instances(env, &streams, "test", cfg.eval.instances);
    let eval_streams = Streams::new(streams.key("eval", &[]));
    let ks = cfg.metric_ks();
    let n = cfg.eval.samples_per_instance;
    let budget = cfg.eval.token_budget.unwrap_or(env.horizon());
    let run = |m: TokMethod<'_>| evaluate_tok(env, &test, m, &ks, n, budget, &eval_streams);
    let statics = actions
        .actions
        .iter()
        .map(|a| Ok(run(TokMethod::Static(a))?.0))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = best_static(actions, &statics, &ks);
    cells.extend(cells_from(Method::MixedStatic, &run(TokMethod::Uniform(&actions.actions))?.0));
    let mut logs = Vec::new();
    for (method, policy) in adapters {
        let AdapterPolicy::Tok(p) = policy else {
            return Err(Error::Incompatible("expected a token-level adapter".into()));
        };
        let (summary, episodes) = run(TokMethod::Policy(p))?;
        cells.extend(cells_from(*method, &summary));
        logs.push((*method, episodes));
    }
    Ok((cells, logs))
}

/// Evaluates best-static, mixed-static and up to two adapter checkpoints
/// (one per budget mode) on fresh test instances, then writes the report
/// and per-episode logs.
pub fn cmd_eval(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<RunReport> {
    cfg.validate()?;
    let out = cfg.output_dir()?.to_path_buf();
    let env = cfg.build_env()?;
    let actions = cfg.resolve_actions(&env)?;
    let adapters = load_adapters(cfg, checkpoints, &actions)?;
    let (cells, logs) = match (cfg.adapter.kind, &env) {
        (AdapterKind::Seq, env) => with_seq_env!(env, e => eval_seq_job(cfg, e, &actions, &adapters)),
        (AdapterKind::Tok, Environment::ForkingChain(e)) => eval_tok_job(cfg, e, &actions, &adapters),
        (AdapterKind::Tok, _) => Err(Error::InvalidConfig(
            "token-level adapters need a token-level environment".into(),
        )),
    }?;
    let provenance = cfg.provenance()?;
    let report = RunReport::new(cfg.name.clone(), provenance.clone(), cfg.eval.metrics.clone(), cells);
    create_dir(&out)?;
    report.write(&out)?;
    for (method, episodes) in logs {
        let mut bytes = serde_json::to_vec(&serde_json::json!({ "provenance": provenance }))?;
        bytes.push(b'\n');
        write_episode_logs(&mut bytes, &episodes)?;
        write_bytes(&out.join(format!("episodes_{}.jsonl", method.name())), &bytes)?;
    }
    Ok(report)
}
