//! Entropy-regularized REINFORCE on a context-free bandit converges to the
//! Gibbs distribution `pi(a) ∝ exp(r(a) / beta)`.
//!
//! cargo run --release --example bandit_gibbs

use adaptive_decoding::actions::ActionSet;
use adaptive_decoding::categorical::DecodingAction;
use adaptive_decoding::env::TableBandit;
use adaptive_decoding::policy::{PolicyConfig, SeqPolicy};
use adaptive_decoding::rng::Streams;
use adaptive_decoding::train::{train_seq, TrainConfig};

fn gibbs(rewards: &[f64], beta: f64) -> Vec<f64> {
    let m = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = rewards.iter().map(|r| ((r - m) / beta).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn main() -> adaptive_decoding::Result<()> {
    let temps = [0.5, 0.75, 1.0, 1.25];
    let cases: [(&[f64], f64); 4] = [
        (&[1.0, 0.0], 0.5),
        (&[1.0, 0.5, 0.0], 0.25),
        (&[0.2, 0.4, 0.9, 0.1], 0.3),
        (&[0.6, 0.5, 0.4], 1.0),
    ];
    for (i, (rewards, beta)) in cases.into_iter().enumerate() {
        let arms: Vec<_> = rewards
            .iter()
            .zip(temps)
            .map(|(&r, t)| Ok((DecodingAction::temperature(t)?, r)))
            .collect::<adaptive_decoding::Result<_>>()?;
        let env = TableBandit::new(arms)?;
        let streams = Streams::new(i as u64);
        let policy_cfg = PolicyConfig {
            dropout: 0.0,
            ..PolicyConfig::default()
        };
        let policy = SeqPolicy::new(1, ActionSet::fixed(env.actions())?, false, &policy_cfg, &mut streams.stream("init", &[]))?;
        let cfg = TrainConfig {
            steps: 3000,
            batch_size: 64,
            beta_start: beta,
            beta_end: beta,
            prompt_filter: None,
            eval_interval: 0,
            train_instances: 1,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let (policy, _) = train_seq(policy, &env, &cfg, &streams)?;
        let learned = policy.seq_forward(&[1.0], None)?;
        let target = gibbs(rewards, beta);
        let tv = 0.5 * learned.probs().iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>();
        println!("r={rewards:?} beta={beta}: learned {:.3?} gibbs {:.3?} TV {tv:.4}", learned.probs(), target);
    }
    Ok(())
}
