//! Sequence-level adapters on two instance classes whose best decoding
//! action depends on the sampling budget. Trains with and without budget
//! conditioning and compares Pass@1 / Pass@8 with the per-class oracle.
//!
//! cargo run --release --example two_regime

use adaptive_decoding::actions::ActionSet;
use adaptive_decoding::env::{evaluate_seq, seq_instances, SeqMethod, TwoRegime, TwoRegimeSpec};
use adaptive_decoding::policy::{PolicyConfig, SeqPolicy};
use adaptive_decoding::rng::Streams;
use adaptive_decoding::train::{train_seq, TrainConfig};

fn main() -> adaptive_decoding::Result<()> {
    let spec = TwoRegimeSpec::budget_split();
    let env = TwoRegime::new(spec.clone())?;
    let actions = ActionSet::fixed(spec.table.iter().map(|e| e.action).collect())?;
    let streams = Streams::new(0);
    let test = seq_instances(&env, &streams, "test", 1000);
    let eval_streams = Streams::new(streams.key("eval", &[]));

    for budget_aware in [false, true] {
        let policy = SeqPolicy::new(
            2,
            actions.clone(),
            budget_aware,
            &PolicyConfig::default(),
            &mut streams.stream("init", &[]),
        )?;
        let cfg = TrainConfig {
            steps: 2000,
            learning_rate: 0.005,
            eval_interval: 0,
            ..TrainConfig::default()
        };
        let (policy, _) = train_seq(policy, &env, &cfg, &streams)?;
        println!("budget-aware: {budget_aware}");
        for (class, ctx) in [(0, [1.0, 0.0]), (1, [0.0, 1.0])] {
            for b in [1u32, 8] {
                let chosen = policy.seq_forward(&ctx, Some(b))?.argmax();
                let (opt, _) = spec.class_optimum(class, &actions.actions, b)?;
                println!(
                    "  class {class}, B={b}: picks {} (optimum {})",
                    actions.actions[chosen], actions.actions[opt]
                );
            }
        }
        for k in [1, 8] {
            let (s, _) = evaluate_seq(&env, &test, SeqMethod::Policy(&policy), &[k], 8, &eval_streams)?;
            let oracle = spec.oracle_value(&actions.actions, k as u32)?;
            println!(
                "  Pass@{k}: {:.4} ± {:.4} (oracle {oracle:.4})",
                s.scores[0].mean, s.scores[0].ci95
            );
        }
    }
    Ok(())
}
