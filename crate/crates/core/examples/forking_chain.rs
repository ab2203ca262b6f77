//! Trains a budget-aware token-level adapter on the forking chain and
//! compares it against static decoding and the oracle schedule.
//!
//! cargo run --release --example forking_chain -- [seed] [steps]

use adaptive_decoding::actions::ActionSet;
use adaptive_decoding::env::{evaluate_tok, tok_instances, ForkingChain, ForkingChainSpec, TokMethod};
use adaptive_decoding::policy::{PolicyConfig, TokPolicy};
use adaptive_decoding::rng::Streams;
use adaptive_decoding::train::{train_tok, TrainConfig};

fn main() -> adaptive_decoding::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let steps: usize = args.next().map_or(1000, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(0.01, |s| s.parse().expect("lr"));

    let spec = ForkingChainSpec::default();
    let env = ForkingChain::new(spec.clone())?;
    let actions = ActionSet::token_default();
    let (oracle, _, _) = spec.oracle_value(&actions.actions)?;
    let (best, best_value) = spec.best_static(&actions.actions)?;
    println!("oracle-adaptive {oracle:.4}, best static {} = {best_value:.4}", actions.actions[best]);

    let streams = Streams::new(seed);
    let policy = TokPolicy::new(
        2,
        actions.clone(),
        true,
        &PolicyConfig::default(),
        &mut streams.stream("init", &[]),
    )?;
    let cfg = TrainConfig {
        steps,
        learning_rate: lr,
        // The entropy bonus is summed over every unmasked token, so it has
        // to be small next to a terminal reward of about 0.2.
        beta_start: 1e-3,
        beta_end: 1e-4,
        prompt_filter: None,
        eval_interval: 250,
        val_instances: 100,
        val_samples: 4,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (policy, trace) = train_tok(policy, &env, &cfg, &streams)?;
    for row in trace.iter().filter(|r| r.validation.is_some()) {
        println!(
            "step {:5}  reward {:.3}  entropy {:.3}  validation {:.4}",
            row.step,
            row.mean_reward,
            row.entropy,
            row.validation.unwrap()
        );
    }
    let test = tok_instances(&env, &streams, "test", 500);
    let eval_streams = Streams::new(streams.key("test", &[]));
    let (s, _) = evaluate_tok(&env, &test, TokMethod::Policy(&policy), &[1], 8, spec.length, &eval_streams)?;
    let p1 = s.scores[0].mean;
    println!(
        "adapter Pass@1 {p1:.4} ± {:.4}  ({:.1}% of oracle) in {:.1?}",
        s.scores[0].ci95,
        100.0 * p1 / oracle,
        start.elapsed()
    );
    Ok(())
}
