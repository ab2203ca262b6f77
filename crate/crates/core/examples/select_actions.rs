//! Action-space selection: estimate the reward matrix of the 180-strategy
//! grid on a two-class environment, then compare greedy coverage against
//! picking the strategies with the highest mean.
//!
//! cargo run --release --example select_actions

use adaptive_decoding::actions::{
    build_candidate_pool, coverage_value, estimate_reward_matrix, greedy_select,
    topk_by_mean_select, GridSpec,
};
use adaptive_decoding::env::{seq_instances, TwoRegime, TwoRegimeSpec};
use adaptive_decoding::rng::Streams;

fn main() -> adaptive_decoding::Result<()> {
    let pool = build_candidate_pool(&GridSpec::default())?;
    let env = TwoRegime::new(TwoRegimeSpec::from_pool(&pool, 0.5)?)?;
    let streams = Streams::new(0);
    let val = seq_instances(&env, &streams, "val", 200);
    let rewards = estimate_reward_matrix(&env, &val, &pool, 16, &streams)?;
    println!("{} strategies x {} instances", rewards.num_strategies(), rewards.num_instances());
    for k in 1..=6 {
        let g = greedy_select(&rewards, k)?;
        let t = topk_by_mean_select(&rewards, k)?;
        println!(
            "k={k}: greedy F={:.4}  top-k-by-mean F={:.4}",
            coverage_value(&g.indices, &rewards)?.1,
            coverage_value(&t.indices, &rewards)?.1
        );
    }
    let chosen = greedy_select(&rewards, 6)?.into_action_set(&pool)?;
    for (a, f) in chosen.actions.iter().zip(&chosen.coverage_trace) {
        println!("  + {a:<32} coverage {f:.4}");
    }
    Ok(())
}
