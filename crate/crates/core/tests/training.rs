use adaptive_decoding::actions::ActionSet;
use adaptive_decoding::categorical::{sample, DecodingAction};
use adaptive_decoding::env::{ForkingChain, ForkingChainSpec, TwoRegime, TwoRegimeSpec};
use adaptive_decoding::net::Mode;
use adaptive_decoding::policy::{PolicyConfig, SeqPolicy, TokPolicy};
use adaptive_decoding::rng::Streams;
use adaptive_decoding::train::{policy_gradient_logits, train_seq, TokTrainer, TrainConfig};

#[test]
fn constant_baseline_leaves_expected_gradient_unchanged() {
    let streams = Streams::new(11);
    let actions: Vec<DecodingAction> = [0.5, 1.0, 1.25]
        .into_iter()
        .map(|t| DecodingAction::temperature(t).unwrap())
        .collect();
    let policy = SeqPolicy::new(
        1,
        ActionSet::fixed(actions).unwrap(),
        false,
        &PolicyConfig::default(),
        &mut streams.stream("policy_init", &[]),
    )
    .unwrap();
    let mut rng = streams.stream("samples", &[]);
    let fwd = policy.forward(&[1.0], None, Mode::Eval, &mut rng).unwrap();
    let t = policy.policy_temperature();
    let rewards = [1.0, 0.0, 0.4];
    let n = 200_000;
    // the difference between the two estimators has mean zero; compare it
    // against its own standard error per logit
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let a = sample(&fwd.dist, &mut rng);
        let g0 = policy_gradient_logits(&fwd.dist, a, rewards[a], 0.0, t);
        let g1 = policy_gradient_logits(&fwd.dist, a, rewards[a] - 0.5, 0.0, t);
        for j in 0..3 {
            let d = g0[j] - g1[j];
            sum[j] += d;
            sq[j] += d * d;
        }
    }
    for j in 0..3 {
        let mean = sum[j] / n as f64;
        let se = ((sq[j] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() < 5.0 * se, "logit {j}: difference {mean} (se {se})");
    }
}

#[test]
fn fork_free_chain_collapses_to_greedy_without_entropy_bonus() {
    let spec = ForkingChainSpec {
        fork_positions: Vec::new(),
        ..ForkingChainSpec::default()
    };
    let env = ForkingChain::new(spec).unwrap();
    for seed in 0..8 {
        let streams = Streams::new(seed);
        let policy = TokPolicy::new(
            2,
            ActionSet::token_default(),
            false,
            &PolicyConfig::default(),
            &mut streams.stream("policy_init", &[]),
        )
        .unwrap();
        // With no entropy bonus and a reward that is rare at first, a large
        // step size can lock onto T=0.5 before greedy is ever rewarded.
        let cfg = TrainConfig {
            steps: 2000,
            learning_rate: 0.003,
            beta_start: 0.0,
            beta_end: 0.0,
            prompt_filter: None,
            eval_interval: 0,
            ..TrainConfig::default()
        };
        let mut trainer = TokTrainer::new(&env, policy, cfg, streams).unwrap();
        let mut row = trainer.step().unwrap();
        while row.entropy >= 0.05 && !trainer.is_done() {
            row = trainer.step().unwrap();
        }
        assert!(row.entropy < 0.05, "seed {seed}: entropy still {} after 2000 batches", row.entropy);
        let greedy = row.action_probs[0];
        assert!(greedy > 0.99, "seed {seed}: collapsed onto {:?}", row.action_probs);
    }
}

#[test]
fn budget_aware_training_separates_budgets() {
    let spec = TwoRegimeSpec::budget_split();
    let env = TwoRegime::new(spec.clone()).unwrap();
    let actions = ActionSet::fixed(spec.table.iter().map(|e| e.action).collect()).unwrap();
    let streams = Streams::new(9);
    let policy = SeqPolicy::new(
        2,
        actions.clone(),
        true,
        &PolicyConfig::default(),
        &mut streams.stream("policy_init", &[]),
    )
    .unwrap();
    let cfg = TrainConfig {
        steps: 2000,
        learning_rate: 0.005,
        eval_interval: 0,
        ..TrainConfig::default()
    };
    let (policy, trace) = train_seq(policy, &env, &cfg, &streams).unwrap();
    assert_eq!(trace.len(), 2000);
    let pick = |b| policy.seq_forward(&[1.0, 0.0], Some(b)).unwrap().argmax();
    assert_eq!(pick(1), spec.class_optimum(0, &actions.actions, 1).unwrap().0);
    assert_eq!(pick(8), spec.class_optimum(0, &actions.actions, 8).unwrap().0);
    assert_ne!(pick(1), pick(8));
}
