use hpo_core::policy::{Conditioning, TabularPolicy};
use hpo_core::tasks::countdown::{solve, vocab};
use hpo_core::tasks::{BernoulliEnv, CountdownEnv, CountdownInstance, CountdownRules};
use hpo_core::trainer::{advance, evaluate, TrainState};
use hpo_core::{EstimatorVariant, TrainConfig};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn adaptive_alpha_relaxes_as_success_rises() {
    let env = BernoulliEnv {
        num_prompts: 16,
        vocab_size: 4,
        p_start: 0.1,
        p_end: 0.6,
        ramp_steps: 200,
    };
    let mut config = TrainConfig::desk().with_variant(EstimatorVariant::AHpo);
    config.steps = 200;
    config.max_tokens = 4;
    config.seed = 3;
    let policy = TabularPolicy::uniform(16, 4, 4, Conditioning::Position).unwrap();
    let mut state = TrainState::new(policy, &config);
    let mut alphas = Vec::new();
    for _ in 0..config.steps {
        let r = advance(&mut state, &env, &config).unwrap();
        // The recorded alpha is the clipped ratio of the batch's sign
        // frequencies, taken over responses with a nonzero advantage.
        let direct = if r.p_pos + r.p_neg == 0.0 {
            1.0
        } else {
            (r.p_pos / (r.p_neg + 1e-8)).clamp(0.4, 1.0)
        };
        assert_eq!(r.alpha_used, direct, "step {}", r.step);
        alphas.push(r.alpha_used);
    }
    let windows: Vec<f64> = alphas.chunks(40).map(mean).collect();
    for w in windows.windows(2) {
        assert!(w[1] >= w[0] - 0.05, "alpha trend fell: {windows:?}");
    }
    assert!(windows[0] < 0.6, "{windows:?}");
    assert!(windows[4] > 0.9, "{windows:?}");
}

#[test]
fn always_correct_policy_scores_one() {
    let inst = CountdownInstance::new(0, vec![3, 5, 7], 22).unwrap();
    let expr = solve(&inst.numbers, inst.target).into_iter().next().unwrap();
    let tokens = vocab::boxed_tokens(&expr).unwrap();
    let max_tokens = tokens.len() + 1;
    let mut policy = TabularPolicy::uniform(1, vocab::SIZE, max_tokens, Conditioning::Position).unwrap();
    for (pos, tok) in tokens.iter().chain([&hpo_core::Token::EOS]).enumerate() {
        let off = policy.row_offset(0, pos);
        policy.params_mut()[off + tok.id()] = 60.0;
    }
    let env = CountdownEnv::new(vec![inst], CountdownRules::default()).unwrap();
    let mut config = TrainConfig::desk();
    config.max_tokens = max_tokens;
    let state = TrainState::new(policy, &config);
    assert_eq!(evaluate(&state, &env, &config).unwrap(), 1.0);
}

#[test]
fn training_is_reproducible() {
    let env = BernoulliEnv {
        num_prompts: 4,
        vocab_size: 3,
        p_start: 0.2,
        p_end: 0.2,
        ramp_steps: 0,
    };
    let run = |seed| {
        let mut config = TrainConfig::desk();
        config.seed = seed;
        config.max_tokens = 3;
        let mut state = TrainState::new(TabularPolicy::uniform(4, 3, 3, Conditioning::PrefixBigram).unwrap(), &config);
        for _ in 0..10 {
            advance(&mut state, &env, &config).unwrap();
        }
        state
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1).policy, run(2).policy);
}
