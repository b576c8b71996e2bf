use hpo_core::advantage::{
    adaptive_alpha, centered_advantage, grpo_advantage, hysteretic_weights, sign_counts, variance_alpha,
};
use hpo_core::analytics::closed_form_sign_probs;
use hpo_core::objective::{normalized_sum, ppo_token_surrogate, prob_ratio};
use hpo_core::rng::{Domain, RngStream};
use hpo_core::tasks::countdown::{parse_expression, solve};
use proptest::prelude::*;

fn binary_rewards() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), 2..16)
}

proptest! {
    #[test]
    fn centered_advantages_sum_to_zero(r in binary_rewards()) {
        let a = centered_advantage(&r).unwrap();
        prop_assert!(a.iter().sum::<f64>().abs() < 1e-12);
        for (ai, ri) in a.iter().zip(&r) {
            prop_assert_eq!(*ai > 0.0, *ri == 1.0 && r.contains(&0.0));
        }
    }

    #[test]
    fn standardized_advantages_share_signs_with_centered(r in binary_rewards()) {
        let g = grpo_advantage(&r, 1e-6).unwrap();
        let c = centered_advantage(&r).unwrap();
        prop_assert_eq!(sign_counts(&g), sign_counts(&c));
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn uniform_groups_carry_no_signal(n in 2usize..16, one in prop::bool::ANY) {
        let r = vec![if one { 1.0 } else { 0.0 }; n];
        prop_assert!(grpo_advantage(&r, 1e-6).unwrap().iter().all(|a| *a == 0.0));
        prop_assert_eq!(sign_counts(&centered_advantage(&r).unwrap()), (0, 0, n));
    }

    #[test]
    fn weights_follow_advantage_sign(r in binary_rewards(), alpha in 0.0f64..=1.0) {
        let a = centered_advantage(&r).unwrap();
        let w = hysteretic_weights(&a, alpha).unwrap();
        for (ai, wi) in a.iter().zip(&w) {
            prop_assert_eq!(*wi, if *ai >= 0.0 { 1.0 } else { alpha });
        }
    }

    #[test]
    fn adaptive_alpha_bounds(n_pos in 0usize..500, n_neg in 0usize..500, alpha_min in 0.0f64..=1.0) {
        let a = adaptive_alpha(n_pos, n_neg, alpha_min, 1e-8);
        prop_assert!(a >= alpha_min && a <= 1.0);
        if n_pos >= n_neg {
            prop_assert!(a > 1.0 - 1e-7);
        }
    }

    #[test]
    fn adaptive_alpha_grows_with_positives(n_pos in 0usize..200, n_neg in 1usize..200) {
        prop_assert!(adaptive_alpha(n_pos + 1, n_neg, 0.4, 1e-8) >= adaptive_alpha(n_pos, n_neg, 0.4, 1e-8));
        prop_assert!(adaptive_alpha(n_pos, n_neg + 1, 0.4, 1e-8) <= adaptive_alpha(n_pos, n_neg, 0.4, 1e-8));
    }

    #[test]
    fn variance_alpha_stays_below_alpha0(r in binary_rewards()) {
        let a = variance_alpha(&r, 0.4, 1e-2, 1e-8);
        prop_assert!((0.0..=0.4).contains(&a));
    }

    #[test]
    fn surrogate_is_pessimistic(ratio in 0.01f64..5.0, adv in -3.0f64..3.0, eps in 0.01f64..0.9) {
        let t = ppo_token_surrogate(ratio, adv, eps);
        prop_assert!(t.surrogate <= ratio * adv);
        if (1.0 - eps..=1.0 + eps).contains(&ratio) {
            prop_assert_eq!(t.surrogate, ratio * adv);
            prop_assert!(!t.clipped);
        }
    }

    #[test]
    fn ratio_matches_exponential(new in -20.0f64..0.0, old in -20.0f64..0.0) {
        let r = prob_ratio(new, old).unwrap();
        prop_assert!((r - (new - old).exp()).abs() <= 1e-12 * r.max(1.0));
    }

    #[test]
    fn sign_probs_closed_form(p in 0.0f64..=1.0, n in 2usize..32) {
        let (pp, pn, _) = closed_form_sign_probs(p, n).unwrap();
        prop_assert!((pp - p * (1.0 - p.powi(n as i32 - 1))).abs() < 1e-12);
        prop_assert!((pn - (1.0 - p) * (1.0 - (1.0 - p).powi(n as i32 - 1))).abs() < 1e-12);
        prop_assert!(pp + pn <= 1.0 + 1e-12);
    }

    #[test]
    fn normalized_sum_is_linear_in_weights(
        terms in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 1..6), 1..5),
        scale in 0.0f64..3.0,
    ) {
        let refs: Vec<&[f64]> = terms.iter().map(|v| v.as_slice()).collect();
        let ones = vec![1.0; terms.len()];
        let scaled = vec![scale; terms.len()];
        let mean_len = terms.iter().map(Vec::len).sum::<usize>() as f64 / terms.len() as f64;
        for norm in [hpo_core::Normalization::PerResponse, hpo_core::Normalization::MeanLength] {
            let base = normalized_sum(&refs, &ones, norm, mean_len);
            let s = normalized_sum(&refs, &scaled, norm, mean_len);
            prop_assert!((s - scale * base).abs() < 1e-12);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct(seed in any::<u64>(), a in 0u64..1000) {
        let draw = |b: u64| {
            let mut r = RngStream::new(seed, Domain::Test, a, b, 0);
            (0..4).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(0), draw(0));
        prop_assert_ne!(draw(0), draw(1));
    }

    #[test]
    fn solver_output_parses_back(a in 1i64..10, b in 1i64..10, c in 1i64..10, target in 1i64..60) {
        for e in solve(&[a, b, c], target).into_iter().take(5) {
            let back = parse_expression(&e.render()).unwrap();
            prop_assert_eq!(back.render(), e.render());
        }
    }
}
