use hpo_core::policy::{Conditioning, TabularPolicy};
use hpo_core::tasks::CountdownInstance;
use hpo_core::{Batch, BatchStats, Group, Token, Trajectory};
use hpo_lab::formats::{
    parse_batch, parse_batch_stats, parse_checkpoint, parse_dataset, write_batch, write_batch_stats,
    write_checkpoint, write_dataset,
};
use proptest::prelude::*;

fn any_finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE)]
}

fn trajectory(prompt: u32) -> impl Strategy<Value = Trajectory> {
    prop::collection::vec((0u32..29, -30.0f64..0.0), 1..8).prop_map(move |v| {
        let (tokens, lps): (Vec<_>, Vec<_>) = v.into_iter().unzip();
        Trajectory::new(prompt, tokens.into_iter().map(Token).collect(), lps, usize::MAX).unwrap()
    })
}

fn group(prompt: u32) -> impl Strategy<Value = Group> {
    (2usize..5, prop::option::of(-50i64..200)).prop_flat_map(move |(n, answer)| {
        (
            prop::collection::vec(trajectory(prompt), n),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), n),
        )
            .prop_map(move |(t, r)| Group::new(prompt, answer, t, r).unwrap())
    })
}

fn batch() -> impl Strategy<Value = Batch> {
    (1u32..4)
        .prop_flat_map(|b| (0..b).map(group).collect::<Vec<_>>())
        .prop_map(|g| Batch::new(g).unwrap())
}

proptest! {
    #[test]
    fn checkpoints_round_trip_bitwise(
        prompts in 1usize..3, vocab in 2usize..5, max_tokens in 1usize..4, bigram in prop::bool::ANY,
        values in prop::collection::vec(any_finite(), 64),
    ) {
        let cond = if bigram { Conditioning::PrefixBigram } else { Conditioning::Position };
        let mut p = TabularPolicy::uniform(prompts, vocab, max_tokens, cond).unwrap();
        for (i, x) in p.params_mut().iter_mut().enumerate() {
            *x = values[i % values.len()];
        }
        let back = parse_checkpoint(&write_checkpoint(&p), "c").unwrap();
        prop_assert_eq!(back.conditioning(), cond);
        for (a, b) in back.params().iter().zip(p.params()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn datasets_round_trip(rows in prop::collection::vec(prop::collection::vec(1i64..=20, 3..5), 1..10)) {
        // The sum of the numbers is always reachable.
        let instances: Vec<CountdownInstance> = rows
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let target = n.iter().sum();
                CountdownInstance::new(i as u32, n, target).unwrap()
            })
            .collect();
        prop_assert_eq!(parse_dataset(&write_dataset(&instances), "d").unwrap(), instances);
    }

    #[test]
    fn batches_round_trip(b in batch()) {
        let text = write_batch(&b);
        let back = parse_batch(&text, "b").unwrap();
        prop_assert_eq!(write_batch(&back), text);
        prop_assert_eq!(back, b);
    }

    #[test]
    fn batch_stats_round_trip_bitwise(n_pos in 0usize..200, n_neg in 0usize..200, n_zero in 0usize..200) {
        let stats = BatchStats::from_counts(n_pos, n_neg, n_zero, 0.4, 1e-8);
        let back = parse_batch_stats(&write_batch_stats(&stats), "s").unwrap();
        prop_assert_eq!(back.alpha_adaptive.to_bits(), stats.alpha_adaptive.to_bits());
        prop_assert_eq!(back.p_pos.to_bits(), stats.p_pos.to_bits());
        prop_assert_eq!(back.p_neg.to_bits(), stats.p_neg.to_bits());
        prop_assert_eq!((back.n_pos, back.n_neg, back.n_zero), (n_pos, n_neg, n_zero));
    }
}

#[test]
fn tampered_batch_is_rejected() {
    let text = "batch groups=1 mean_length=2\ngroup prompt_id=0 answer=none rewards=1,0\n\
                trajectory tokens=1,0 old_logprobs=-0.5,-0.1\ntrajectory tokens=2,0 old_logprobs=-0.3,-0.2\n";
    assert!(parse_batch(text, "b").is_ok());
    assert!(parse_batch(&text.replace("mean_length=2", "mean_length=3"), "b").is_err());
    assert!(parse_batch(&text.replace("groups=1", "groups=2"), "b").is_err());
    assert!(parse_batch(&text.replace("rewards=1,0", "rewards=1"), "b").is_err());
    assert!(parse_batch(&text.replace("-0.5,-0.1", "-0.5"), "b").is_err());
}

#[test]
fn tampered_batch_stats_are_rejected() {
    let good = write_batch_stats(&BatchStats::from_counts(3, 5, 8, 0.4, 1e-8));
    assert!(parse_batch_stats(&good, "s").is_ok());
    assert!(parse_batch_stats(&good.replace("n_pos=3", "n_pos=4"), "s").is_err());
}
