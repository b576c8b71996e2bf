use hpo_core::policy::{Conditioning, TabularPolicy};
use hpo_core::tasks::countdown::{solve, vocab};
use hpo_core::tasks::CountdownInstance;
use hpo_core::Token;
use hpo_lab::commands::diagnose;
use hpo_lab::formats::{write_checkpoint, write_dataset};
use hpo_lab::LabConfig;

/// A one-prompt dataset and a policy that emits a solution with
/// probability one up to rounding.
fn always_correct() -> (Vec<CountdownInstance>, TabularPolicy) {
    let inst = CountdownInstance::new(0, vec![4, 6, 9], 33).unwrap();
    let expr = solve(&inst.numbers, inst.target).into_iter().next().unwrap();
    let tokens = vocab::boxed_tokens(&expr).unwrap();
    let mut policy = TabularPolicy::uniform(1, vocab::SIZE, tokens.len() + 1, Conditioning::Position).unwrap();
    for (pos, t) in tokens.iter().chain([&Token::EOS]).enumerate() {
        let off = policy.row_offset(0, pos);
        policy.params_mut()[off + t.id()] = 80.0;
    }
    (vec![inst], policy)
}

#[test]
fn saturated_policy_gives_sentinels() {
    let dir = tempfile::tempdir().unwrap();
    let (instances, policy) = always_correct();
    let data = dir.path().join("one.tsv");
    std::fs::write(&data, write_dataset(&instances)).unwrap();
    let overrides = vec![
        format!("dataset={}", data.display()),
        "batch_prompts=1".to_string(),
        format!("max_tokens={}", policy.max_tokens()),
    ];
    let config = LabConfig::from_overrides(&overrides).unwrap();
    let d = diagnose(&config, policy.clone()).unwrap();
    assert!(d.batch.groups()[0].rewards().iter().all(|r| *r == 1.0));
    assert_eq!((d.stats.n_pos, d.stats.n_neg), (0, 0));
    assert_eq!(d.stats.alpha_adaptive, 1.0);
    assert_eq!(d.alpha_used, vec![1.0]);
    assert!(!d.stats.rho_defined && d.stats.rho.is_infinite());
    assert!(d.gradient_norm_ratio.is_nan());
    let report = d.report();
    assert!(report.contains("rho=inf"), "{report}");
    assert!(report.contains("grad_norm_ratio=undefined"), "{report}");

    // Same seed, same report; also through the binary.
    assert_eq!(diagnose(&config, policy.clone()).unwrap().report(), report);
    let ck = dir.path().join("p.ckpt");
    std::fs::write(&ck, write_checkpoint(&policy)).unwrap();
    let run = || {
        std::process::Command::new(env!("CARGO_BIN_EXE_hpo-lab"))
            .args(["diagnose", "--checkpoint", ck.to_str().unwrap(), "--dataset", data.to_str().unwrap()])
            .args(["--set", "batch_prompts=1"])
            .output()
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8(a.stdout).unwrap(), report);
}

#[test]
fn trained_checkpoint_decomposes() {
    let dir = tempfile::tempdir().unwrap();
    let config = LabConfig::from_overrides(&["steps=20".to_string(), "seed=2".to_string()]).unwrap();
    let state = hpo_lab::run::run_training(&config, dir.path(), false).unwrap();
    let d = diagnose(&config, state.policy).unwrap();
    assert!(d.decomposition_residual <= 1e-10);
    assert_eq!(d.stats.n_pos + d.stats.n_neg + d.stats.n_zero, d.batch.num_responses());
}
