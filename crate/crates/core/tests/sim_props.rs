use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tetris_sched::accept_model::{AcceptanceMatrix, AcceptanceSource, NoiseModel, SurrogateConfig};
use tetris_sched::selector::PolicyKind;
use tetris_sched::sim_engine::{
    apply_verification, draft_phase, run_simulation, run_step, select_windows, LengthDistribution, PipelineMode,
    SimConfig, SimState,
};
use tetris_sched::trace_io::{read_trace, write_trace};

fn mix() -> AcceptanceSource {
    AcceptanceSource::Mix { easy: 0.95, hard: 0.4, frac: 0.5 }
}

fn config(policy: PolicyKind, seed: u64) -> SimConfig {
    SimConfig {
        source: mix(),
        target_length: LengthDistribution::Uniform { min: 8, max: 40 },
        steps: Some(60),
        seed,
        ..SimConfig::new(8, 4, 2, policy)
    }
}

#[test]
fn load_and_token_accounting() {
    for policy in [PolicyKind::Tetris, PolicyKind::Sd, PolicyKind::Dsd] {
        let cfg = config(policy, 9);
        let mut state = SimState::new(&cfg);
        let mut served = 0;
        for _ in 0..80 {
            assert_eq!(state.active.len(), cfg.batch_size);
            let out = run_step(&mut state, &cfg).unwrap();
            served += out.tokens_served;
            assert!(out.tokens_sent <= cfg.capacity);
            for (i, (&a, &k)) in out.accepted.iter().zip(&out.windows).enumerate() {
                assert!(a <= k, "row {i}");
                assert!(k <= out.drafted[i]);
            }
        }
        let completed: u64 = state.completed.iter().map(|r| r.target_len).sum();
        let partial: u64 = state.active.iter().map(|r| r.served).sum();
        assert_eq!(served, completed + partial);
        assert!(state.active.iter().all(|r| r.served <= r.target_len && r.completion_step.is_none()));
        assert!(state.completed.iter().all(|r| r.served == r.target_len && r.completion_step.is_some()));
    }
}

#[test]
fn truth_beyond_first_rejection_is_irrelevant() {
    let cfg = config(PolicyKind::Tetris, 4);
    let state = SimState::new(&cfg);
    let view = draft_phase(&state, &cfg, cfg.draft_depth()).unwrap();
    let (sel, _) = select_windows(&cfg, 0.5, &view.surrogate).unwrap();

    let rngs = |n: usize| (0..n).map(|i| ChaCha8Rng::seed_from_u64(100 + i as u64)).collect::<Vec<_>>();
    let n = view.truth.num_rows();
    let accepted = apply_verification(&sel, &view.truth, &mut rngs(n));

    // Scramble every truth entry after each row's first rejection.
    let flipped = AcceptanceMatrix::new(
        view.truth
            .rows()
            .iter()
            .zip(&accepted)
            .map(|(row, &a)| row.iter().enumerate().map(|(j, &p)| if j > a { 1.0 - p } else { p }).collect())
            .collect(),
    )
    .unwrap();
    assert_eq!(apply_verification(&sel, &flipped, &mut rngs(n)), accepted);
    // The selector only sees the surrogate, so its choice cannot move either.
    assert_eq!(select_windows(&cfg, 0.5, &view.surrogate).unwrap().0, sel);
}

#[test]
fn parallel_steps_are_never_slower() {
    for policy in [PolicyKind::Tetris, PolicyKind::Sd, PolicyKind::Dsd] {
        for seed in 0..5 {
            let seq = config(policy, seed);
            let par = SimConfig { pipeline: PipelineMode::Parallel, ..seq.clone() };
            let (_, ts) = run_simulation(&seq).unwrap();
            let (_, tp) = run_simulation(&par).unwrap();
            for (s, p) in ts.iter().zip(&tp) {
                assert!(p.step_time <= s.step_time);
                assert_eq!(p.accepted, s.accepted);
            }
        }
    }
}

#[test]
fn tetris_accepts_more_than_sd_on_paired_seeds() {
    // Sign test over 100 paired seeds on heterogeneous rates.
    let (mut wins, mut losses) = (0, 0);
    for seed in 0..100 {
        let (t, _) = run_simulation(&config(PolicyKind::Tetris, seed)).unwrap();
        let (s, _) = run_simulation(&config(PolicyKind::Sd, seed)).unwrap();
        assert!(t.mean_expected_accepted_per_step >= s.mean_expected_accepted_per_step - 1e-9);
        if t.mean_accepted_per_step > s.mean_accepted_per_step {
            wins += 1;
        } else if t.mean_accepted_per_step < s.mean_accepted_per_step {
            losses += 1;
        }
    }
    // P(Bin(100, 0.5) >= 63) < 0.01
    assert!(wins >= 63 && wins > losses, "wins={wins} losses={losses}");
}

#[test]
fn noisy_surrogate_runs_are_reproducible() {
    let cfg = SimConfig {
        surrogate: SurrogateConfig { noise: NoiseModel::LogitGaussian, sigma: 0.8, seed: 3 },
        ..config(PolicyKind::Tetris, 21)
    };
    let (a, ta) = run_simulation(&cfg).unwrap();
    let (b, tb) = run_simulation(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn oracle_policy_runs_on_small_batches() {
    let cfg = SimConfig { steps: Some(20), ..SimConfig::new(3, 2, 2, PolicyKind::Oracle) };
    let (o, _) = run_simulation(&cfg).unwrap();
    let (t, _) = run_simulation(&SimConfig { policy: PolicyKind::Tetris, ..cfg.clone() }).unwrap();
    assert!((o.mean_expected_accepted_per_step - t.mean_expected_accepted_per_step).abs() < 1e-9);

    let big = SimConfig { steps: Some(1), ..SimConfig::new(8, 4, 2, PolicyKind::Oracle) };
    assert!(run_simulation(&big).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trace_round_trip(seed in any::<u64>(), steps in 0u64..100, policy in prop_oneof![
        Just(PolicyKind::Tetris), Just(PolicyKind::Sd), Just(PolicyKind::Dsd)
    ]) {
        let cfg = SimConfig { steps: Some(steps), ..config(policy, seed) };
        let (_, trace) = run_simulation(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        write_trace(&trace, &path).unwrap();
        prop_assert_eq!(read_trace(&path).unwrap(), trace);
    }
}

#[test]
fn truncated_trace_names_the_line() {
    let (_, trace) = run_simulation(&SimConfig { steps: Some(100), ..config(PolicyKind::Tetris, 1) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    write_trace(&trace, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() - 40]).unwrap();
    match read_trace(&path) {
        Err(tetris_sched::Error::Schema { line, .. }) => assert_eq!(line, 101),
        other => panic!("expected schema error, got {other:?}"),
    }
}
