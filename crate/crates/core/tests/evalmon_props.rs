use proptest::prelude::*;
use rand::SeedableRng;

use stl_funnel::dqn::QNetwork;
use stl_funnel::envs::{EnvConfig, EnvKind, Environment, ResetDistribution, Simulator};
use stl_funnel::evalmon::{
    check_satisfaction, export_csv, funnel_certifies, import_csv, obligation_robustness, rollout,
    rollout_steps, EvalError, RolloutPolicy,
};
use stl_funnel::funnel::{build_schedule, SegmentOverrides};
use stl_funnel::reward::{RewardMode, RewardSpec};
use stl_funnel::robustness::{rho_trace, RhoBounds};
use stl_funnel::stl::parse_formula;
use stl_funnel::SimRng;

const HORIZON: u32 = 40;

fn env() -> Simulator {
    let cfg = EnvConfig::new(EnvKind::Integrator, HORIZON)
        .with_reset(ResetDistribution::UniformBox { bounds: vec![(-0.3, 0.3)] });
    Simulator::new(cfg).unwrap()
}

/// Integrator moves at most 0.03 per step, so the targets sit within reach.
fn spec(text: &str, overrides: &[SegmentOverrides]) -> RewardSpec {
    let phi = parse_formula(text, &["x"]).unwrap();
    let n = stl_funnel::stl::conjuncts(&phi).unwrap().len();
    let bounds = vec![RhoBounds::new(-1.0, 0.1).unwrap(); n];
    let schedule = build_schedule(&phi, &bounds, overrides, HORIZON).unwrap();
    RewardSpec::new(phi, schedule, RewardMode::Funnel).unwrap()
}

fn specs() -> Vec<RewardSpec> {
    vec![
        spec("F[5,20](abs(x - 0.2) <= 0.1) & G[25,40](abs(x) <= 0.1)", &[]),
        spec(
            "G[0,40](abs(x) <= 0.1)",
            &[SegmentOverrides {
                gamma_inf: None,
                t_star: Some(10),
            }],
        ),
        spec(
            "F[5,30](x >= 0.2) & G[10,35](abs(x) <= 0.3)",
            &[
                SegmentOverrides::default(),
                SegmentOverrides {
                    gamma_inf: None,
                    t_star: Some(15),
                },
            ],
        ),
    ]
}

fn net(seed: u64) -> QNetwork {
    QNetwork::random(1, &[8], 13, &mut SimRng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn trajectory_columns_agree_with_reward(seed in 0u64..10_000, which in 0usize..3, eps in 0.0f64..1.0) {
        let spec = &specs()[which];
        let env = env();
        let traj = rollout(&net(seed), &env, spec, seed, RolloutPolicy::EpsilonGreedy(eps)).unwrap();
        prop_assert_eq!(traj.len(), HORIZON as usize + 1);
        prop_assert_eq!(traj.steps(), HORIZON as usize);
        for t in 0..traj.steps() {
            let s = &traj.states[t];
            prop_assert_eq!(traj.rewards[t], spec.reward(s, t as u32).unwrap());
            prop_assert_eq!(&env.step(s, traj.actions[t]).unwrap(), &traj.states[t + 1]);
        }
        for t in 0..traj.len() {
            prop_assert_eq!(&traj.rho_psi[t], &spec.psi_robustness(&traj.states[t]).unwrap());
            let m = spec.funnel_margin(&traj.states[t], t as u32).unwrap().map(|x| x.0);
            prop_assert_eq!(traj.margin[t], m);
            let ok = traj.margin[..=t].iter().all(|m| m.map_or(true, |v| v >= 0.0));
            prop_assert_eq!(traj.satisfied_so_far[t], ok);
        }
    }

    #[test]
    fn boolean_and_robust_verdicts_agree(seed in 0u64..10_000, which in 0usize..3, eps in 0.0f64..1.0) {
        let spec = &specs()[which];
        let traj = rollout(&net(seed), &env(), spec, seed, RolloutPolicy::EpsilonGreedy(eps)).unwrap();
        let rep = check_satisfaction(&spec.formula, &traj).unwrap();
        prop_assert_eq!(rep.robustness, rho_trace(&spec.formula, &traj.states, 0).unwrap());
        prop_assert_eq!(rep.satisfied, rep.robustness >= 0.0);
        // Without F G conjuncts the obligation scalar is the same quantity.
        prop_assert_eq!(rep.obligation_robustness, rep.robustness);
    }

    #[test]
    fn funnel_certificate_implies_satisfaction(seed in 0u64..20_000, which in 0usize..3, eps in 0.0f64..0.6) {
        let spec = &specs()[which];
        let traj = rollout(&net(seed), &env(), spec, seed, RolloutPolicy::EpsilonGreedy(eps)).unwrap();
        if funnel_certifies(spec, &traj).unwrap() == Some(true) {
            prop_assert!(check_satisfaction(&spec.formula, &traj).unwrap().satisfied);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(seed in 0u64..10_000, which in 0usize..3) {
        let spec = &specs()[which];
        let mut traj = rollout(&net(seed), &env(), spec, seed, RolloutPolicy::EpsilonGreedy(0.5)).unwrap();
        traj.meta.state_names = vec!["x".into()];
        traj.meta.config_digest = Some("d".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        export_csv(&traj, &path).unwrap();
        let back = import_csv(&path).unwrap();
        prop_assert_eq!(&back, &traj);
        std::fs::remove_file(stl_funnel::evalmon::sidecar_path(&path)).unwrap();
        let bare = import_csv(&path).unwrap();
        prop_assert_eq!(&bare.states, &traj.states);
        prop_assert_eq!(&bare.meta.state_names, &traj.meta.state_names);
        prop_assert_eq!(bare.meta.seed, None);
    }
}

#[test]
fn greedy_rollouts_repeat() {
    let spec = &specs()[0];
    let a = rollout(&net(1), &env(), spec, 77, RolloutPolicy::Greedy).unwrap();
    let b = rollout(&net(1), &env(), spec, 77, RolloutPolicy::Greedy).unwrap();
    assert_eq!(a, b);
    let zero = rollout_steps(&net(1), &env(), spec, 77, RolloutPolicy::Greedy, 0).unwrap();
    assert_eq!(zero.len(), 1);
    assert!(zero.actions.is_empty() && zero.rewards.is_empty());
}

#[test]
fn short_trajectory_is_rejected() {
    let spec = &specs()[0];
    let traj = rollout_steps(&net(1), &env(), spec, 1, RolloutPolicy::Greedy, 10).unwrap();
    assert!(matches!(
        check_satisfaction(&spec.formula, &traj),
        Err(EvalError::TraceTooShort { len: 11, needed: 41 })
    ));
}

#[test]
fn malformed_csv_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "t,x,action,reward,rho_psi_0,gamma_lower,margin,satisfied_so_far\n0,abc,1,0,0,,,1\n").unwrap();
    assert!(matches!(import_csv(&path), Err(EvalError::Format { .. })));
    std::fs::write(&path, "t,x\n0,1\n").unwrap();
    assert!(matches!(import_csv(&path), Err(EvalError::Format { .. })));
    assert!(matches!(import_csv(&dir.path().join("none.csv")), Err(EvalError::Io { .. })));
}

#[test]
fn obligation_robustness_on_annulus_midline() {
    // Ring 1 <= |p| <= 2 held on [2, 5]; a path along |p| = 1.5 scores 0.5 there.
    let phi = parse_formula("G[2,5](norm2(x, y) >= 1 & norm2(x, y) <= 2)", &["x", "y"]).unwrap();
    let mut states: Vec<Vec<f64>> = (0..6)
        .map(|t| {
            let a = t as f64 * 0.3;
            vec![1.5 * a.cos(), 1.5 * a.sin()]
        })
        .collect();
    // Outside the window the path may leave the ring freely.
    states[0] = vec![0.0, 0.0];
    let v = obligation_robustness(&phi, &states).unwrap();
    assert!((v - 0.5).abs() < 1e-12, "{v}");
    let center = vec![vec![1.5, 0.0]; 6];
    let r = rho_trace(&phi, &center, 0).unwrap();
    assert!((r - 0.5).abs() < 1e-12);
}
