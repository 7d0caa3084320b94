use sflplan_core::baselines::*;
use sflplan_core::harness::{ExperimentConfig, Quantity};
use sflplan_core::latency::Resource;
use sflplan_core::problem::ProblemInstance;
use sflplan_core::simulator::{simulate_round, ScheduleMode};
use sflplan_core::solver::{solve, SolverConfig};

fn instance_with(edit: impl FnOnce(&mut ExperimentConfig)) -> ProblemInstance {
    let mut cfg = ExperimentConfig::default();
    edit(&mut cfg);
    cfg.resolve().unwrap().instance().unwrap()
}

fn recipe(name: StrategyName) -> Strategy {
    name.strategy(PfBasis::Minibatch).unwrap()
}

#[test]
fn fedavg_keeps_everything_on_device() {
    let p = instance_with(|_| {});
    let plan = build_plan(&recipe(StrategyName::Faaf), &p, &SolverConfig::default()).unwrap();
    let l = f64::from(p.layers());
    for (n, d) in plan.decisions.iter().enumerate() {
        assert_eq!(d.x, l);
        let b = p.device_latency(n, d).unwrap();
        assert_eq!((b.srv_fwd, b.srv_bwd, b.smash_up, b.grad_down), (0.0, 0.0, 0.0, 0.0));
    }
}

#[test]
fn common_cut_is_shallowest_feasible_layer() {
    let p = instance_with(|_| {});
    let expected = p.x_min().ceil();
    let plan = build_plan(&recipe(StrategyName::Fsaf), &p, &SolverConfig::default()).unwrap();
    assert!(plan.decisions.iter().all(|d| d.x == expected));
    assert_eq!(f64::from(p.min_integer_cut()), expected);
}

#[test]
fn fixed_common_layer_outside_risk_box_is_rejected() {
    let p = instance_with(|_| {});
    let lo = p.min_integer_cut();
    let s = Strategy {
        cut_rule: CutRule::FixedCommon(Some(lo - 1)),
        schedule: ScheduleMode::Parallel,
        allocator: Allocator::Af,
    };
    let err = build_plan(&s, &p, &SolverConfig::default()).unwrap_err();
    assert_eq!(err, BaselineError::InfeasibleLayer { layer: lo - 1, lo, hi: p.layers() });
    let s = Strategy { cut_rule: CutRule::FixedCommon(Some(lo)), ..s };
    assert!(build_plan(&s, &p, &SolverConfig::default()).is_ok());
}

#[test]
fn every_baseline_plan_is_feasible() {
    for p_risk in [0.2, 0.35, 0.5, 0.8] {
        let p = instance_with(|c| c.p_risk = p_risk);
        for name in StrategyName::ALL {
            for basis in [PfBasis::Minibatch, PfBasis::Dataset] {
                let Some(s) = name.strategy(basis) else { continue };
                let plan = build_plan(&s, &p, &SolverConfig::default()).unwrap();
                assert!(p.check_feasible(&plan).is_empty(), "{name} at {p_risk}");
            }
        }
    }
}

#[test]
fn proportional_equals_equal_for_equal_minibatches() {
    let p = instance_with(|_| {});
    let cfg = SolverConfig::default();
    for (af, pf) in [(StrategyName::Sf1af, StrategyName::Sf1pf), (StrategyName::Sf3af, StrategyName::Sf3pf)] {
        let a = build_plan(&recipe(af), &p, &cfg).unwrap();
        let b = build_plan(&recipe(pf), &p, &cfg).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn proportional_follows_dataset_sizes() {
    let p = instance_with(|c| {
        for (i, d) in c.fleet.iter_mut().enumerate() {
            d.dataset_size = Some(1000 * (i as u64 + 1));
        }
    });
    let s = StrategyName::Fspf.strategy(PfBasis::Dataset).unwrap();
    let plan = build_plan(&s, &p, &SolverConfig::default()).unwrap();
    let dl = plan.shares(Resource::Dl);
    assert!((dl[1] / dl[0] - 2.0).abs() < 1e-12);
    assert!((dl.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn fedavg_ignores_server_speed() {
    let q = |f_s: f64| {
        let p = instance_with(|c| c.server.f_s = Quantity::Number(f_s));
        let plan = build_plan(&recipe(StrategyName::Faaf), &p, &SolverConfig::default()).unwrap();
        p.objective(&plan).unwrap()
    };
    assert_eq!(q(50.0), q(100.0));
    assert_eq!(q(100.0), q(150.0));
}

#[test]
fn planner_beats_per_device_cuts_with_equal_shares() {
    let cfg = SolverConfig::default();
    for p_risk in [0.3, 0.5, 0.7] {
        let p = instance_with(|c| c.p_risk = p_risk);
        let dp = p.objective(&solve(&p, &cfg).unwrap().plan).unwrap();
        let sf3 = p.objective(&build_plan(&recipe(StrategyName::Sf3af), &p, &cfg).unwrap()).unwrap();
        assert!(sf3 >= dp, "{p_risk}: {sf3} < {dp}");
    }
}

#[test]
fn sequential_schedule_is_slower_for_the_same_plan() {
    let p = instance_with(|_| {});
    let cfg = SolverConfig::default();
    let sf2 = build_plan(&recipe(StrategyName::Sf2af), &p, &cfg).unwrap();
    let sf3 = build_plan(&recipe(StrategyName::Sf3af), &p, &cfg).unwrap();
    assert_eq!(sf2, sf3);
    let seq = simulate_round(&sf2, &p, StrategyName::Sf2af.schedule()).unwrap();
    let par = simulate_round(&sf3, &p, StrategyName::Sf3af.schedule()).unwrap();
    assert!(seq.round_latency > par.round_latency);
}
