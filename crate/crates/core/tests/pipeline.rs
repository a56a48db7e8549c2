use proptest::prelude::*;

use smartbal_core::game::{mixed_nash, ScenarioRuns};
use smartbal_core::grid_model::{simulate, Signal};
use smartbal_core::pricing::{detect_dual, IspWindow, DEFAULT_DUAL_TOL_MW};
use smartbal_core::scenario::assemble_inputs;
use smartbal_core::{GridParams, InjectionProfile, Mechanism, ScenarioConfig, StrategyProfile};

fn grid() -> GridParams {
    GridParams::de_control_block()
}

#[test]
fn reacting_alone_pays_and_overreaction_costs() {
    for cfg in ScenarioConfig::reference_set() {
        let runs = ScenarioRuns::simulate(&cfg, &grid(), 1.0).unwrap();
        for m in Mechanism::ALL {
            let t = runs.table(m, DEFAULT_DUAL_TOL_MW).unwrap();
            assert!(t.g1 > 0.0 && t.l1 > 0.0, "{}", t.scenario_id);
            assert!((t.g1 - t.g2).abs() < 1e-9 && (t.l1 - t.l2).abs() < 1e-9);
        }
    }
}

#[test]
fn nobody_reacting_settles_to_zero_payoff() {
    let runs = ScenarioRuns::simulate(&ScenarioConfig::symmetric(5.0, 20.0), &grid(), 1.0).unwrap();
    for m in Mechanism::ALL {
        let s = runs.settle(StrategyProfile::NONE, m, DEFAULT_DUAL_TOL_MW).unwrap();
        assert_eq!(s.totals, [0.0, 0.0]);
    }
}

#[test]
fn overreaction_triggers_dual_pricing() {
    let cfg = ScenarioConfig::symmetric(1.0, 400.0);
    let runs = ScenarioRuns::simulate(&cfg, &grid(), 1.0).unwrap();
    let trace = runs.trace(StrategyProfile::BOTH);
    let windows = IspWindow::grid(cfg.horizon, cfg.isp_minutes);
    assert!(detect_dual(trace, &windows[0], DEFAULT_DUAL_TOL_MW).unwrap());
    let single = runs.trace(StrategyProfile::NONE);
    assert!(!detect_dual(single, &windows[0], DEFAULT_DUAL_TOL_MW).unwrap());
}

#[test]
fn payoffs_scale_quadratically_with_disturbance() {
    let base = ScenarioConfig::symmetric(5.0, 400.0);
    let lambda = 2.0;
    let scaled = ScenarioConfig {
        outage_mw: base.outage_mw * lambda,
        p_b_max: base.p_b_max * lambda,
        ..base.clone()
    };
    let a = ScenarioRuns::simulate(&base, &grid(), 1.0).unwrap().table(Mechanism::DE, 0.0).unwrap();
    let b = ScenarioRuns::simulate(&scaled, &grid(), 1.0).unwrap().table(Mechanism::DE, 0.0).unwrap();
    assert!((b.g1 - lambda * lambda * a.g1).abs() < 1e-6 * b.g1.abs());
    assert!((b.l1 - lambda * lambda * a.l1).abs() < 1e-6 * b.l1.abs());
}

#[test]
fn later_games_favor_reacting() {
    for m in Mechanism::ALL {
        let ratio = |t: f64| {
            let runs = ScenarioRuns::simulate(&ScenarioConfig::symmetric(t, 20.0), &grid(), 1.0).unwrap();
            mixed_nash(&runs.table(m, DEFAULT_DUAL_TOL_MW).unwrap()).unwrap().p1
        };
        assert!(ratio(1.0) < ratio(10.0), "{m}");
    }
}

#[test]
fn halving_the_step_changes_little() {
    let cfg = ScenarioConfig::symmetric(1.0, 400.0);
    let inputs = assemble_inputs(&cfg, StrategyProfile::BOTH);
    let coarse = simulate(&grid(), &inputs, 30.0, 1.0).unwrap().series(Signal::FrrRequested);
    let fine = simulate(&grid(), &inputs, 30.0, 0.5).unwrap().series(Signal::FrrRequested);
    let worst = coarse
        .iter()
        .zip(fine.iter().step_by(2))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.1, "{worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulation_is_linear(
        t1 in 0.0..20.0_f64, p1 in -300.0..300.0_f64,
        t2 in 0.0..20.0_f64, p2 in -300.0..300.0_f64, w in 0.5..5.0_f64,
        k in -3.0..3.0_f64,
    ) {
        let a = InjectionProfile::new(vec![(t1, p1)]).unwrap();
        let b = InjectionProfile::new(vec![(t2, 0.0), (t2 + w, p2)]).unwrap();
        let g = grid();
        let ta = simulate(&g, std::slice::from_ref(&a), 25.0, 1.0).unwrap();
        let tb = simulate(&g, std::slice::from_ref(&b), 25.0, 1.0).unwrap();
        let tab = simulate(&g, &[a.scaled(k), b], 25.0, 1.0).unwrap();
        for sig in Signal::ALL {
            let (sa, sb, sab) = (ta.series(sig), tb.series(sig), tab.series(sig));
            let scale = sab.iter().chain(&sa).chain(&sb).map(|v| v.abs()).fold(1e-12, f64::max);
            for i in 0..sab.len() {
                prop_assert!((k * sa[i] + sb[i] - sab[i]).abs() <= 1e-9 * scale * k.abs().max(1.0));
            }
        }
    }
}
