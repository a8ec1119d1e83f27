use capstep_core::balance::{
    full_controller, BalanceController, ControllerKind, OpenLoopNominals, StepCommand,
};
use capstep_core::learning::{GridApproximator, GridSpec};
use capstep_core::lipm::{propagate, ComState, GaitParams, PendulumConstant};
use capstep_core::plant::{Plant, PlantConfig, PlantEvent, StanceFoot};
use proptest::prelude::*;

fn ideal_gait() -> GaitParams {
    let n = OpenLoopNominals::default();
    let c = 3.5f64;
    let alpha = 0.5 * n.width / (0.5 * c * n.period).cosh();
    GaitParams::new(alpha, 0.5 * n.width, PendulumConstant::new(c).unwrap()).unwrap()
}

/// Start a step `t_before` seconds ahead of an exchange at `(delta, v)`.
fn step_start(g: &GaitParams, v: f64, t_before: f64) -> ComState {
    let back = propagate(ComState::new(g.delta, -v), g.c, t_before);
    ComState::new(back.y, -back.vy)
}

/// Drive the plant with the full controller through one exchange and report
/// the apex of the following step.
fn apex_after_controlled_step(cfg: PlantConfig, g: &GaitParams, start: ComState) -> Option<f64> {
    let ctl = BalanceController {
        kind: ControllerKind::TimingStep,
        gait: *g,
        nominals: OpenLoopNominals::default(),
        t_min: cfg.t_min,
    };
    let mut plant = Plant::new(cfg, OpenLoopNominals::default(), 1);
    plant.set_canonical(start);
    let mut exchanged = false;
    for _ in 0..200 {
        let obs = plant.observe();
        let cmd = ctl.command(obs, plant.state().phase_time, None);
        for e in plant.tick(cmd) {
            match e {
                PlantEvent::SupportExchange { .. } => exchanged = true,
                PlantEvent::ApexReached { apex_y, .. } if exchanged => return Some(apex_y),
                PlantEvent::Fell { .. } => return None,
                _ => {}
            }
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn controlled_step_lands_on_the_nominal_apex(v in 0.05..0.6f64, t_before in 0.12..0.4f64) {
        let g = ideal_gait();
        let cfg = PlantConfig { foot: StanceFoot::POINT, ..PlantConfig::ideal() };
        let apex = apex_after_controlled_step(cfg, &g, step_start(&g, v, t_before));
        let apex = apex.expect("apex after the exchange");
        prop_assert!((apex - g.alpha).abs() < 1e-9, "{apex} vs {}", g.alpha);
    }

    #[test]
    fn commands_are_finite_and_non_negative(
        y in prop_oneof![-1.0..1.0f64, Just(f64::NAN), Just(f64::INFINITY)],
        vy in prop_oneof![-3.0..3.0f64, Just(f64::NAN)],
        phase in 0.0..1.0f64,
        learned in -0.05..0.05f64,
    ) {
        let mut grid = GridApproximator::new(GridSpec::default()).unwrap();
        grid.fill(learned);
        for kind in ControllerKind::ALL {
            let ctl = BalanceController {
                kind,
                gait: ideal_gait(),
                nominals: OpenLoopNominals::default(),
                t_min: 0.1,
            };
            let cmd = ctl.command(ComState::new(y, vy), phase, Some(&grid));
            prop_assert!(cmd.t_remaining.is_finite() && cmd.t_remaining >= 0.0, "{kind}: {cmd:?}");
            prop_assert!(cmd.f.is_finite(), "{kind}: {cmd:?}");
        }
    }

    #[test]
    fn timing_points_at_the_exchange_crossing(v in 0.05..0.6f64, t_before in 0.0..0.4f64) {
        let g = ideal_gait();
        let s = step_start(&g, v, t_before);
        let cmd = full_controller(s, &g, 0.0, 0.1);
        prop_assert!((cmd.t_remaining - t_before).abs() < 1e-9);
        prop_assert!((propagate(s, g.c, cmd.t_remaining).y - g.delta).abs() < 1e-9);
    }

    #[test]
    fn learning_only_moves_the_placement(
        y in 0.0..0.2f64,
        vy in -0.8..0.8f64,
        learned in -0.05..0.05f64,
    ) {
        let g = ideal_gait();
        let mut grid = GridApproximator::new(GridSpec::default()).unwrap();
        grid.fill(learned);
        let make = |kind| BalanceController { kind, gait: g, nominals: OpenLoopNominals::default(), t_min: 0.1 };
        let s = ComState::new(y, vy);
        let plain = make(ControllerKind::TimingStep).command(s, 0.0, None);
        let learn = make(ControllerKind::TimingStepLearning).command(s, 0.0, Some(&grid));
        prop_assert_eq!(plain.t_remaining, learn.t_remaining);
        prop_assert!((plain.f - learned - learn.f).abs() < 1e-12);
    }
}

#[test]
fn open_loop_ignores_observations() {
    let ctl = BalanceController {
        kind: ControllerKind::NoFeedback,
        gait: ideal_gait(),
        nominals: OpenLoopNominals::default(),
        t_min: 0.1,
    };
    let a = ctl.command(ComState::new(0.1, 0.2), 0.1, None);
    let b = ctl.command(ComState::new(-0.4, 3.0), 0.1, None);
    assert_eq!(a, b);
    assert_eq!(a, StepCommand::new(0.35, 0.22));
}

#[test]
fn controller_names_round_trip() {
    for k in ControllerKind::ALL {
        assert_eq!(k.as_str().parse::<ControllerKind>().unwrap(), k);
        assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
    }
    let err = "step".parse::<ControllerKind>().unwrap_err();
    assert!(err.to_string().contains("unknown controller `step`"));
}
