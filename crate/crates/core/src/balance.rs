//! The four lateral balance controllers.
//!
//! Every controller maps a canonical-frame observation to a [`StepCommand`].
//! Commands are recomputed every control tick; the plant only consumes `f` at
//! the support exchange.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_finite, ParamError};
use crate::learning::GridApproximator;
use crate::lipm::{foot_placement_for_apex, propagate, time_to_departure, ComState, GaitParams};

/// Remaining time until the support exchange and the lateral placement of the
/// next foot, measured from the current support foot toward the swing side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCommand {
    pub t_remaining: f64,
    pub f: f64,
}

impl StepCommand {
    pub const fn new(t_remaining: f64, f: f64) -> Self {
        Self { t_remaining, f }
    }
}

/// Fixed step period and width of the open-loop gait generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenLoopNominals {
    /// Seconds per step.
    pub period: f64,
    /// Lateral distance between consecutive footholds (m).
    pub width: f64,
}

impl Default for OpenLoopNominals {
    fn default() -> Self {
        Self {
            period: 0.45,
            width: 0.22,
        }
    }
}

impl OpenLoopNominals {
    pub fn validate(&self) -> Result<(), ParamError> {
        ensure_finite(self.period, "period")?;
        ensure_finite(self.width, "width")?;
        ensure(self.period > 0.0, "period", "must be > 0")?;
        ensure(self.width > 0.0, "width", "must be > 0")
    }

    pub fn mirrored(self) -> Self {
        Self {
            period: self.period,
            width: -self.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "none")]
    NoFeedback,
    #[serde(rename = "timing")]
    Timing,
    #[serde(rename = "timing+step")]
    TimingStep,
    #[serde(rename = "timing+step+learning")]
    TimingStepLearning,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::NoFeedback,
        ControllerKind::Timing,
        ControllerKind::TimingStep,
        ControllerKind::TimingStepLearning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::NoFeedback => "none",
            ControllerKind::Timing => "timing",
            ControllerKind::TimingStep => "timing+step",
            ControllerKind::TimingStepLearning => "timing+step+learning",
        }
    }

    /// Whether step timing follows the observed state.
    pub fn is_timed(self) -> bool {
        self != ControllerKind::NoFeedback
    }

    pub fn learns(self) -> bool {
        self == ControllerKind::TimingStepLearning
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown controller `{0}` (expected none, timing, timing+step or timing+step+learning)")]
pub struct UnknownController(pub String);

impl FromStr for ControllerKind {
    type Err = UnknownController;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownController(s.to_owned()))
    }
}

/// Fixed-frequency, fixed-width gait that ignores the state.
pub fn open_loop(phase_time: f64, nominals: &OpenLoopNominals) -> StepCommand {
    StepCommand::new((nominals.period - phase_time).max(0.0), nominals.width)
}

/// Remaining time until the CoM departs through `delta`.
///
/// When the trajectory never gets there the step is taken as soon as the
/// minimum step duration allows.
pub fn step_timing(s: ComState, params: &GaitParams, phase_time: f64, t_min: f64) -> f64 {
    time_to_departure(s, params.c, params.delta).unwrap_or((t_min - phase_time).max(0.0))
}

/// Adapts the timing only; the placement stays at the nominal width.
pub fn timing_controller(
    s: ComState,
    params: &GaitParams,
    nominals: &OpenLoopNominals,
    phase_time: f64,
    t_min: f64,
) -> StepCommand {
    StepCommand::new(step_timing(s, params, phase_time, t_min), nominals.width)
}

/// Timing plus the placement that makes the next step pass its apex at `alpha`.
pub fn full_controller(s: ComState, params: &GaitParams, phase_time: f64, t_min: f64) -> StepCommand {
    let t = step_timing(s, params, phase_time, t_min);
    let exchange = propagate(s, params.c, t);
    StepCommand::new(t, foot_placement_for_apex(exchange, params.c, params.alpha))
}

/// [`full_controller`] with the learned step-size error removed from the placement.
pub fn learning_controller(
    s: ComState,
    params: &GaitParams,
    phase_time: f64,
    t_min: f64,
    f_hat: &GridApproximator,
) -> StepCommand {
    let mut cmd = full_controller(s, params, phase_time, t_min);
    cmd.f -= f_hat.query(s);
    cmd
}

/// A controller of a given kind bound to its gait parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceController {
    pub kind: ControllerKind,
    pub gait: GaitParams,
    pub nominals: OpenLoopNominals,
    pub t_min: f64,
}

impl BalanceController {
    /// `f_hat` is only consulted by the learning controller; without one it
    /// behaves like the plain timing + step controller.
    pub fn command(&self, obs: ComState, phase_time: f64, f_hat: Option<&GridApproximator>) -> StepCommand {
        let cmd = match self.kind {
            ControllerKind::NoFeedback => open_loop(phase_time, &self.nominals),
            ControllerKind::Timing => timing_controller(obs, &self.gait, &self.nominals, phase_time, self.t_min),
            ControllerKind::TimingStep => full_controller(obs, &self.gait, phase_time, self.t_min),
            ControllerKind::TimingStepLearning => match f_hat {
                Some(g) => learning_controller(obs, &self.gait, phase_time, self.t_min, g),
                None => full_controller(obs, &self.gait, phase_time, self.t_min),
            },
        };
        sanitize(cmd, &self.nominals)
    }
}

// Non-finite observations (a diverged estimate) must not reach the plant.
fn sanitize(cmd: StepCommand, nominals: &OpenLoopNominals) -> StepCommand {
    StepCommand {
        t_remaining: if cmd.t_remaining.is_finite() { cmd.t_remaining.max(0.0) } else { 0.0 },
        f: if cmd.f.is_finite() { cmd.f } else { nominals.width },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::GridSpec;
    use crate::lipm::{apex_distance, change_support, PendulumConstant};

    fn gait() -> GaitParams {
        GaitParams::new(0.05, 0.10, PendulumConstant::new(3.5).unwrap()).unwrap()
    }

    #[test]
    fn open_loop_counts_down_and_ignores_state() {
        let n = OpenLoopNominals::default();
        assert_eq!(open_loop(0.0, &n), StepCommand::new(0.45, 0.22));
        assert_eq!(open_loop(0.45, &n).t_remaining, 0.0);
        assert_eq!(open_loop(0.6, &n).t_remaining, 0.0);
        let ctl = BalanceController {
            kind: ControllerKind::NoFeedback,
            gait: gait(),
            nominals: n,
            t_min: 0.1,
        };
        assert_eq!(
            ctl.command(ComState::new(0.1, 0.3), 0.2, None),
            ctl.command(ComState::new(-0.3, 2.0), 0.2, None)
        );
    }

    #[test]
    fn timing_on_and_off_the_orbit() {
        let g = gait();
        let n = OpenLoopNominals::default();
        let at_delta = timing_controller(ComState::new(0.10, 0.4), &g, &n, 0.2, 0.1);
        assert_eq!(at_delta.t_remaining, 0.0);
        assert_eq!(at_delta.f, n.width);
        // Apex of the nominal orbit: half a nominal step remains.
        let apex = timing_controller(ComState::new(0.05, 0.0), &g, &n, 0.0, 0.1);
        assert!((apex.t_remaining - 0.5 * g.nominal_step_duration()).abs() < 1e-12);
        // Crossing the pivot away from delta.
        let crossing = timing_controller(ComState::new(0.02, -0.5), &g, &n, 0.0, 0.1);
        assert_eq!(crossing.t_remaining, 0.1);
        let late = timing_controller(ComState::new(0.02, -0.5), &g, &n, 0.25, 0.1);
        assert_eq!(late.t_remaining, 0.0);
    }

    #[test]
    fn full_controller_places_for_alpha() {
        let g = gait();
        let cmd = full_controller(ComState::new(0.10, 0.0), &g, 0.3, 0.1);
        assert_eq!(cmd.t_remaining, 0.0);
        assert!((cmd.f - 0.15).abs() < 1e-15);

        let s = ComState::new(0.07, -0.2);
        let cmd = full_controller(s, &g, 0.0, 0.1);
        let after = change_support(propagate(s, g.c, cmd.t_remaining), cmd.f);
        assert!((apex_distance(after, g.c).unwrap() - g.alpha).abs() < 1e-9);

        // Nominal orbit: the placement is twice delta.
        let nominal = full_controller(ComState::new(g.alpha, 0.0), &g, 0.0, 0.1);
        assert!((nominal.f - 2.0 * g.delta).abs() < 1e-12);
    }

    #[test]
    fn pushes_widen_the_step() {
        let g = gait();
        let nominal = full_controller(ComState::new(0.08, 0.2), &g, 0.0, 0.1).f;
        let pushed = full_controller(ComState::new(0.08, 0.6), &g, 0.0, 0.1).f;
        assert!(pushed > nominal);
    }

    #[test]
    fn learning_subtracts_the_correction_from_placement_only() {
        let g = gait();
        let s = ComState::new(0.06, -0.1);
        let mut grid = GridApproximator::new(GridSpec::default()).unwrap();
        let base = full_controller(s, &g, 0.0, 0.1);
        assert_eq!(learning_controller(s, &g, 0.0, 0.1, &grid), base);
        grid.fill(0.01);
        let corrected = learning_controller(s, &g, 0.0, 0.1, &grid);
        assert_eq!(corrected.t_remaining, base.t_remaining);
        assert!((base.f - corrected.f - 0.01).abs() < 1e-15);
    }

    #[test]
    fn commands_are_finite() {
        let ctl = BalanceController {
            kind: ControllerKind::TimingStep,
            gait: gait(),
            nominals: OpenLoopNominals::default(),
            t_min: 0.1,
        };
        let cmd = ctl.command(ComState::new(f64::NAN, 0.0), 0.0, None);
        assert!(cmd.t_remaining.is_finite() && cmd.f.is_finite());
    }

    #[test]
    fn controller_names_round_trip() {
        for k in ControllerKind::ALL {
            assert_eq!(k.as_str().parse::<ControllerKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
        assert!("step".parse::<ControllerKind>().is_err());
    }
}
