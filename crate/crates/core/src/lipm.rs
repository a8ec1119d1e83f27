//! Closed-form lateral dynamics of the linear inverted pendulum.
//!
//! All states are expressed in the canonical support frame: the pivot is the
//! active support foot and the axis points from the support foot toward the
//! swing side, so a nominal gait keeps `y > 0`. The dynamics are
//! `ÿ = c²·y`, which have the exact solution
//!
//! ```text
//! y(t)  = y·cosh(ct) + (ẏ/c)·sinh(ct)
//! ẏ(t)  = y·c·sinh(ct) + ẏ·cosh(ct)
//! ```
//!
//! Everything here is a pure function over `Copy` values. Propagation grows
//! like `e^{ct}`; horizons of a few seconds are fine, minutes are not.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_finite, ParamError};

/// Energies with `|E|` below this are treated as lying on a zero-energy line.
pub const ENERGY_BOUNDARY_EPS: f64 = 1e-12;

/// Position tolerance used by the bracketing fallback of [`time_to_position`].
pub const POSITION_TOL: f64 = 1e-12;

const STANDARD_GRAVITY: f64 = 9.81;

/// `c = sqrt(g/h)` of the pendulum, in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PendulumConstant(f64);

impl PendulumConstant {
    pub fn new(c: f64) -> Result<Self, ParamError> {
        ensure_finite(c, "c")?;
        ensure(c > 0.0, "c", "must be > 0")?;
        Ok(Self(c))
    }

    /// Constant of a pendulum of height `height` under standard gravity.
    pub fn from_height(height: f64) -> Result<Self, ParamError> {
        ensure(height > 0.0 && height.is_finite(), "height", "must be finite and > 0")?;
        Self::new((STANDARD_GRAVITY / height).sqrt())
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for PendulumConstant {
    fn default() -> Self {
        Self(3.5)
    }
}

impl TryFrom<f64> for PendulumConstant {
    type Error = ParamError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<PendulumConstant> for f64 {
    fn from(c: PendulumConstant) -> f64 {
        c.0
    }
}

/// Lateral center-of-mass state relative to the support pivot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComState {
    /// Lateral offset from the pivot (m).
    pub y: f64,
    /// Lateral velocity (m/s).
    pub vy: f64,
}

impl ComState {
    pub const fn new(y: f64, vy: f64) -> Self {
        Self { y, vy }
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.vy.is_finite()
    }

    /// The same physical state seen from the opposite lateral orientation.
    pub fn mirrored(self) -> Self {
        Self::new(-self.y, -self.vy)
    }
}

/// Nominal gait shape: apex distance `alpha`, support exchange location
/// `delta` and the model pendulum constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    pub alpha: f64,
    pub delta: f64,
    pub c: PendulumConstant,
}

impl GaitParams {
    pub fn new(alpha: f64, delta: f64, c: PendulumConstant) -> Result<Self, ParamError> {
        let params = Self { alpha, delta, c };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        ensure_finite(self.alpha, "alpha")?;
        ensure_finite(self.delta, "delta")?;
        ensure(self.alpha > 0.0, "alpha", "must be > 0")?;
        ensure(self.delta > self.alpha, "delta", "must exceed alpha")?;
        PendulumConstant::new(self.c.get()).map(|_| ())
    }

    /// Orbital energy of the nominal orbit, `-c²α²/2`.
    pub fn nominal_energy(&self) -> f64 {
        let c = self.c.get();
        -0.5 * c * c * self.alpha * self.alpha
    }

    /// Outbound speed with which the nominal orbit reaches `delta`.
    pub fn nominal_exchange_speed(&self) -> f64 {
        self.c.get() * (self.delta * self.delta - self.alpha * self.alpha).sqrt()
    }

    /// Duration of one nominal step (exchange to exchange).
    pub fn nominal_step_duration(&self) -> f64 {
        2.0 * (self.delta / self.alpha).acosh() / self.c.get()
    }
}

/// Exact LIPM state after `t` seconds.
pub fn propagate(s: ComState, c: PendulumConstant, t: f64) -> ComState {
    propagate_about(s, c, 0.0, t)
}

/// Exact state after `t` seconds when the center of pressure sits at `pivot`
/// instead of the frame origin.
pub fn propagate_about(s: ComState, c: PendulumConstant, pivot: f64, t: f64) -> ComState {
    debug_assert!(t >= 0.0, "negative propagation time {t}");
    let c = c.get();
    let (sh, ch) = ((c * t).sinh(), (c * t).cosh());
    let u = s.y - pivot;
    ComState {
        y: pivot + u * ch + s.vy / c * sh,
        vy: u * c * sh + s.vy * ch,
    }
}

/// Orbital energy per unit mass, `(ẏ² − c²y²)/2`.
pub fn orbital_energy(s: ComState, c: PendulumConstant) -> f64 {
    let c = c.get();
    0.5 * (s.vy * s.vy - c * c * s.y * s.y)
}

/// Partition of the phase plane by the zero-energy lines `ẏ = ±c·y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Negative energy: the trajectory returns before reaching the pivot.
    Returning,
    /// Positive energy: the trajectory crosses (or has crossed) the pivot.
    Crossing,
    /// On a zero-energy line, within [`ENERGY_BOUNDARY_EPS`].
    Boundary,
}

pub fn region(s: ComState, c: PendulumConstant) -> Region {
    let e = orbital_energy(s, c);
    if e.abs() < ENERGY_BOUNDARY_EPS {
        Region::Boundary
    } else if e < 0.0 {
        Region::Returning
    } else {
        Region::Crossing
    }
}

/// Minimal distance between pivot and CoM along the trajectory, when the
/// trajectory does not cross the pivot.
pub fn apex_distance(s: ComState, c: PendulumConstant) -> Option<f64> {
    if region(s, c) != Region::Returning {
        return None;
    }
    let w = s.vy / c.get();
    Some((s.y * s.y - w * w).sqrt())
}

/// Time until the velocity vanishes, for a returning trajectory that is still
/// moving toward the pivot (or is at rest).
pub fn time_to_apex(s: ComState, c: PendulumConstant) -> Option<f64> {
    if region(s, c) != Region::Returning {
        return None;
    }
    if s.vy == 0.0 {
        return Some(0.0);
    }
    if s.y * s.vy > 0.0 {
        return None;
    }
    let ratio = -s.vy / (c.get() * s.y);
    Some(ratio.atanh() / c.get())
}

/// Smallest `t ≥ 0` with `y(t) = target`, if the trajectory ever gets there.
///
/// The closed form inverts `y(t) = A·e^{ct} + B·e^{-ct}` as a quadratic in
/// `e^{ct}`. Near-tangent cases (the apex grazing `target`) fall back to
/// bisection on `[0, 5/c]`.
pub fn time_to_position(s: ComState, c: PendulumConstant, target: f64) -> Option<f64> {
    crossings(s, c, target).first().copied()
}

/// First `t ≥ 0` at which the trajectory reaches `target` while moving away
/// from the pivot (`ẏ·target ≥ 0`).
///
/// This is the support-exchange crossing: a state that passes `target` on its
/// way in toward the pivot has not yet completed the step.
pub fn time_to_departure(s: ComState, c: PendulumConstant, target: f64) -> Option<f64> {
    crossings(s, c, target)
        .into_iter()
        .find(|&t| propagate(s, c, t).vy * target >= 0.0)
}

/// All `t ≥ 0` with `y(t) = target`, ascending. There are at most two.
fn crossings(s: ComState, c: PendulumConstant, target: f64) -> Vec<f64> {
    if !s.is_finite() || !target.is_finite() {
        return Vec::new();
    }
    let closed = closed_form_crossings(s, c, target);
    let roots = match closed {
        Some(roots) => roots,
        None => bracketed_crossings(s, c, target),
    };
    let mut out: Vec<f64> = roots.into_iter().map(|t| polish(s, c, target, t)).collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    out
}

/// Closed-form roots, or `None` when the quadratic is too ill-conditioned to
/// trust.
fn closed_form_crossings(s: ComState, c: PendulumConstant, target: f64) -> Option<Vec<f64>> {
    let k = c.get();
    if (s.y - target).abs() <= POSITION_TOL {
        let mut roots = vec![0.0];
        // The trajectory may come back to the same position later.
        let a = 0.5 * (s.y + s.vy / k);
        let b = 0.5 * (s.y - s.vy / k);
        if a != 0.0 {
            let x = b / a;
            if x > 1.0 + 1e-12 {
                roots.push(x.ln() / k);
            }
        }
        return Some(roots);
    }
    let a = 0.5 * (s.y + s.vy / k);
    let b = 0.5 * (s.y - s.vy / k);
    let scale = target.abs().max(s.y.abs()).max((s.vy / k).abs());
    if a.abs() <= 1e-14 * scale {
        // Pure decay toward the pivot: y(t) = B·e^{-ct}.
        if target == 0.0 {
            return Some(Vec::new());
        }
        let x = b / target;
        return Some(if x >= 1.0 { vec![x.ln() / k] } else { Vec::new() });
    }
    let disc = target * target - 4.0 * a * b;
    if disc.abs() <= 1e-9 * scale * scale {
        return None;
    }
    if disc < 0.0 {
        return Some(Vec::new());
    }
    let sq = disc.sqrt();
    let q = 0.5 * (target + target.signum() * sq);
    let mut xs = vec![q / a];
    if q != 0.0 {
        xs.push(b / q);
    }
    Some(
        xs.into_iter()
            .filter(|x| x.is_finite() && *x >= 1.0)
            .map(|x| x.ln() / k)
            .collect(),
    )
}

/// Bisection fallback over `[0, 5/c]`, split at the velocity zero so that each
/// piece is monotone.
fn bracketed_crossings(s: ComState, c: PendulumConstant, target: f64) -> Vec<f64> {
    let horizon = 5.0 / c.get();
    let g = |t: f64| propagate(s, c, t).y - target;
    let mut knots = vec![0.0];
    if let Some(t_turn) = velocity_zero(s, c) {
        if t_turn > 0.0 && t_turn < horizon {
            knots.push(t_turn);
        }
    }
    knots.push(horizon);

    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (glo, ghi) = (g(lo), g(hi));
        if glo.abs() <= POSITION_TOL {
            roots.push(lo);
            continue;
        }
        if ghi.abs() <= POSITION_TOL {
            roots.push(hi);
            continue;
        }
        if glo.signum() == ghi.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm.abs() <= POSITION_TOL || hi - lo <= f64::EPSILON * hi.max(1.0) {
                lo = mid;
                hi = mid;
                break;
            }
            if gm.signum() == glo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    roots
}

/// Time at which `ẏ = 0`, if it lies in the future.
fn velocity_zero(s: ComState, c: PendulumConstant) -> Option<f64> {
    let k = c.get();
    let a = 0.5 * (s.y + s.vy / k);
    let b = 0.5 * (s.y - s.vy / k);
    if a == 0.0 {
        return None;
    }
    let x2 = b / a;
    if x2 >= 1.0 {
        Some(0.5 * x2.ln() / k)
    } else {
        None
    }
}

fn polish(s: ComState, c: PendulumConstant, target: f64, t: f64) -> f64 {
    let mut best = t;
    let mut best_err = (propagate(s, c, t).y - target).abs();
    let mut cur = t;
    for _ in 0..3 {
        let p = propagate(s, c, cur);
        if p.vy.abs() < 1e-9 {
            break;
        }
        let next = (cur - (p.y - target) / p.vy).max(0.0);
        let err = (propagate(s, c, next).y - target).abs();
        if err < best_err {
            best = next;
            best_err = err;
        }
        cur = next;
    }
    best
}

/// Lateral foot placement, measured from the current support foot toward the
/// swing side, that makes the next step pass its apex at distance `alpha`.
///
/// `exchange` is the (predicted) state at the support exchange.
pub fn foot_placement_for_apex(exchange: ComState, c: PendulumConstant, alpha: f64) -> f64 {
    let w = exchange.vy / c.get();
    exchange.y + (alpha * alpha + w * w).sqrt()
}

/// Re-express a state in the frame of a new support foot placed `foot`
/// meters toward the swing side. The orientation flips with the support side.
pub fn change_support(s: ComState, foot: f64) -> ComState {
    ComState::new(foot - s.y, -s.vy)
}
