#![allow(dead_code)]

use capstep_core::lipm::ComState;

/// Fixed-step RK4 integration of `ÿ = c²(y − pivot)`.
pub fn rk4(s: ComState, c: f64, pivot: f64, t: f64, dt: f64) -> ComState {
    let f = |y: f64, v: f64| (v, c * c * (y - pivot));
    let n = (t / dt).round() as usize;
    let h = t / n.max(1) as f64;
    let (mut y, mut v) = (s.y, s.vy);
    for _ in 0..n {
        let (k1y, k1v) = f(y, v);
        let (k2y, k2v) = f(y + 0.5 * h * k1y, v + 0.5 * h * k1v);
        let (k3y, k3v) = f(y + 0.5 * h * k2y, v + 0.5 * h * k2v);
        let (k4y, k4v) = f(y + h * k3y, v + h * k3v);
        y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    ComState::new(y, v)
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "no sign change on [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// RK4 trajectory sampled every `horizon / n` seconds: `(t, state)` pairs.
pub fn dense(s: ComState, c: f64, horizon: f64, n: usize) -> Vec<(f64, ComState)> {
    let h = horizon / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut cur = s;
    out.push((0.0, cur));
    for i in 1..=n {
        cur = rk4(cur, c, 0.0, h, h / 4.0);
        out.push((i as f64 * h, cur));
    }
    out
}
