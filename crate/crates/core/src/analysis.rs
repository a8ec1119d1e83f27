//! Fall probability, phase-space heat maps and orbital-energy statistics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::balance::ControllerKind;
use crate::error::{ensure, ParamError};
use crate::experiment::{ExperimentLog, RecordKind};
use crate::lipm::{orbital_energy, ComState, PendulumConstant};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no pushes")]
    NoPushes,
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("logs mix controllers {0} and {1}")]
    MixedControllers(ControllerKind, ControllerKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapSpec {
    /// Defaults span the fall envelope: `±y_fall` and `±c·y_fall`.
    pub y_bounds: (f64, f64),
    pub vy_bounds: (f64, f64),
    /// Cells along `y`.
    pub ny: usize,
    /// Cells along `ẏ`.
    pub nvy: usize,
    /// Cells visited fewer times than this are masked.
    pub visit_threshold: u64,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self {
            y_bounds: (-0.35, 0.35),
            vy_bounds: (-1.225, 1.225),
            ny: 31,
            nvy: 31,
            visit_threshold: 10,
        }
    }
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        ensure(
            self.y_bounds.0.is_finite() && self.y_bounds.1.is_finite() && self.y_bounds.0 < self.y_bounds.1,
            "y_bounds",
            "must be finite and ordered",
        )?;
        ensure(
            self.vy_bounds.0.is_finite() && self.vy_bounds.1.is_finite() && self.vy_bounds.0 < self.vy_bounds.1,
            "vy_bounds",
            "must be finite and ordered",
        )?;
        ensure(self.ny > 0 && self.nvy > 0, "ny", "cell counts must be > 0")
    }

    /// Cell containing `s`, or `None` outside the bounds.
    pub fn cell(&self, s: ComState) -> Option<(usize, usize)> {
        let axis = |v: f64, (lo, hi): (f64, f64), n: usize| {
            if !(lo..=hi).contains(&v) {
                return None;
            }
            Some((((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1))
        };
        Some((axis(s.y, self.y_bounds, self.ny)?, axis(s.vy, self.vy_bounds, self.nvy)?))
    }

    pub fn cell_center(&self, iy: usize, ivy: usize) -> ComState {
        let (ylo, yhi) = self.y_bounds;
        let (vlo, vhi) = self.vy_bounds;
        ComState::new(
            ylo + (yhi - ylo) * (iy as f64 + 0.5) / self.ny as f64,
            vlo + (vhi - vlo) * (ivy as f64 + 0.5) / self.nvy as f64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    /// N·s
    pub bin_width: f64,
    pub heatmap: HeatmapSpec,
    /// Pushes whose initial excess is below this fraction of `|E_nom|` are
    /// left out of the efficiency: their ratio is dominated by noise.
    pub efficiency_floor: f64,
    /// Push-aligned window (s).
    pub series_window: (f64, f64),
    /// Steps after the push shown in the per-step statistics.
    pub max_step: u32,
    /// First push index of the late efficiency window, once the learner has
    /// had time to converge.
    pub late_from: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            bin_width: 1.0,
            heatmap: HeatmapSpec::default(),
            efficiency_floor: 1.0,
            series_window: (-0.5, 3.0),
            max_step: 6,
            late_from: 200,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<(), ParamError> {
        ensure(
            self.bin_width.is_finite() && self.bin_width > 0.0,
            "bin_width",
            "must be > 0",
        )?;
        self.heatmap.validate().map_err(|e| e.within("heatmap"))?;
        ensure(self.efficiency_floor >= 0.0, "efficiency_floor", "must be >= 0")?;
        ensure(
            self.series_window.0 < self.series_window.1,
            "series_window",
            "must be ordered",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallBin {
    pub lo: f64,
    pub hi: f64,
    pub trials: usize,
    pub falls: usize,
    /// `None` for an empty bin.
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallProbabilityTable {
    pub controller: ControllerKind,
    pub bin_width: f64,
    pub bins: Vec<FallBin>,
}

impl FallProbabilityTable {
    pub fn trials(&self) -> usize {
        self.bins.iter().map(|b| b.trials).sum()
    }
}

/// Fall probability per `|impulse|` bin; the last bin is closed on the right.
pub fn fall_probability(log: &ExperimentLog, bin_width: f64) -> Result<FallProbabilityTable, AnalysisError> {
    ensure(bin_width.is_finite() && bin_width > 0.0, "bin_width", "must be > 0")?;
    if log.pushes.is_empty() {
        return Err(AnalysisError::NoPushes);
    }
    let max = log.pushes.iter().fold(0.0f64, |m, p| m.max(p.impulse.abs()));
    let n = ((max / bin_width).ceil() as usize).max(1);
    let mut bins: Vec<FallBin> = (0..n)
        .map(|i| FallBin {
            lo: i as f64 * bin_width,
            hi: (i + 1) as f64 * bin_width,
            trials: 0,
            falls: 0,
            probability: None,
        })
        .collect();
    for p in &log.pushes {
        let i = ((p.impulse.abs() / bin_width) as usize).min(n - 1);
        bins[i].trials += 1;
        bins[i].falls += usize::from(p.fell);
    }
    for b in &mut bins {
        if b.trials > 0 {
            b.probability = Some(b.falls as f64 / b.trials as f64);
        }
    }
    Ok(FallProbabilityTable {
        controller: log.controller(),
        bin_width,
        bins,
    })
}

/// Smallest `|impulse|` that led to a fall.
pub fn min_falling_impulse(log: &ExperimentLog) -> Option<f64> {
    log.pushes
        .iter()
        .filter(|p| p.fell)
        .map(|p| p.impulse.abs())
        .min_by(f64::total_cmp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceHeatmap {
    pub controller: ControllerKind,
    pub spec: HeatmapSpec,
    /// Row-major `iy * nvy + ivy`: falls whose path touched the cell.
    pub counts: Vec<u64>,
    /// Every trace state, row-major.
    pub visits: Vec<u64>,
    /// Slope of the zero-energy lines `ẏ = ±c·y` (model `c`).
    pub zero_energy_slope: f64,
    pub falls: usize,
    /// Falls whose path contains a state with positive orbital energy under
    /// the plant's constant.
    pub falls_with_positive_energy: usize,
    /// Path states outside the grid.
    pub states_outside: u64,
}

impl PhaseSpaceHeatmap {
    pub fn count(&self, iy: usize, ivy: usize) -> u64 {
        self.counts[iy * self.spec.nvy + ivy]
    }

    pub fn visited(&self, iy: usize, ivy: usize) -> bool {
        self.visits[iy * self.spec.nvy + ivy] >= self.spec.visit_threshold
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of heat counts in cells whose center has positive energy.
    pub fn unstable_fraction(&self) -> Option<f64> {
        let c = PendulumConstant::new(self.zero_energy_slope).ok()?;
        let total = self.total_count();
        if total == 0 {
            return None;
        }
        let mut unstable = 0;
        for iy in 0..self.spec.ny {
            for ivy in 0..self.spec.nvy {
                if orbital_energy(self.spec.cell_center(iy, ivy), c) > 0.0 {
                    unstable += self.count(iy, ivy);
                }
            }
        }
        Some(unstable as f64 / total as f64)
    }
}

fn common_controller(logs: &[&ExperimentLog]) -> Result<ControllerKind, AnalysisError> {
    let first = logs.first().ok_or(AnalysisError::NoPushes)?.controller();
    for l in logs {
        if l.controller() != first {
            return Err(AnalysisError::MixedControllers(first, l.controller()));
        }
    }
    Ok(first)
}

/// Backtrack every fall to its push and count the cells on the way.
pub fn build_heatmap(logs: &[&ExperimentLog], spec: &HeatmapSpec) -> Result<PhaseSpaceHeatmap, AnalysisError> {
    spec.validate()?;
    let controller = common_controller(logs)?;
    let n = spec.ny * spec.nvy;
    let mut map = PhaseSpaceHeatmap {
        controller,
        spec: *spec,
        counts: vec![0; n],
        visits: vec![0; n],
        zero_energy_slope: logs[0].gait().c.get(),
        falls: 0,
        falls_with_positive_energy: 0,
        states_outside: 0,
    };
    for log in logs {
        let plant_c = log.meta.config.plant.c_plant;
        for r in log.trace.iter().filter(|r| r.record == RecordKind::Tick) {
            if let Some((iy, ivy)) = r.state().and_then(|s| spec.cell(s)) {
                map.visits[iy * spec.nvy + ivy] += 1;
            }
        }
        for p in log.pushes.iter().filter(|p| p.fell) {
            let until = p.push_time + p.time_to_fall.unwrap_or(f64::INFINITY);
            let mut touched = BTreeSet::new();
            let mut positive = false;
            let path = std::iter::once(p.state_after).chain(
                log.push_path(p.index, until)
                    .filter(|r| matches!(r.record, RecordKind::Tick | RecordKind::Fall))
                    .filter_map(|r| r.state()),
            );
            for s in path {
                positive |= orbital_energy(s, plant_c) > 0.0;
                match spec.cell(s) {
                    Some((iy, ivy)) => {
                        touched.insert(iy * spec.nvy + ivy);
                    }
                    None => map.states_outside += 1,
                }
            }
            for k in touched {
                map.counts[k] += 1;
            }
            map.falls += 1;
            map.falls_with_positive_energy += usize::from(positive);
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Seconds relative to the push.
    pub t: f64,
    pub n: usize,
    pub mean: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub step: u32,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    /// Percent; `None` when no push qualified.
    pub percent: Option<f64>,
    pub pushes_scored: usize,
    pub below_floor: usize,
    pub fell_before_next_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyStats {
    pub controller: ControllerKind,
    pub nominal_energy: f64,
    pub series: Vec<SeriesPoint>,
    /// Empty for the open-loop gait, which has no meaningful step alignment.
    pub per_step: Vec<BoxStats>,
    pub efficiency: Efficiency,
    /// Efficiency over pushes from `late_from` on.
    pub efficiency_late: Efficiency,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn box_stats(step: u32, mut xs: Vec<f64>) -> Option<BoxStats> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    Some(BoxStats {
        step,
        n: xs.len(),
        min: xs[0],
        q1: quantile(&xs, 0.25),
        median: quantile(&xs, 0.5),
        q3: quantile(&xs, 0.75),
        max: xs[xs.len() - 1],
    })
}

/// Per-push initial excess `e₀` (right after the impulse) and the excess of
/// the `n`-th step after the push, for the pushes in `range`.
fn step_excess(log: &ExperimentLog, push: usize, n: u32) -> Option<f64> {
    log.steps
        .iter()
        .find(|s| s.push == Some(push) && s.steps_after_push == Some(n) && !s.fell)
        .map(|s| s.excess)
}

/// Capture-step efficiency `1 − e₁/e₀` averaged over the pushes whose index
/// lies in `range`.
pub fn capture_efficiency(
    log: &ExperimentLog,
    range: std::ops::Range<usize>,
    floor_fraction: f64,
) -> Efficiency {
    let gait = log.gait();
    let floor = floor_fraction * gait.nominal_energy().abs();
    let mut sum = 0.0;
    let mut eff = Efficiency {
        percent: None,
        pushes_scored: 0,
        below_floor: 0,
        fell_before_next_step: 0,
    };
    for p in log.pushes.iter().filter(|p| range.contains(&p.index)) {
        let e0 = (orbital_energy(p.state_after, gait.c) - gait.nominal_energy()).abs();
        if e0 < floor || e0 == 0.0 {
            eff.below_floor += 1;
            continue;
        }
        match step_excess(log, p.index, 1) {
            Some(e1) => {
                sum += 1.0 - e1 / e0;
                eff.pushes_scored += 1;
            }
            None => eff.fell_before_next_step += 1,
        }
    }
    if eff.pushes_scored > 0 {
        eff.percent = Some(100.0 * sum / eff.pushes_scored as f64);
    }
    eff
}

pub fn energy_stats(log: &ExperimentLog, settings: &AnalysisSettings) -> Result<EnergyStats, AnalysisError> {
    settings.validate()?;
    if log.pushes.is_empty() {
        return Err(AnalysisError::NoPushes);
    }
    let gait = log.gait();
    let e_nom = gait.nominal_energy();
    let excess = |s: ComState| (orbital_energy(s, gait.c) - e_nom).abs();

    let dt = log.meta.config.plant.dt();
    let (w0, w1) = settings.series_window;
    let n_bins = ((w1 - w0) / dt).round() as usize + 1;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    let ticks: Vec<_> = log.trace.iter().filter(|r| r.record == RecordKind::Tick).collect();
    for p in &log.pushes {
        let horizon = p.time_to_fall.map_or(w1, |t| t.min(w1));
        let from = ticks.partition_point(|r| r.time < p.push_time + w0 - 0.5 * dt);
        for r in &ticks[from..] {
            let rel = r.time - p.push_time;
            if rel > horizon + 0.5 * dt {
                break;
            }
            let k = ((rel - w0) / dt).round();
            if k < 0.0 || k as usize >= n_bins {
                continue;
            }
            if let Some(s) = r.state() {
                buckets[k as usize].push(excess(s));
            }
        }
    }
    let series = buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(k, mut b)| {
            b.sort_by(f64::total_cmp);
            SeriesPoint {
                t: w0 + k as f64 * dt,
                n: b.len(),
                mean: b.iter().sum::<f64>() / b.len() as f64,
                q25: quantile(&b, 0.25),
                q75: quantile(&b, 0.75),
            }
        })
        .collect();

    let per_step = if log.controller().is_timed() {
        (0..=settings.max_step)
            .filter_map(|n| {
                let xs: Vec<f64> = log
                    .pushes
                    .iter()
                    .filter_map(|p| {
                        if n == 0 {
                            Some(excess(p.state_after))
                        } else {
                            step_excess(log, p.index, n)
                        }
                    })
                    .collect();
                box_stats(n, xs)
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(EnergyStats {
        controller: log.controller(),
        nominal_energy: e_nom,
        series,
        per_step,
        efficiency: capture_efficiency(log, 0..usize::MAX, settings.efficiency_floor),
        efficiency_late: capture_efficiency(log, settings.late_from..usize::MAX, settings.efficiency_floor),
    })
}
