//! Gait parameters from undisturbed open-loop walking.

use serde::{Deserialize, Serialize};

use crate::balance::{open_loop, OpenLoopNominals};
use crate::error::{ensure, ParamError};
use crate::lipm::{GaitParams, PendulumConstant};
use crate::plant::{Plant, PlantConfig, PlantEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSettings {
    pub n_steps: usize,
    /// Leading fraction of steps treated as transient and not averaged.
    pub discard_fraction: f64,
    pub seed: u64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            n_steps: 40,
            discard_fraction: 0.25,
            seed: 1,
        }
    }
}

impl CalibrationSettings {
    pub fn validate(&self) -> Result<(), ParamError> {
        ensure(self.n_steps >= 20, "n_steps", "must be >= 20")?;
        ensure(
            (0.0..0.9).contains(&self.discard_fraction),
            "discard_fraction",
            "must lie in [0, 0.9)",
        )
    }
}

/// Result of a calibration run; serialized as `gait_params.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub gait: GaitParams,
    /// Step period and width the open-loop generator was commanded with.
    pub generator: OpenLoopNominals,
    /// Mean step duration actually walked (s).
    pub measured_period: f64,
    /// Mean executed step width (m).
    pub measured_width: f64,
    /// Apex standard deviation over the second half of the run (m).
    pub apex_std: f64,
    pub steps_averaged: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("no limit cycle: apex std {std:.4} m exceeds 20% of the mean {mean:.4} m")]
    NoLimitCycle { mean: f64, std: f64 },
    #[error("the robot fell during open-loop walking at t = {time:.3} s")]
    Fell { time: f64 },
    #[error("only {found} of {needed} steps produced an apex")]
    MissingApex { found: usize, needed: usize },
    #[error("calibrated gait is degenerate: {0}")]
    Degenerate(ParamError),
}

#[derive(Debug, Default)]
struct StepSample {
    apex: Option<f64>,
    exchange_y: f64,
    duration: f64,
    width: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Walk `settings.n_steps` open-loop steps on the plant and average the
/// apex distance and the exchange location over the settled part.
pub fn calibrate(
    plant_config: &PlantConfig,
    generator: &OpenLoopNominals,
    model_c: PendulumConstant,
    settings: &CalibrationSettings,
) -> Result<Calibration, CalibrationError> {
    plant_config.validate().map_err(|e| e.within("plant"))?;
    generator.validate().map_err(|e| e.within("nominals"))?;
    settings.validate().map_err(|e| e.within("calibration"))?;

    let mut plant = Plant::new(*plant_config, *generator, settings.seed);
    let mut steps: Vec<StepSample> = Vec::with_capacity(settings.n_steps);
    let mut pending_apex = None;
    let max_ticks = (settings.n_steps as f64 * 10.0 * generator.period * plant_config.control_rate).ceil() as usize;
    for _ in 0..max_ticks {
        if steps.len() >= settings.n_steps {
            break;
        }
        let cmd = open_loop(plant.state().phase_time, generator);
        for event in plant.tick(cmd) {
            match event {
                PlantEvent::ApexReached { apex_y, .. } => pending_apex = Some(apex_y),
                PlantEvent::SupportExchange {
                    before,
                    executed_f,
                    step_duration,
                    ..
                } => steps.push(StepSample {
                    apex: pending_apex.take(),
                    exchange_y: before.y,
                    duration: step_duration,
                    width: executed_f,
                }),
                PlantEvent::Fell { time, .. } => return Err(CalibrationError::Fell { time }),
                PlantEvent::MinStepClamp { .. } => {}
            }
        }
    }

    let skip = (settings.n_steps as f64 * settings.discard_fraction).floor() as usize;
    let settled = &steps[skip.min(steps.len())..];
    let apexes: Vec<f64> = settled.iter().filter_map(|s| s.apex).collect();
    if apexes.len() < settled.len() || apexes.is_empty() {
        return Err(CalibrationError::MissingApex {
            found: apexes.len(),
            needed: settled.len(),
        });
    }
    let exchange: Vec<f64> = settled.iter().map(|s| s.exchange_y.abs()).collect();
    let durations: Vec<f64> = settled.iter().map(|s| s.duration).collect();
    let widths: Vec<f64> = settled.iter().map(|s| s.width).collect();

    let late: Vec<f64> = steps[steps.len() / 2..].iter().filter_map(|s| s.apex).collect();
    let alpha = mean(&apexes);
    let apex_std = std_dev(&late);
    if apex_std > 0.2 * mean(&late) {
        return Err(CalibrationError::NoLimitCycle {
            mean: mean(&late),
            std: apex_std,
        });
    }
    let gait = GaitParams::new(alpha, mean(&exchange), model_c).map_err(CalibrationError::Degenerate)?;
    Ok(Calibration {
        gait,
        generator: *generator,
        measured_period: mean(&durations),
        measured_width: mean(&widths),
        apex_std,
        steps_averaged: settled.len(),
    })
}
