//! Lab configuration with layered defaults.
//!
//! Built-in defaults are overlaid by a JSON file, then by individual
//! `section.field=value` overrides. Objects merge key by key; any other value
//! (numbers, arrays, strings) replaces the default outright. The merged
//! document is decoded strictly, so a misspelt or mistyped field is reported
//! with its full path.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::AnalysisSettings;
use crate::balance::{ControllerKind, OpenLoopNominals};
use crate::calibration::{Calibration, CalibrationSettings};
use crate::error::{ensure, ParamError};
use crate::experiment::ExperimentConfig;
use crate::learning::GridSpec;
use crate::lipm::PendulumConstant;
use crate::plant::{PlantConfig, Side};

/// The built-in defaults, as shipped in `config/defaults.json`.
pub const DEFAULTS_JSON: &str = include_str!("../../../config/defaults.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    pub n_pushes: usize,
    /// N·s
    pub impulse_range: (f64, f64),
    pub seed: u64,
    pub freeze_learning: bool,
    pub recovery_tolerance: f64,
    pub home_side: Side,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            n_pushes: 400,
            impulse_range: (-9.0, 9.0),
            seed: 1,
            freeze_learning: false,
            recovery_tolerance: 0.25,
            home_side: Side::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabConfig {
    /// Pendulum constant of the controller's model (1/s).
    pub model_c: PendulumConstant,
    pub nominals: OpenLoopNominals,
    pub plant: PlantConfig,
    pub calibration: CalibrationSettings,
    pub experiment: ExperimentSettings,
    pub grid: GridSpec,
    pub analysis: AnalysisSettings,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: invalid JSON: {message}")]
    Syntax { origin: String, message: String },
    #[error("{origin}: `{path}`: {message}")]
    Field {
        origin: String,
        path: String,
        message: String,
    },
    #[error("override `{0}` must have the form section.field=value")]
    Override(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

impl ConfigError {
    /// Dotted path of the offending field, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Field { path, .. } => Some(path),
            ConfigError::Param(e) => Some(&e.field),
            _ => None,
        }
    }
}

/// Recursively overlay `top` onto `base`.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Decode `T` from `value`, naming the failing field on error.
pub fn decode<T: serde::de::DeserializeOwned>(value: Value, origin: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Field {
        origin: origin.to_owned(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Parse JSON text, reporting syntax errors against `origin`.
pub fn parse_json(text: &str, origin: &str) -> Result<Value, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        origin: origin.to_owned(),
        message: e.to_string(),
    })
}

/// Turn `a.b.c=v` into `{"a":{"b":{"c":v}}}`. The value is read as JSON
/// when it parses, otherwise as a bare string.
pub fn parse_override(spec: &str) -> Result<Value, ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_owned()))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(spec.to_owned()));
    }
    let mut value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    for key in path.rsplit('.') {
        let mut obj = serde_json::Map::new();
        obj.insert(key.to_owned(), value);
        value = Value::Object(obj);
    }
    Ok(value)
}

impl LabConfig {
    /// Built-in defaults overlaid by `layers` in order. Each layer is a JSON
    /// document and a label used in diagnostics.
    pub fn layered<'a>(layers: impl IntoIterator<Item = (Value, &'a str)>) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(LabConfig::default()).expect("config serializes");
        let mut cfg = LabConfig::default();
        for (layer, label) in layers {
            merge(&mut doc, layer);
            // Decoding after every layer blames the layer that broke the document.
            cfg = decode(doc.clone(), label)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.nominals.validate().map_err(|e| e.within("nominals"))?;
        self.plant.validate().map_err(|e| e.within("plant"))?;
        self.calibration.validate().map_err(|e| e.within("calibration"))?;
        self.grid.validate().map_err(|e| e.within("grid"))?;
        self.analysis.validate().map_err(|e| e.within("analysis"))?;
        let x = &self.experiment;
        ensure(x.n_pushes > 0, "experiment.n_pushes", "must be > 0")?;
        ensure(
            x.impulse_range.0.is_finite() && x.impulse_range.1.is_finite() && x.impulse_range.0 <= x.impulse_range.1,
            "experiment.impulse_range",
            "must be finite and ordered (min <= max)",
        )?;
        ensure(
            x.recovery_tolerance.is_finite() && x.recovery_tolerance > 0.0,
            "experiment.recovery_tolerance",
            "must be > 0",
        )
    }

    /// Experiment for `controller` on a calibrated gait.
    pub fn experiment(&self, controller: ControllerKind, calibration: Calibration) -> ExperimentConfig {
        let x = &self.experiment;
        ExperimentConfig {
            controller,
            n_pushes: x.n_pushes,
            impulse_range: x.impulse_range,
            seed: x.seed,
            plant: self.plant,
            calibration,
            grid: self.grid,
            freeze_learning: x.freeze_learning,
            recovery_tolerance: x.recovery_tolerance,
            home_side: x.home_side,
            mirror: false,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
