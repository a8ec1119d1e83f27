//! Lateral capture-step balance laboratory.
//!
//! * [`lipm`]: closed-form linear inverted pendulum dynamics.
//! * [`plant`]: the simulated biped with model-mismatch knobs.
//! * [`balance`]: the four step controllers.
//! * [`learning`]: the online step-size error grid.
//! * [`calibration`]: gait parameters from undisturbed open-loop walking.
//! * [`experiment`]: the push-experiment harness and its logs.
//! * [`analysis`]: fall probability, phase-space heat maps, energy statistics.
//! * [`report`]: CSV tables and SVG figures of the analysis results.
//! * [`config`]: layered lab configuration.

pub mod analysis;
pub mod balance;
pub mod calibration;
pub mod config;
pub mod error;
pub mod experiment;
pub mod learning;
pub mod lipm;
pub mod plant;
pub mod report;

pub use error::ParamError;
