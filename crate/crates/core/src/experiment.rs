//! Push-experiment harness.
//!
//! A run walks for one recovery period, then repeats `n_pushes` times: wait
//! for the sampled phase of the current step, apply the impulse, and walk for
//! another recovery period or until the robot falls. A fall resets the robot
//! to standing, after which it walks one full recovery period before the next
//! push.
//!
//! Impulses and push phases come from a stream seeded only by `seed`, so runs
//! of different controllers with the same seed see the same pushes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balance::{BalanceController, ControllerKind};
use crate::calibration::Calibration;
use crate::config::LabConfig;
use crate::error::{ensure, ensure_finite, ParamError};
use crate::learning::{GridApproximator, GridSpec, StepTrace, UpdateOutcome};
use crate::lipm::{orbital_energy, ComState, GaitParams};
use crate::plant::{Plant, PlantConfig, PlantEvent, PushEvent, Side};

pub const LOG_SCHEMA: &str = "capstep-log/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub controller: ControllerKind,
    pub n_pushes: usize,
    /// N·s, sampled uniformly.
    pub impulse_range: (f64, f64),
    pub seed: u64,
    pub plant: PlantConfig,
    pub calibration: Calibration,
    pub grid: GridSpec,
    /// Query the grid but never update it.
    pub freeze_learning: bool,
    /// A step has recovered once its energy excess drops below this fraction
    /// of the nominal orbital energy's magnitude.
    pub recovery_tolerance: f64,
    /// Support side at start and after every reset.
    pub home_side: Side,
    /// Negate every sampled impulse, leaving the push stream otherwise intact.
    #[serde(default)]
    pub mirror: bool,
}

impl ExperimentConfig {
    /// Default experiment settings for `controller`.
    pub fn new(controller: ControllerKind, calibration: Calibration, plant: PlantConfig, seed: u64) -> Self {
        let mut lab = LabConfig {
            plant,
            ..LabConfig::default()
        };
        lab.experiment.seed = seed;
        lab.experiment(controller, calibration)
    }

    pub fn gait(&self) -> &GaitParams {
        &self.calibration.gait
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        ensure(self.n_pushes > 0, "n_pushes", "must be > 0")?;
        ensure_finite(self.impulse_range.0, "impulse_range")?;
        ensure_finite(self.impulse_range.1, "impulse_range")?;
        ensure(
            self.impulse_range.0 <= self.impulse_range.1,
            "impulse_range",
            "must be ordered (min <= max)",
        )?;
        ensure_finite(self.recovery_tolerance, "recovery_tolerance")?;
        ensure(self.recovery_tolerance > 0.0, "recovery_tolerance", "must be > 0")?;
        self.calibration.gait.validate().map_err(|e| e.within("gait"))?;
        self.calibration.generator.validate().map_err(|e| e.within("nominals"))?;
        self.plant
            .validate_for_gait(&self.calibration.gait)
            .map_err(|e| e.within("plant"))?;
        self.grid.validate().map_err(|e| e.within("grid"))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Mirror image: pushes negated and walking starts on the other foot.
    pub fn mirrored(&self) -> Self {
        Self {
            mirror: !self.mirror,
            home_side: self.home_side.opposite(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    pub schema: String,
    pub code_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushRecord {
    pub index: usize,
    /// N·s
    pub impulse: f64,
    pub push_time: f64,
    /// Sampled target phase as a fraction of the nominal step period.
    pub target_phase: f64,
    /// Time since the last exchange when the push landed (s).
    pub phase_time: f64,
    pub side: Side,
    /// Canonical state right after the impulse.
    pub state_after: ComState,
    pub fell: bool,
    pub time_to_fall: Option<f64>,
    /// Steps after the push until the energy excess fell below tolerance.
    pub recovery_steps: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Push window the step belongs to; `None` during the initial walk.
    pub push: Option<usize>,
    pub start_time: f64,
    pub end_time: f64,
    pub side: Side,
    pub apex_y: Option<f64>,
    /// `|E − E_nom|` with the model constant, at the apex, or at the end of
    /// the step when there was none.
    pub excess: f64,
    /// 0 for the step the push landed in, then 1, 2, ...
    pub steps_after_push: Option<u32>,
    pub executed_f: Option<f64>,
    pub fell: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Tick,
    Push,
    Exchange,
    Apex,
    Fall,
    Reset,
    MinStep,
}

/// One row of the run CSV. Fields that do not apply to a record are empty.
///
/// | record   | y, vy                  | value            |
/// |----------|------------------------|------------------|
/// | tick     | true canonical state   |                  |
/// | push     | state after the push   | impulse (N·s)    |
/// | exchange | state before exchange  | step duration (s)|
/// | apex     | apex position, 0       |                  |
/// | fall     | state at the fall      | orbital energy (plant `c`) |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub record: RecordKind,
    pub push: Option<usize>,
    pub time: f64,
    pub side: Side,
    pub y: Option<f64>,
    pub vy: Option<f64>,
    pub obs_y: Option<f64>,
    pub obs_vy: Option<f64>,
    pub cmd_t: Option<f64>,
    pub cmd_f: Option<f64>,
    pub exec_f: Option<f64>,
    pub value: Option<f64>,
}

impl TraceRecord {
    fn bare(record: RecordKind, push: Option<usize>, time: f64, side: Side) -> Self {
        Self {
            record,
            push,
            time,
            side,
            y: None,
            vy: None,
            obs_y: None,
            obs_vy: None,
            cmd_t: None,
            cmd_f: None,
            exec_f: None,
            value: None,
        }
    }

    fn with_state(mut self, s: ComState) -> Self {
        self.y = Some(s.y);
        self.vy = Some(s.vy);
        self
    }

    pub fn state(&self) -> Option<ComState> {
        Some(ComState::new(self.y?, self.vy?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningDiagnostics {
    pub updates: u64,
    pub skipped_no_apex: u64,
    pub skipped_disturbed: u64,
    /// Apexes after a placement the leg could not reach.
    pub skipped_saturated: u64,
    pub max_abs_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub meta: LogMetadata,
    pub pushes: Vec<PushRecord>,
    pub steps: Vec<StepRecord>,
    pub learning: LearningDiagnostics,
    /// Falls that happened outside a post-push window.
    pub unattributed_falls: u64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub grid: Option<GridApproximator>,
}

impl ExperimentLog {
    pub fn controller(&self) -> ControllerKind {
        self.meta.config.controller
    }

    pub fn gait(&self) -> &GaitParams {
        self.meta.config.gait()
    }

    pub fn fall_count(&self) -> usize {
        self.pushes.iter().filter(|p| p.fell).count()
    }

    /// Trace rows of push `index` from the push itself up to `until`.
    pub fn push_path(&self, index: usize, until: f64) -> impl Iterator<Item = &TraceRecord> {
        let start = self.pushes[index].push_time;
        self.trace
            .iter()
            .filter(move |r| r.push == Some(index) && r.time >= start && r.time <= until)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: unsupported log schema `{found}` (expected `{LOG_SCHEMA}`)")]
    Schema { path: PathBuf, found: String },
}

/// File names of a run written under `dir` with stem `stem`.
pub fn log_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.json")))
}

impl ExperimentLog {
    pub fn trace_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.trace {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }

    pub fn metadata_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("log serializes");
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` (trace) and `<stem>.json` (metadata, pushes,
    /// steps). Returns both paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), LogError> {
        let (csv_path, json_path) = log_paths(dir, stem);
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| LogError::Io { path, source }
        };
        let bytes = self.trace_csv().map_err(|source| LogError::Csv {
            path: csv_path.clone(),
            source,
        })?;
        fs::write(&csv_path, bytes).map_err(io_err(&csv_path))?;
        fs::write(&json_path, self.metadata_json()).map_err(io_err(&json_path))?;
        Ok((csv_path, json_path))
    }

    /// Reads a run from its JSON sidecar and the CSV next to it.
    pub fn read(json_path: &Path) -> Result<Self, LogError> {
        let text = fs::read_to_string(json_path).map_err(|source| LogError::Io {
            path: json_path.to_path_buf(),
            source,
        })?;
        let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| LogError::Json {
            path: json_path.to_path_buf(),
            message: e.to_string(),
        })?;
        let found = probe
            .pointer("/meta/schema")
            .and_then(|v| v.as_str())
            .unwrap_or("<missing>");
        if found != LOG_SCHEMA {
            return Err(LogError::Schema {
                path: json_path.to_path_buf(),
                found: found.to_owned(),
            });
        }
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut log: ExperimentLog = serde_path_to_error::deserialize(de).map_err(|e| LogError::Json {
            path: json_path.to_path_buf(),
            message: format!("at `{}`: {}", e.path(), e.inner()),
        })?;
        let csv_path = json_path.with_extension("csv");
        let mut reader = csv::Reader::from_path(&csv_path).map_err(|source| LogError::Csv {
            path: csv_path.clone(),
            source,
        })?;
        for row in reader.deserialize() {
            log.trace.push(row.map_err(|source| LogError::Csv {
                path: csv_path.clone(),
                source,
            })?);
        }
        Ok(log)
    }
}

struct PushPlan {
    impulse: f64,
    phase: f64,
}

/// Seed of the plant's noise stream; kept apart from the push stream.
fn plant_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_B00C
}

fn sample_pushes(cfg: &ExperimentConfig) -> Vec<PushPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.impulse_range;
    let sign = if cfg.mirror { -1.0 } else { 1.0 };
    (0..cfg.n_pushes)
        .map(|_| PushPlan {
            impulse: sign * if lo < hi { rng.random_range(lo..=hi) } else { lo },
            phase: rng.random_range(0.0..1.0),
        })
        .collect()
}

/// Learner bookkeeping across one step boundary: the states of the last
/// finished step wait for the apex its placement produced.
#[derive(Default)]
struct LearnState {
    current: Vec<ComState>,
    pending: Option<Vec<ComState>>,
    /// A push landed since the last exchange, or the last placement was
    /// commanded from a sample taken before the push, so the coming apex does
    /// not measure the placement alone.
    disturbed: bool,
    /// The last placement hit the kinematic clamp.
    saturated: bool,
    push_time: Option<f64>,
}

struct Runner {
    cfg: ExperimentConfig,
    plant: Plant,
    controller: BalanceController,
    grid: Option<GridApproximator>,
    learn: LearnState,
    log_trace: Vec<TraceRecord>,
    steps: Vec<StepRecord>,
    diag: LearningDiagnostics,
    unattributed_falls: u64,
    window: Option<usize>,
    /// Push window that is still open for fall attribution.
    open_push: Option<usize>,
    steps_since_push: Option<u32>,
    step_start: f64,
    step_apex: Option<f64>,
    step_exec_f: Option<f64>,
}

enum TickOutcome {
    Walking,
    Fell { time: f64 },
}

impl Runner {
    fn new(cfg: ExperimentConfig, grid: Option<GridApproximator>) -> Self {
        let plant = Plant::with_side(cfg.plant, cfg.calibration.generator, plant_seed(cfg.seed), cfg.home_side);
        let controller = BalanceController {
            kind: cfg.controller,
            gait: cfg.calibration.gait,
            nominals: cfg.calibration.generator,
            t_min: cfg.plant.t_min,
        };
        Self {
            cfg,
            plant,
            controller,
            grid,
            learn: LearnState::default(),
            log_trace: Vec::new(),
            steps: Vec::new(),
            diag: LearningDiagnostics::default(),
            unattributed_falls: 0,
            window: None,
            open_push: None,
            steps_since_push: None,
            step_start: 0.0,
            step_apex: None,
            step_exec_f: None,
        }
    }

    fn excess(&self, s: ComState) -> f64 {
        let g = self.cfg.gait();
        (orbital_energy(s, g.c) - g.nominal_energy()).abs()
    }

    fn close_step(&mut self, end_time: f64, end_state: ComState, side: Side, fell: bool) {
        let excess = match self.step_apex {
            Some(a) => self.excess(ComState::new(a, 0.0)),
            None => self.excess(end_state),
        };
        self.steps.push(StepRecord {
            push: self.window,
            start_time: self.step_start,
            end_time,
            side,
            apex_y: self.step_apex,
            excess,
            steps_after_push: self.steps_since_push,
            executed_f: self.step_exec_f,
            fell,
        });
        self.step_start = end_time;
        self.step_apex = None;
    }

    fn on_apex(&mut self, apex_y: f64) {
        self.step_apex = Some(apex_y);
        let Some(states) = self.learn.pending.take() else {
            return;
        };
        if self.cfg.freeze_learning {
            return;
        }
        let Some(grid) = self.grid.as_mut() else {
            return;
        };
        if self.learn.disturbed {
            self.diag.skipped_disturbed += 1;
            return;
        }
        if self.learn.saturated {
            self.diag.skipped_saturated += 1;
            return;
        }
        let trace = StepTrace {
            states,
            apex_y: Some(apex_y),
        };
        if let UpdateOutcome::Applied { .. } = grid.end_of_step_update(&trace, self.cfg.gait().alpha) {
            self.diag.updates += 1;
        }
    }

    fn tick(&mut self) -> TickOutcome {
        let phase = self.plant.state().phase_time;
        let tick_start = self.plant.state().sim_time;
        let obs = self.plant.observe();
        let cmd = self.controller.command(obs, phase, self.grid.as_ref());
        self.learn.current.push(obs);
        let mut side = self.plant.state().support_side;
        let events = self.plant.tick(cmd);
        let mut fell_at = None;
        for e in events {
            match e {
                PlantEvent::ApexReached { time, apex_y } => {
                    let mut r = TraceRecord::bare(RecordKind::Apex, self.window, time, side);
                    r.y = Some(apex_y);
                    r.vy = Some(0.0);
                    self.log_trace.push(r);
                    self.on_apex(apex_y);
                }
                PlantEvent::SupportExchange {
                    time,
                    commanded_f,
                    executed_f,
                    clamped,
                    step_duration,
                    before,
                    ..
                } => {
                    let mut r = TraceRecord::bare(RecordKind::Exchange, self.window, time, side)
                        .with_state(before);
                    r.cmd_f = Some(commanded_f);
                    r.exec_f = Some(executed_f);
                    r.value = Some(step_duration);
                    self.log_trace.push(r);
                    if self.learn.pending.take().is_some() && self.grid.is_some() {
                        self.diag.skipped_no_apex += 1;
                    }
                    self.learn.pending = Some(std::mem::take(&mut self.learn.current));
                    self.learn.disturbed = self.blind_to_push(tick_start);
                    self.learn.saturated = clamped;
                    self.close_step(time, before, side, false);
                    side = side.opposite();
                    self.step_exec_f = Some(executed_f);
                    if let Some(n) = self.steps_since_push.as_mut() {
                        *n += 1;
                    }
                }
                PlantEvent::MinStepClamp { time, commanded_t } => {
                    let mut r = TraceRecord::bare(RecordKind::MinStep, self.window, time, side);
                    r.cmd_t = Some(commanded_t);
                    self.log_trace.push(r);
                }
                PlantEvent::Fell { time, state, energy } => {
                    let mut r = TraceRecord::bare(RecordKind::Fall, self.window, time, side).with_state(state);
                    r.value = Some(energy);
                    fell_at = Some((time, state));
                    self.log_trace.push(r);
                }
            }
        }
        let st = *self.plant.state();
        let mut r = TraceRecord::bare(RecordKind::Tick, self.window, st.sim_time, st.support_side)
            .with_state(self.plant.canonical());
        r.obs_y = Some(obs.y);
        r.obs_vy = Some(obs.vy);
        r.cmd_t = Some(cmd.t_remaining);
        r.cmd_f = Some(cmd.f);
        r.exec_f = self.step_exec_f;
        // A fall row already closes this instant.
        if fell_at.is_none() {
            self.log_trace.push(r);
        }

        match fell_at {
            Some((time, state)) => {
                self.close_step(time, state, side, true);
                self.reset(time);
                TickOutcome::Fell { time }
            }
            None => TickOutcome::Walking,
        }
    }

    fn reset(&mut self, time: f64) {
        self.plant.reset_to_standing();
        self.log_trace
            .push(TraceRecord::bare(RecordKind::Reset, self.window, time, self.plant.state().support_side));
        self.learn = LearnState::default();
        self.steps_since_push = None;
        self.step_apex = None;
        self.step_exec_f = None;
        self.step_start = time;
    }

    /// Walk for `duration` seconds. Returns the time of the first fall.
    fn walk(&mut self, duration: f64) -> Option<f64> {
        let n = (duration * self.cfg.plant.control_rate).round() as usize;
        for _ in 0..n {
            if let TickOutcome::Fell { time } = self.tick() {
                return Some(time);
            }
        }
        None
    }

    fn walk_settled(&mut self, duration: f64) {
        // Falls without a push should not happen; if they do, they are
        // counted and the robot restarts the settling walk.
        let mut attempts = 0;
        while self.walk(duration).is_some() {
            self.unattributed_falls += 1;
            attempts += 1;
            if attempts >= 3 {
                break;
            }
        }
    }

    fn run(mut self) -> ExperimentLog {
        let plans = sample_pushes(&self.cfg);
        let recovery = self.cfg.plant.recovery_time;
        let dt = self.cfg.plant.dt();
        let period = self.cfg.calibration.measured_period;
        let mut pushes = Vec::with_capacity(plans.len());
        self.walk_settled(recovery);

        for (index, plan) in plans.iter().enumerate() {
            self.window = Some(index);
            self.steps_since_push = None;
            // Wait for the sampled phase; a step that ends first takes the
            // push right after its exchange.
            let target = plan.phase * period;
            let start_step = self.plant.state().step_index;
            let mut guard = 0;
            while self.plant.state().phase_time + 0.5 * dt < target
                && self.plant.state().step_index == start_step
                && guard < 1000
            {
                if self.tick_no_fall() {
                    break;
                }
                guard += 1;
            }

            let st = *self.plant.state();
            let push = PushEvent {
                impulse: plan.impulse,
                apply_time: st.sim_time,
            };
            self.plant.apply_push(push);
            let after = self.plant.canonical();
            let mut r = TraceRecord::bare(RecordKind::Push, self.window, st.sim_time, st.support_side).with_state(after);
            r.value = Some(plan.impulse);
            self.log_trace.push(r);
            self.learn.disturbed = true;
            self.learn.push_time = Some(st.sim_time);
            self.steps_since_push = Some(0);
            self.open_push = Some(index);

            let fall = self.walk(recovery);
            self.open_push = None;
            let record = PushRecord {
                index,
                impulse: plan.impulse,
                push_time: st.sim_time,
                target_phase: plan.phase,
                phase_time: st.phase_time,
                side: st.support_side,
                state_after: after,
                fell: fall.is_some(),
                time_to_fall: fall.map(|t| t - st.sim_time),
                recovery_steps: if fall.is_some() { None } else { self.recovery_steps(index) },
            };
            pushes.push(record);
            if fall.is_some() {
                self.walk_settled(recovery);
            }
        }

        self.diag.max_abs_value = self.grid.as_ref().map_or(0.0, |g| g.max_abs_value());
        let config_hash = self.cfg.hash();
        ExperimentLog {
            meta: LogMetadata {
                schema: LOG_SCHEMA.to_owned(),
                code_version: env!("CARGO_PKG_VERSION").to_owned(),
                config_hash,
                config: self.cfg,
            },
            pushes,
            steps: self.steps,
            learning: self.diag,
            unattributed_falls: self.unattributed_falls,
            trace: self.log_trace,
            grid: self.grid,
        }
    }

    /// Whether the command of the tick starting at `tick_start` came from a
    /// sample older than the last push.
    fn blind_to_push(&self, tick_start: f64) -> bool {
        let dt = self.cfg.plant.dt();
        let delay = self.cfg.plant.delay_ticks() as f64 * dt;
        self.learn.push_time.is_some_and(|t| tick_start < t + delay - 0.5 * dt)
    }

    /// Tick while waiting for a push; returns whether the robot fell.
    fn tick_no_fall(&mut self) -> bool {
        match self.tick() {
            TickOutcome::Walking => false,
            TickOutcome::Fell { .. } => {
                self.unattributed_falls += 1;
                true
            }
        }
    }

    fn recovery_steps(&self, index: usize) -> Option<u32> {
        let tol = self.cfg.recovery_tolerance * self.cfg.gait().nominal_energy().abs();
        self.steps
            .iter()
            .filter(|s| s.push == Some(index))
            .filter_map(|s| s.steps_after_push.filter(|&n| n >= 1).map(|n| (n, s.excess)))
            .find(|&(_, e)| e < tol)
            .map(|(n, _)| n)
    }
}

/// Run one experiment. Learning controllers start from a zero grid.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentLog, ParamError> {
    run_experiment_with_grid(cfg, None)
}

/// Run one experiment, optionally starting the learner from `grid`.
pub fn run_experiment_with_grid(
    cfg: &ExperimentConfig,
    grid: Option<GridApproximator>,
) -> Result<ExperimentLog, ParamError> {
    cfg.validate()?;
    let grid = if cfg.controller.learns() {
        match grid {
            Some(g) => {
                g.spec().validate().map_err(|e| e.within("grid"))?;
                Some(g)
            }
            None => Some(GridApproximator::new(cfg.grid).map_err(|e| e.within("grid"))?),
        }
    } else {
        None
    };
    Ok(Runner::new(cfg.clone(), grid).run())
}
