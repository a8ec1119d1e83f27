//! Online step-size error learner.
//!
//! A uniform grid over the lateral phase plane holds the learned placement
//! error `f(y, ẏ)`. It is queried bilinearly and, once the apex that a step's
//! placement produced has been measured, every state the controller saw while
//! deciding that placement is moved toward the measured error:
//!
//! ```text
//! f(s_i) += η · (apex − α)
//! ```
//!
//! A state spreads its update over the four surrounding nodes with bilinear
//! weights. When several states of one step touch the same node, the node
//! takes the largest of their weights, so a single step moves any node by at
//! most `η·|apex − α|` regardless of how many ticks it lasted.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_finite, ParamError};
use crate::lipm::ComState;

/// Grid geometry and learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// m
    pub y_bounds: (f64, f64),
    /// m/s
    pub vy_bounds: (f64, f64),
    /// Nodes along `y`; a single node makes the function constant along it.
    pub ny: usize,
    /// Nodes along `ẏ`.
    pub nvy: usize,
    pub eta: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            y_bounds: (-0.05, 0.25),
            vy_bounds: (-0.8, 0.8),
            ny: 31,
            nvy: 31,
            eta: 0.2,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        for (v, name) in [
            (self.y_bounds.0, "y_bounds"),
            (self.y_bounds.1, "y_bounds"),
            (self.vy_bounds.0, "vy_bounds"),
            (self.vy_bounds.1, "vy_bounds"),
            (self.eta, "eta"),
        ] {
            ensure_finite(v, name)?;
        }
        ensure(self.y_bounds.0 < self.y_bounds.1, "y_bounds", "must be ordered (min < max)")?;
        ensure(self.vy_bounds.0 < self.vy_bounds.1, "vy_bounds", "must be ordered (min < max)")?;
        ensure(self.ny >= 1, "ny", "must be >= 1")?;
        ensure(self.nvy >= 1, "nvy", "must be >= 1")?;
        ensure(self.eta >= 0.0, "eta", "must be >= 0")
    }

    /// Lower node index and fractional offset along one axis, clamped.
    fn locate(v: f64, (lo, hi): (f64, f64), n: usize) -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let x = (v.clamp(lo, hi) - lo) / (hi - lo) * (n - 1) as f64;
        // NaN clamps to NaN; park it on the first node.
        let x = if x.is_nan() { 0.0 } else { x };
        let i = (x.floor() as usize).min(n - 2);
        (i, i + 1, x - i as f64)
    }

    /// Grid coordinate of node `i` along `y`.
    pub fn y_node(&self, i: usize) -> f64 {
        node(self.y_bounds, self.ny, i)
    }

    pub fn vy_node(&self, j: usize) -> f64 {
        node(self.vy_bounds, self.nvy, j)
    }
}

fn node((lo, hi): (f64, f64), n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// The states seen while one step's placement was being decided, and the
/// apex that placement produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepTrace {
    pub states: Vec<ComState>,
    pub apex_y: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Applied { error: f64, nodes: usize },
    /// The trajectory crossed the pivot; there is no apex to learn from.
    NoApex,
    EmptyTrace,
}

#[derive(Debug, thiserror::Error)]
pub enum GridFileError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridApproximator {
    spec: GridSpec,
    /// Row-major, `iy * nvy + ivy`.
    values: Vec<f64>,
    visits: Vec<u64>,
}

const FILE_TAG: &str = "capstep-grid";
const FILE_VERSION: &str = "1";

impl GridApproximator {
    /// All-zero grid.
    pub fn new(spec: GridSpec) -> Result<Self, ParamError> {
        spec.validate()?;
        let n = spec.ny * spec.nvy;
        Ok(Self {
            spec,
            values: vec![0.0; n],
            visits: vec![0; n],
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn value(&self, iy: usize, ivy: usize) -> f64 {
        self.values[iy * self.spec.nvy + ivy]
    }

    pub fn visits(&self, iy: usize, ivy: usize) -> u64 {
        self.visits[iy * self.spec.nvy + ivy]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Set every node to `v`.
    pub fn fill(&mut self, v: f64) {
        self.values.fill(v);
    }

    pub fn set_value(&mut self, iy: usize, ivy: usize, v: f64) {
        self.values[iy * self.spec.nvy + ivy] = v;
    }

    /// Bilinear weights of the (up to four) nodes around `s`.
    fn weights(&self, s: ComState) -> [(usize, f64); 4] {
        let sp = &self.spec;
        let (i0, i1, a) = GridSpec::locate(s.y, sp.y_bounds, sp.ny);
        let (j0, j1, b) = GridSpec::locate(s.vy, sp.vy_bounds, sp.nvy);
        let idx = |i: usize, j: usize| i * sp.nvy + j;
        [
            (idx(i0, j0), (1.0 - a) * (1.0 - b)),
            (idx(i1, j0), a * (1.0 - b)),
            (idx(i0, j1), (1.0 - a) * b),
            (idx(i1, j1), a * b),
        ]
    }

    /// Learned placement error at `s`; states outside the grid are clamped
    /// to its boundary.
    pub fn query(&self, s: ComState) -> f64 {
        self.weights(s).iter().map(|&(k, w)| w * self.values[k]).sum()
    }

    /// Apply one step's worth of learning.
    pub fn end_of_step_update(&mut self, trace: &StepTrace, alpha: f64) -> UpdateOutcome {
        let Some(apex) = trace.apex_y else {
            return UpdateOutcome::NoApex;
        };
        if trace.states.is_empty() {
            return UpdateOutcome::EmptyTrace;
        }
        let error = apex - alpha;
        let mut touched: BTreeMap<usize, f64> = BTreeMap::new();
        for &s in &trace.states {
            // Coinciding neighbors (single-node axes) add up first.
            let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
            for (k, w) in self.weights(s) {
                *merged.entry(k).or_default() += w;
            }
            for (k, w) in merged {
                self.visits[k] += w.round() as u64;
                let m = touched.entry(k).or_default();
                *m = m.max(w);
            }
        }
        let step = self.spec.eta * error;
        for (&k, &w) in &touched {
            self.values[k] += step * w;
        }
        UpdateOutcome::Applied {
            error,
            nodes: touched.len(),
        }
    }

    /// CSV with a header block (tag, bounds, shape, eta) followed by
    /// `iy,ivy,value,visits` rows.
    pub fn to_csv_string(&self) -> String {
        let sp = &self.spec;
        let mut out = String::new();
        out.push_str(&format!("{FILE_TAG},{FILE_VERSION}\n"));
        out.push_str(&format!("y_bounds,{},{}\n", sp.y_bounds.0, sp.y_bounds.1));
        out.push_str(&format!("vy_bounds,{},{}\n", sp.vy_bounds.0, sp.vy_bounds.1));
        out.push_str(&format!("shape,{},{}\n", sp.ny, sp.nvy));
        out.push_str(&format!("eta,{}\n", sp.eta));
        out.push_str("iy,ivy,value,visits\n");
        for iy in 0..sp.ny {
            for ivy in 0..sp.nvy {
                out.push_str(&format!("{iy},{ivy},{},{}\n", self.value(iy, ivy), self.visits(iy, ivy)));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), GridFileError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GridFileError> {
        Self::from_csv_str(&fs::read_to_string(path)?)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, GridFileError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let mut next = |what: &str| -> Result<csv::StringRecord, GridFileError> {
            match records.next() {
                Some(r) => Ok(r?),
                None => Err(GridFileError::Parse {
                    line: 0,
                    message: format!("unexpected end of file, expected {what}"),
                }),
            }
        };

        let tag = next("file tag")?;
        expect_key(&tag, FILE_TAG, 1)?;
        if field(&tag, 1)? != FILE_VERSION {
            return Err(parse_err(&tag, format!("unsupported version `{}`", field(&tag, 1)?)));
        }
        let yb = next("y_bounds")?;
        expect_key(&yb, "y_bounds", 2)?;
        let vb = next("vy_bounds")?;
        expect_key(&vb, "vy_bounds", 2)?;
        let shape = next("shape")?;
        expect_key(&shape, "shape", 2)?;
        let eta = next("eta")?;
        expect_key(&eta, "eta", 1)?;
        let spec = GridSpec {
            y_bounds: (num(&yb, 1)?, num(&yb, 2)?),
            vy_bounds: (num(&vb, 1)?, num(&vb, 2)?),
            ny: num(&shape, 1)?,
            nvy: num(&shape, 2)?,
            eta: num(&eta, 1)?,
        };
        let mut grid = Self::new(spec)?;

        let header = next("column header")?;
        if header.iter().collect::<Vec<_>>() != ["iy", "ivy", "value", "visits"] {
            return Err(parse_err(&header, "expected header `iy,ivy,value,visits`".into()));
        }
        let mut seen = vec![false; spec.ny * spec.nvy];
        for rec in records {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(parse_err(&rec, format!("expected 4 fields, found {}", rec.len())));
            }
            let iy: usize = num(&rec, 0)?;
            let ivy: usize = num(&rec, 1)?;
            if iy >= spec.ny || ivy >= spec.nvy {
                return Err(parse_err(&rec, format!("node ({iy}, {ivy}) outside a {}x{} grid", spec.ny, spec.nvy)));
            }
            let k = iy * spec.nvy + ivy;
            if std::mem::replace(&mut seen[k], true) {
                return Err(parse_err(&rec, format!("node ({iy}, {ivy}) listed twice")));
            }
            let value: f64 = num(&rec, 2)?;
            if !value.is_finite() {
                return Err(parse_err(&rec, "value must be finite".into()));
            }
            grid.values[k] = value;
            grid.visits[k] = num(&rec, 3)?;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(GridFileError::Parse {
                line: 0,
                message: format!(
                    "missing node ({}, {}): file truncated?",
                    k / spec.nvy,
                    k % spec.nvy
                ),
            });
        }
        Ok(grid)
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_err(rec: &csv::StringRecord, message: String) -> GridFileError {
    GridFileError::Parse {
        line: line_of(rec),
        message,
    }
}

fn field(rec: &csv::StringRecord, i: usize) -> Result<&str, GridFileError> {
    rec.get(i)
        .ok_or_else(|| parse_err(rec, format!("missing field {}", i + 1)))
}

fn expect_key(rec: &csv::StringRecord, key: &str, arity: usize) -> Result<(), GridFileError> {
    if field(rec, 0)? != key {
        return Err(parse_err(rec, format!("expected `{key}`, found `{}`", field(rec, 0)?)));
    }
    if rec.len() != arity + 1 {
        return Err(parse_err(rec, format!("`{key}` takes {arity} value(s)")));
    }
    Ok(())
}

fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, GridFileError>
where
    T::Err: std::fmt::Display,
{
    let raw = field(rec, i)?;
    raw.trim()
        .parse()
        .map_err(|e| parse_err(rec, format!("bad number `{raw}`: {e}")))
}
