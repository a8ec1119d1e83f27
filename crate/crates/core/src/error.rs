use thiserror::Error;

/// A parameter or configuration value that violates its contract.
///
/// `field` is a dotted path (`plant.mass`, `gait.delta`) so callers can
/// surface it directly in diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {reason}")]
pub struct ParamError {
    pub field: String,
    pub reason: String,
}

impl ParamError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Prefix the field path with an enclosing section name.
    pub fn within(mut self, section: &str) -> Self {
        self.field = format!("{section}.{}", self.field);
        self
    }
}

pub(crate) fn ensure(cond: bool, field: &str, reason: &str) -> Result<(), ParamError> {
    if cond {
        Ok(())
    } else {
        Err(ParamError::new(field, reason))
    }
}

pub(crate) fn ensure_finite(value: f64, field: &str) -> Result<(), ParamError> {
    ensure(value.is_finite(), field, "must be finite")
}
