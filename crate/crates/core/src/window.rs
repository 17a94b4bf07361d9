//! Sliding-window configuration and window slicing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW_NS: u64 = 240_000_000;
pub const DEFAULT_STEP_NS: u64 = 80_000_000;
pub const DEFAULT_DECAY: f64 = 5.0;
pub const DEFAULT_SEQUENCE_NS: u64 = 2_000_000_000;

/// Sliding-window parameters for time-surface construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Window length in nanoseconds (240 ms default).
    pub window_ns: u64,
    /// Step between consecutive windows (80 ms default).
    pub step_ns: u64,
    /// Exponential decay constant applied over the window age.
    pub decay: f64,
    /// Nominal sequence length (2 s default).
    pub sequence_ns: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_ns: DEFAULT_WINDOW_NS,
            step_ns: DEFAULT_STEP_NS,
            decay: DEFAULT_DECAY,
            sequence_ns: DEFAULT_SEQUENCE_NS,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window config violates 0 < step <= window <= sequence (step {step_ns}, window {window_ns}, sequence {sequence_ns})")]
    BadConfig {
        step_ns: u64,
        window_ns: u64,
        sequence_ns: u64,
    },
    #[error("decay constant must be positive, got {0}")]
    BadDecay(f64),
    #[error("duration {duration_ns} ns shorter than one window ({window_ns} ns)")]
    DurationTooShort { duration_ns: u64, window_ns: u64 },
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.step_ns == 0 || self.step_ns > self.window_ns || self.window_ns > self.sequence_ns {
            return Err(WindowError::BadConfig {
                step_ns: self.step_ns,
                window_ns: self.window_ns,
                sequence_ns: self.sequence_ns,
            });
        }
        if !(self.decay > 0.0) {
            return Err(WindowError::BadDecay(self.decay));
        }
        Ok(())
    }
}

/// One aggregation window: `[start, end)` with `end = start + window_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub start_ns: u64,
    pub end_ns: u64,
}

/// Full windows over `[0, duration]`: window `k` covers
/// `[k*step, k*step + window)` and is emitted while its end fits within the
/// duration. Trailing partial windows are never emitted.
pub fn slice_windows(duration_ns: u64, config: &WindowConfig) -> Result<Vec<Window>, WindowError> {
    config.validate()?;
    if duration_ns < config.window_ns {
        return Err(WindowError::DurationTooShort {
            duration_ns,
            window_ns: config.window_ns,
        });
    }
    let count = ((duration_ns - config.window_ns) / config.step_ns) as usize + 1;
    Ok((0..count)
        .map(|index| {
            let start_ns = index as u64 * config.step_ns;
            Window {
                index,
                start_ns,
                end_ns: start_ns + config.window_ns,
            }
        })
        .collect())
}
