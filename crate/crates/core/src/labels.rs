//! Gesture vocabulary and window-level label aggregation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The ten-class gesture vocabulary.
///
/// Codes are part of the on-disk label format and must never be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum GestureClass {
    /// Hand visible, motion outside the vocabulary.
    Unknown = 1,
    /// No hand in frame.
    Untracked = 2,
    Pinch = 3,
    DoublePinch = 4,
    PinchReturn = 5,
    SwipeLeft = 6,
    SwipeLeftReturn = 7,
    SwipeRight = 8,
    SwipeRightReturn = 9,
    Rest = 10,
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("invalid gesture class code {0}")]
    InvalidCode(u8),
    #[error("cannot aggregate an empty label window")]
    EmptyWindow,
    #[error("aggregation threshold {0} outside (0, 1]")]
    BadThreshold(f64),
}

impl GestureClass {
    pub const COUNT: usize = 10;

    pub const ALL: [GestureClass; Self::COUNT] = [
        GestureClass::Unknown,
        GestureClass::Untracked,
        GestureClass::Pinch,
        GestureClass::DoublePinch,
        GestureClass::PinchReturn,
        GestureClass::SwipeLeft,
        GestureClass::SwipeLeftReturn,
        GestureClass::SwipeRight,
        GestureClass::SwipeRightReturn,
        GestureClass::Rest,
    ];

    #[inline]
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, LabelError> {
        Self::ALL
            .get(code.wrapping_sub(1) as usize)
            .copied()
            .ok_or(LabelError::InvalidCode(code))
    }

    /// Zero-based index into model outputs and confusion matrices.
    #[inline]
    pub fn index(self) -> usize {
        self.code() as usize - 1
    }

    pub fn from_index(index: usize) -> Result<Self, LabelError> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or(LabelError::InvalidCode(index as u8 + 1))
    }

    /// Whether a hand is in frame for this class.
    #[inline]
    pub fn requires_hand(self) -> bool {
        self != GestureClass::Untracked
    }

    #[inline]
    pub fn is_return(self) -> bool {
        matches!(
            self,
            GestureClass::PinchReturn
                | GestureClass::SwipeLeftReturn
                | GestureClass::SwipeRightReturn
        )
    }

    /// Classes that trigger an emitted recognition during evaluation.
    #[inline]
    pub fn is_emittable(self) -> bool {
        matches!(
            self,
            GestureClass::Pinch
                | GestureClass::DoublePinch
                | GestureClass::SwipeLeft
                | GestureClass::SwipeRight
        )
    }

    /// The return motion paired with an emittable gesture. `PinchReturn`
    /// serves both pinch variants.
    pub fn return_class(self) -> Option<GestureClass> {
        match self {
            GestureClass::Pinch | GestureClass::DoublePinch => Some(GestureClass::PinchReturn),
            GestureClass::SwipeLeft => Some(GestureClass::SwipeLeftReturn),
            GestureClass::SwipeRight => Some(GestureClass::SwipeRightReturn),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GestureClass::Unknown => "unknown",
            GestureClass::Untracked => "untracked",
            GestureClass::Pinch => "pinch",
            GestureClass::DoublePinch => "double_pinch",
            GestureClass::PinchReturn => "pinch_return",
            GestureClass::SwipeLeft => "swipe_left",
            GestureClass::SwipeLeftReturn => "swipe_left_return",
            GestureClass::SwipeRight => "swipe_right",
            GestureClass::SwipeRightReturn => "swipe_right_return",
            GestureClass::Rest => "rest",
        }
    }
}

impl From<GestureClass> for u8 {
    fn from(class: GestureClass) -> u8 {
        class.code()
    }
}

impl TryFrom<u8> for GestureClass {
    type Error = LabelError;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        GestureClass::from_code(code)
    }
}

impl std::fmt::Display for GestureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Default fraction of a window a new label must cover to displace the
/// previous window's label.
pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.6;

/// Collapse the per-frame labels of one window into a single window label.
///
/// The first window of a sequence takes the majority label (ties resolved
/// toward the lowest class code). Later windows keep the previous window's
/// label unless the most frequent *other* label covers at least `threshold`
/// of the window.
pub fn aggregate_window_label(
    frame_labels: &[GestureClass],
    previous: Option<GestureClass>,
    threshold: f64,
) -> Result<GestureClass, LabelError> {
    if frame_labels.is_empty() {
        return Err(LabelError::EmptyWindow);
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(LabelError::BadThreshold(threshold));
    }

    let mut counts = [0usize; GestureClass::COUNT];
    for label in frame_labels {
        counts[label.index()] += 1;
    }

    match previous {
        None => {
            // Majority vote; scanning in code order makes ties pick the
            // lowest code.
            let best = counts
                .iter()
                .enumerate()
                .max_by_key(|&(i, &n)| (n, std::cmp::Reverse(i)))
                .map(|(i, _)| i)
                .expect("class table is non-empty");
            GestureClass::from_index(best)
        }
        Some(prev) => {
            let challenger = counts
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != prev.index())
                .max_by_key(|&(i, &n)| (n, std::cmp::Reverse(i)))
                .map(|(i, n)| (i, *n))
                .filter(|&(_, n)| n as f64 / frame_labels.len() as f64 >= threshold);
            match challenger {
                Some((i, _)) => GestureClass::from_index(i),
                None => Ok(prev),
            }
        }
    }
}
