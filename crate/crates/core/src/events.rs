//! Event stream data model and the binary event-file format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod evt2;

/// Sign of the intensity change that produced an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    /// Intensity decrease, encoded as 0.
    Negative,
    /// Intensity increase, encoded as 1.
    Positive,
}

impl Polarity {
    #[inline]
    pub fn bit(self) -> u8 {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }

    #[inline]
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }
}

/// A single sensor event: pixel coordinates, change polarity and timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
    pub t_ns: u64,
}

impl Event {
    /// Sort key: timestamp first, ties broken by `(y, x, polarity)` so equal
    /// timestamps still order deterministically.
    #[inline]
    pub fn sort_key(&self) -> (u64, u16, u16, u8) {
        (self.t_ns, self.y, self.x, self.polarity.bit())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("event {index} at ({x}, {y}) outside sensor bounds {width}x{height}")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("event {index} timestamp {t_ns} ns exceeds stream duration {duration_ns} ns")]
    AfterEnd {
        index: usize,
        t_ns: u64,
        duration_ns: u64,
    },
    #[error("events out of order at index {index}")]
    Unsorted { index: usize },
    #[error("sensor dimensions must be nonzero")]
    EmptySensor,
}

/// A time-ordered sequence of events from one sensor.
///
/// Construction through [`EventStream::new`] validates bounds, duration and
/// ordering, so downstream consumers can rely on the invariants. The ordering
/// is non-decreasing in `t_ns` with the [`Event::sort_key`] tie-break.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    width: u16,
    height: u16,
    duration_ns: u64,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(
        width: u16,
        height: u16,
        duration_ns: u64,
        events: Vec<Event>,
    ) -> Result<Self, StreamError> {
        if width == 0 || height == 0 {
            return Err(StreamError::EmptySensor);
        }
        for (index, ev) in events.iter().enumerate() {
            if ev.x >= width || ev.y >= height {
                return Err(StreamError::OutOfBounds {
                    index,
                    x: ev.x,
                    y: ev.y,
                    width,
                    height,
                });
            }
            if ev.t_ns > duration_ns {
                return Err(StreamError::AfterEnd {
                    index,
                    t_ns: ev.t_ns,
                    duration_ns,
                });
            }
        }
        if let Some(index) = first_order_violation(&events) {
            return Err(StreamError::Unsorted { index });
        }
        Ok(Self {
            width,
            height,
            duration_ns,
            events,
        })
    }

    /// Sorts `events` by [`Event::sort_key`] before validating.
    pub fn from_unsorted(
        width: u16,
        height: u16,
        duration_ns: u64,
        mut events: Vec<Event>,
    ) -> Result<Self, StreamError> {
        events.sort_unstable_by_key(Event::sort_key);
        Self::new(width, height, duration_ns, events)
    }

    /// Builds a stream without validating ordering. The caller asserts the
    /// invariants; consumers that detect a violation later fail with a
    /// sortedness error.
    pub fn from_parts_unchecked(
        width: u16,
        height: u16,
        duration_ns: u64,
        events: Vec<Event>,
    ) -> Self {
        Self {
            width,
            height,
            duration_ns,
            events,
        }
    }

    #[inline]
    pub fn width(&self) -> u16 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u16 {
        self.height
    }

    #[inline]
    pub fn duration_ns(&self) -> u64 {
        self.duration_ns
    }

    #[inline]
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Index of the first event with `t_ns >= t`, by binary search.
    pub fn partition_at(&self, t: u64) -> usize {
        self.events.partition_point(|ev| ev.t_ns < t)
    }
}

/// Index of the first event that breaks the sort order, if any.
pub fn first_order_violation(events: &[Event]) -> Option<usize> {
    events
        .windows(2)
        .position(|w| w[0].sort_key() > w[1].sort_key())
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t_ns: u64, x: u16, y: u16, polarity: Polarity) -> Event {
        Event {
            x,
            y,
            polarity,
            t_ns,
        }
    }

    #[test]
    fn new_accepts_sorted_in_bounds() {
        let events = vec![
            ev(0, 1, 1, Polarity::Positive),
            ev(5, 0, 0, Polarity::Negative),
            ev(5, 0, 1, Polarity::Negative),
        ];
        let s = EventStream::new(4, 4, 10, events).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn new_rejects_out_of_bounds() {
        let events = vec![ev(0, 4, 0, Polarity::Positive)];
        let err = EventStream::new(4, 4, 10, events).unwrap_err();
        assert!(matches!(err, StreamError::OutOfBounds { index: 0, .. }));
    }

    #[test]
    fn new_rejects_timestamp_past_duration() {
        let events = vec![ev(11, 0, 0, Polarity::Positive)];
        let err = EventStream::new(4, 4, 10, events).unwrap_err();
        assert!(matches!(err, StreamError::AfterEnd { index: 0, .. }));
    }

    #[test]
    fn new_rejects_unsorted() {
        let events = vec![ev(5, 0, 0, Polarity::Positive), ev(4, 0, 0, Polarity::Positive)];
        let err = EventStream::new(4, 4, 10, events).unwrap_err();
        assert_eq!(err, StreamError::Unsorted { index: 1 });
    }

    #[test]
    fn tie_break_order_is_y_x_polarity() {
        // Same timestamp: (y, x, polarity) ascending is valid, descending is not.
        let ok = vec![ev(3, 2, 1, Polarity::Negative), ev(3, 1, 2, Polarity::Positive)];
        assert!(EventStream::new(4, 4, 10, ok).is_ok());
        let bad = vec![ev(3, 1, 2, Polarity::Positive), ev(3, 2, 1, Polarity::Negative)];
        assert!(matches!(
            EventStream::new(4, 4, 10, bad),
            Err(StreamError::Unsorted { index: 1 })
        ));
    }

    #[test]
    fn from_unsorted_sorts() {
        let events = vec![
            ev(9, 0, 0, Polarity::Positive),
            ev(1, 2, 2, Polarity::Negative),
            ev(9, 0, 0, Polarity::Negative),
        ];
        let s = EventStream::from_unsorted(4, 4, 10, events).unwrap();
        let ts: Vec<u64> = s.events().iter().map(|e| e.t_ns).collect();
        assert_eq!(ts, vec![1, 9, 9]);
        assert_eq!(s.events()[1].polarity, Polarity::Negative);
    }

    #[test]
    fn partition_at_finds_first_at_or_after() {
        let events = vec![
            ev(0, 0, 0, Polarity::Positive),
            ev(10, 0, 0, Polarity::Positive),
            ev(20, 0, 0, Polarity::Positive),
        ];
        let s = EventStream::new(4, 4, 30, events).unwrap();
        assert_eq!(s.partition_at(0), 0);
        assert_eq!(s.partition_at(10), 1);
        assert_eq!(s.partition_at(11), 2);
        assert_eq!(s.partition_at(25), 3);
    }
}
