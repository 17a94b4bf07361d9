//! Polarity-separated time surfaces.
//!
//! A surface holds, for every pixel and polarity, an exponentially decayed
//! weight of the most recent event inside the window ending at `T_max`:
//!
//! ```text
//! value = exp(-decay * (T_max - T_i) / window)   if T_max - T_i < window
//!         0                                      otherwise
//! ```
//!
//! Positive-polarity events occupy rows `0..h-1`, negative-polarity events
//! rows `h..2h-1`, giving a `(w, 2h)` image. Events are applied oldest to
//! newest so a later event at the same pixel overwrites an earlier one.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::events::{first_order_violation, Event, EventStream, Polarity};
use crate::image::Image;
use crate::window::WindowConfig;

/// Decayed two-polarity image for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSurface {
    values: Image,
    window_end_ns: u64,
    window_index: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum SurfaceError {
    #[error("event stream is not sorted (first violation at index {index})")]
    UnsortedStream { index: usize },
    #[error("window end {window_end_ns} ns precedes one window length ({window_ns} ns)")]
    WindowTooEarly { window_end_ns: u64, window_ns: u64 },
    #[error("surface shape mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    ShapeMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("stacked surfaces must have consecutive window indices ({current}, then {got} where {expected} was expected)")]
    NonConsecutive {
        current: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Window(#[from] crate::window::WindowError),
}

impl TimeSurface {
    pub fn zeros(sensor_width: usize, sensor_height: usize, window_end_ns: u64) -> Self {
        Self {
            values: Image::zeros(sensor_width, 2 * sensor_height),
            window_end_ns,
            window_index: 0,
        }
    }

    pub fn with_index(mut self, window_index: usize) -> Self {
        self.window_index = window_index;
        self
    }

    /// The `(w, 2h)` value image.
    #[inline]
    pub fn values(&self) -> &Image {
        &self.values
    }

    #[inline]
    pub fn window_end_ns(&self) -> u64 {
        self.window_end_ns
    }

    #[inline]
    pub fn window_index(&self) -> usize {
        self.window_index
    }

    #[inline]
    pub fn sensor_width(&self) -> usize {
        self.values.width()
    }

    /// Height of one polarity plane (half the stored image height).
    #[inline]
    pub fn sensor_height(&self) -> usize {
        self.values.height() / 2
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, polarity: Polarity) -> f32 {
        let row = match polarity {
            Polarity::Positive => y,
            Polarity::Negative => self.sensor_height() + y,
        };
        self.values.get(x, row)
    }
}

#[inline]
fn decay_value(age_ns: u64, config: &WindowConfig) -> f32 {
    (-config.decay * age_ns as f64 / config.window_ns as f64).exp() as f32
}

#[inline]
fn plane_row(polarity: Polarity, y: usize, sensor_height: usize) -> usize {
    match polarity {
        Polarity::Positive => y,
        Polarity::Negative => sensor_height + y,
    }
}

/// Batch surface construction over the window `(window_end - window, window_end]`.
///
/// Events older than one window length are excluded (strict inequality), an
/// event exactly at `window_end` decays by zero and contributes 1.0.
pub fn build_time_surface(
    stream: &EventStream,
    window_end_ns: u64,
    config: &WindowConfig,
) -> Result<TimeSurface, SurfaceError> {
    config.validate()?;
    if window_end_ns < config.window_ns {
        return Err(SurfaceError::WindowTooEarly {
            window_end_ns,
            window_ns: config.window_ns,
        });
    }
    if let Some(index) = first_order_violation(stream.events()) {
        return Err(SurfaceError::UnsortedStream { index });
    }

    let h = stream.height() as usize;
    let mut surface = TimeSurface::zeros(stream.width() as usize, h, window_end_ns);

    // Only events with age strictly below one window can contribute.
    let first = stream.partition_at(window_end_ns - config.window_ns + 1);
    let last = stream.partition_at(window_end_ns + 1);
    for ev in &stream.events()[first..last] {
        let age_ns = window_end_ns - ev.t_ns;
        let row = plane_row(ev.polarity, ev.y as usize, h);
        surface
            .values
            .set(ev.x as usize, row, decay_value(age_ns, config));
    }
    Ok(surface)
}

/// Incremental surface state: the newest event timestamp per pixel and
/// polarity, decayed on demand.
///
/// Push events in stream order, then [`StreamingSurface::read`] at a window
/// boundary after all events with `t <= boundary` have been pushed. Pixels
/// whose newest event is a full window old (or older) read as zero, which
/// matches batch construction at every boundary.
#[derive(Debug, Clone)]
pub struct StreamingSurface {
    sensor_width: usize,
    sensor_height: usize,
    // Newest timestamp per (polarity-extended row, column); u64::MAX = empty.
    newest_ns: Vec<u64>,
}

const EMPTY: u64 = u64::MAX;

impl StreamingSurface {
    pub fn new(sensor_width: usize, sensor_height: usize) -> Self {
        Self {
            sensor_width,
            sensor_height,
            newest_ns: vec![EMPTY; sensor_width * sensor_height * 2],
        }
    }

    #[inline]
    pub fn push(&mut self, ev: &Event) {
        debug_assert!((ev.x as usize) < self.sensor_width);
        debug_assert!((ev.y as usize) < self.sensor_height);
        let row = plane_row(ev.polarity, ev.y as usize, self.sensor_height);
        self.newest_ns[row * self.sensor_width + ev.x as usize] = ev.t_ns;
    }

    pub fn read(&self, window_end_ns: u64, config: &WindowConfig) -> TimeSurface {
        let mut surface =
            TimeSurface::zeros(self.sensor_width, self.sensor_height, window_end_ns);
        let values = surface.values.as_mut_slice();
        for (slot, &t_ns) in values.iter_mut().zip(&self.newest_ns) {
            if t_ns == EMPTY || t_ns > window_end_ns {
                continue;
            }
            let age_ns = window_end_ns - t_ns;
            if age_ns < config.window_ns {
                *slot = decay_value(age_ns, config);
            }
        }
        surface
    }

    pub fn reset(&mut self) {
        self.newest_ns.fill(EMPTY);
    }
}

/// Stack the current surface with its two predecessors into a `(w, 6h)`
/// input, newest first. Missing predecessors at a sequence start are
/// replaced by zero planes.
pub fn stack_channels(
    current: &TimeSurface,
    previous: Option<&TimeSurface>,
    previous2: Option<&TimeSurface>,
) -> Result<Image, SurfaceError> {
    let w = current.values.width();
    let h2 = current.values.height();
    let mut data = Vec::with_capacity(w * h2 * 3);
    data.extend_from_slice(current.values.as_slice());

    for (offset, prev) in [(1usize, previous), (2usize, previous2)] {
        match prev {
            Some(p) => {
                if p.values.width() != w || p.values.height() != h2 {
                    return Err(SurfaceError::ShapeMismatch {
                        expected_w: w,
                        expected_h: h2,
                        got_w: p.values.width(),
                        got_h: p.values.height(),
                    });
                }
                if current.window_index < offset || p.window_index != current.window_index - offset
                {
                    return Err(SurfaceError::NonConsecutive {
                        current: current.window_index,
                        expected: current.window_index.saturating_sub(offset),
                        got: p.window_index,
                    });
                }
                data.extend_from_slice(p.values.as_slice());
            }
            None => data.extend(std::iter::repeat(0.0).take(w * h2)),
        }
    }
    Ok(Image::from_vec(w, h2 * 3, data))
}

/// Dump an image as an NPY v1.0 file of little-endian `f32`, shape
/// `(height, width)`.
pub fn write_npy<P: AsRef<Path>>(path: P, image: &Image) -> io::Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}), }}",
        image.height(),
        image.width()
    );
    // Pad with spaces so magic + header length + dict is 64-byte aligned,
    // terminated by a newline as the format requires.
    let unpadded = 10 + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = (dict.len() + padding + 1) as u16;
    w.write_all(b"\x93NUMPY\x01\x00")?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(dict.as_bytes())?;
    w.write_all(&vec![b' '; padding])?;
    w.write_all(b"\n")?;
    for v in image.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}
