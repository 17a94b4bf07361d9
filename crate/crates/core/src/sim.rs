//! Frame-to-event conversion.
//!
//! Per pixel, log intensity is modeled as piecewise linear between frames. A
//! reference level starts at frame 0 and every time the interpolated signal
//! moves a full contrast threshold away from it, one event is emitted at the
//! linearly interpolated crossing time and the reference steps by one
//! threshold toward the signal.

use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventStream, Polarity, StreamError};
use crate::image::Image;

/// Rendered intensity frames with per-frame timestamps.
///
/// Intensities are linear-scale HDR values: non-negative, not clamped at 1.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    width: usize,
    height: usize,
    timestamps_ns: Vec<u64>,
    frames: Vec<Image>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("frame sequence needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {index} is {got_w}x{got_h}, expected {expected_w}x{expected_h}")]
    FrameShapeMismatch {
        index: usize,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("frame timestamps must be strictly increasing (frame {index})")]
    NonIncreasingTimestamps { index: usize },
    #[error("frame {frame} has negative intensity {value} at ({x}, {y})")]
    NegativeIntensity {
        frame: usize,
        x: usize,
        y: usize,
        value: f32,
    },
    #[error("frame dimensions {width}x{height} exceed the 16-bit sensor coordinate range")]
    SensorTooLarge { width: usize, height: usize },
    #[error("contrast thresholds and log_eps must be positive")]
    BadSimConfig,
    #[error("event rate undefined for a zero-duration stream")]
    ZeroDuration,
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad frame manifest: {0}")]
    BadManifest(String),
}

impl FrameSequence {
    pub fn new(timestamps_ns: Vec<u64>, frames: Vec<Image>) -> Result<Self, SimError> {
        if frames.len() < 2 || timestamps_ns.len() != frames.len() {
            return Err(SimError::TooFewFrames(frames.len().min(timestamps_ns.len())));
        }
        let width = frames[0].width();
        let height = frames[0].height();
        for (index, frame) in frames.iter().enumerate() {
            if frame.width() != width || frame.height() != height {
                return Err(SimError::FrameShapeMismatch {
                    index,
                    expected_w: width,
                    expected_h: height,
                    got_w: frame.width(),
                    got_h: frame.height(),
                });
            }
        }
        for (index, pair) in timestamps_ns.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(SimError::NonIncreasingTimestamps { index: index + 1 });
            }
        }
        if width > u16::MAX as usize + 1 || height > u16::MAX as usize + 1 {
            return Err(SimError::SensorTooLarge { width, height });
        }
        Ok(Self {
            width,
            height,
            timestamps_ns,
            frames,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn timestamps_ns(&self) -> &[u64] {
        &self.timestamps_ns
    }

    #[inline]
    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Simulator tuning knobs, in log-intensity units.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub contrast_threshold_pos: f64,
    pub contrast_threshold_neg: f64,
    /// Stabilizer inside the log: reference level is `ln(I + log_eps)`.
    pub log_eps: f64,
    /// Background activity in events per pixel per second; 0 disables noise.
    pub noise_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            contrast_threshold_pos: 0.2,
            contrast_threshold_neg: 0.2,
            log_eps: 1e-3,
            noise_rate: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.contrast_threshold_pos > 0.0
            && self.contrast_threshold_neg > 0.0
            && self.log_eps > 0.0
            && self.noise_rate >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::BadSimConfig)
        }
    }
}

fn log_frame(frame: &Image, index: usize, log_eps: f64) -> Result<Vec<f64>, SimError> {
    let mut out = Vec::with_capacity(frame.as_slice().len());
    for (i, &v) in frame.as_slice().iter().enumerate() {
        if v < 0.0 {
            return Err(SimError::NegativeIntensity {
                frame: index,
                x: i % frame.width(),
                y: i / frame.width(),
                value: v,
            });
        }
        out.push((v as f64 + log_eps).ln());
    }
    Ok(out)
}

/// Convert frames to a sorted event stream.
///
/// The reference level is reconstructed from integer crossing counts
/// (`l_init + n_pos·C_pos − n_neg·C_neg`) instead of accumulating increments,
/// so long sequences cannot drift. `seed` feeds background noise and is
/// unused when `noise_rate` is 0.
pub fn generate_events(
    frames: &FrameSequence,
    config: &SimConfig,
    seed: u64,
) -> Result<EventStream, SimError> {
    config.validate()?;
    let c_pos = config.contrast_threshold_pos;
    let c_neg = config.contrast_threshold_neg;
    let n_px = frames.width() * frames.height();

    let mut log_prev = log_frame(&frames.frames()[0], 0, config.log_eps)?;
    let l_init = log_prev.clone();
    // Net crossing counts per pixel; the reference level is derived from them.
    let mut n_pos = vec![0i64; n_px];
    let mut n_neg = vec![0i64; n_px];

    let mut events: Vec<Event> = Vec::new();
    let width = frames.width();

    for seg in 1..frames.len() {
        let t_a = frames.timestamps_ns()[seg - 1];
        let t_b = frames.timestamps_ns()[seg];
        let dt = (t_b - t_a) as f64;
        let log_next = log_frame(&frames.frames()[seg], seg, config.log_eps)?;

        for px in 0..n_px {
            let l_a = log_prev[px];
            let l_b = log_next[px];
            if l_a == l_b {
                continue;
            }
            let l_ref = l_init[px] + n_pos[px] as f64 * c_pos - n_neg[px] as f64 * c_neg;
            let base = l_ref - l_a;
            let x = (px % width) as u16;
            let y = (px / width) as u16;

            if l_b > l_a {
                let span = l_b - l_a;
                let crossings = ((span - base) / c_pos).floor() as i64;
                for j in 1..=crossings {
                    // Mathematically in [0, 1]; the reference level is
                    // reconstructed from crossing counts, and that
                    // cancellation can push a boundary crossing out by a
                    // few ulps, so clamp after checking the tolerance.
                    let raw = (base + j as f64 * c_pos) / span;
                    debug_assert!((-1e-6..=1.0 + 1e-6).contains(&raw), "fraction {raw}");
                    let fraction = raw.clamp(0.0, 1.0);
                    let t_ns = t_a + (fraction * dt).round() as u64;
                    events.push(Event {
                        x,
                        y,
                        polarity: Polarity::Positive,
                        t_ns,
                    });
                }
                n_pos[px] += crossings.max(0);
            } else {
                let span = l_a - l_b;
                // Crossings sit at l_ref − j·C_neg down to l_b.
                let crossings = ((span + base) / c_neg).floor() as i64;
                for j in 1..=crossings {
                    let raw = (j as f64 * c_neg - base) / span;
                    debug_assert!((-1e-6..=1.0 + 1e-6).contains(&raw), "fraction {raw}");
                    let fraction = raw.clamp(0.0, 1.0);
                    let t_ns = t_a + (fraction * dt).round() as u64;
                    events.push(Event {
                        x,
                        y,
                        polarity: Polarity::Negative,
                        t_ns,
                    });
                }
                n_neg[px] += crossings.max(0);
            }
        }
        log_prev = log_next;
    }

    let duration_ns = *frames.timestamps_ns().last().expect("validated length");
    if config.noise_rate > 0.0 {
        let start_ns = frames.timestamps_ns()[0];
        events.extend(sample_noise_events(
            frames.width() as u16,
            frames.height() as u16,
            start_ns,
            duration_ns,
            config.noise_rate,
            seed,
        ));
    }
    Ok(EventStream::from_unsorted(
        frames.width() as u16,
        frames.height() as u16,
        duration_ns,
        events,
    )?)
}

fn sample_noise_events(
    width: u16,
    height: u16,
    start_ns: u64,
    end_ns: u64,
    rate_per_px: f64,
    seed: u64,
) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span_s = (end_ns - start_ns) as f64 / 1e9;
    let mean = rate_per_px * width as f64 * height as f64 * span_s;
    if mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64;
    (0..count)
        .map(|_| Event {
            x: rng.gen_range(0..width),
            y: rng.gen_range(0..height),
            polarity: if rng.gen_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            },
            t_ns: rng.gen_range(start_ns..=end_ns),
        })
        .collect()
}

/// Add uniformly distributed background events at the configured Poisson
/// rate and re-sort. `noise_rate` 0 returns the input unchanged.
pub fn inject_noise(
    stream: &EventStream,
    config: &SimConfig,
    seed: u64,
) -> Result<EventStream, SimError> {
    config.validate()?;
    if config.noise_rate == 0.0 {
        return Ok(stream.clone());
    }
    let mut events = stream.events().to_vec();
    events.extend(sample_noise_events(
        stream.width(),
        stream.height(),
        0,
        stream.duration_ns(),
        config.noise_rate,
        seed,
    ));
    Ok(EventStream::from_unsorted(
        stream.width(),
        stream.height(),
        stream.duration_ns(),
        events,
    )?)
}

/// Event counts and per-second rates, split by polarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRate {
    pub positive: u64,
    pub negative: u64,
    pub total_per_s: f64,
    pub positive_per_s: f64,
    pub negative_per_s: f64,
}

pub fn compute_event_rate(stream: &EventStream) -> Result<EventRate, SimError> {
    if stream.duration_ns() == 0 {
        return Err(SimError::ZeroDuration);
    }
    let positive = stream
        .events()
        .iter()
        .filter(|e| e.polarity == Polarity::Positive)
        .count() as u64;
    let negative = stream.len() as u64 - positive;
    let seconds = stream.duration_ns() as f64 / 1e9;
    Ok(EventRate {
        positive,
        negative,
        total_per_s: (positive + negative) as f64 / seconds,
        positive_per_s: positive as f64 / seconds,
        negative_per_s: negative as f64 / seconds,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameManifest {
    width: usize,
    height: usize,
    timestamps_ns: Vec<u64>,
    frame_files: Vec<String>,
}

/// Write a frame sequence as raw little-endian f32 planes plus a JSON
/// manifest, the on-disk interchange format for rendered sequences.
pub fn write_frame_dir<P: AsRef<Path>>(dir: P, frames: &FrameSequence) -> Result<(), SimError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut frame_files = Vec::with_capacity(frames.len());
    for (i, frame) in frames.frames().iter().enumerate() {
        let name = format!("frame_{i:06}.f32");
        let mut file = io::BufWriter::new(fs::File::create(dir.join(&name))?);
        for v in frame.as_slice() {
            file.write_all(&v.to_le_bytes())?;
        }
        file.flush()?;
        frame_files.push(name);
    }
    let manifest = FrameManifest {
        width: frames.width(),
        height: frames.height(),
        timestamps_ns: frames.timestamps_ns().to_vec(),
        frame_files,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SimError::BadManifest(e.to_string()))?;
    fs::write(dir.join("frames.json"), json)?;
    Ok(())
}

pub fn read_frame_dir<P: AsRef<Path>>(dir: P) -> Result<FrameSequence, SimError> {
    let dir = dir.as_ref();
    let json = fs::read_to_string(dir.join("frames.json"))?;
    let manifest: FrameManifest =
        serde_json::from_str(&json).map_err(|e| SimError::BadManifest(e.to_string()))?;
    if manifest.frame_files.len() != manifest.timestamps_ns.len() {
        return Err(SimError::BadManifest(
            "frame file and timestamp counts differ".into(),
        ));
    }
    let n_px = manifest.width * manifest.height;
    let mut frames = Vec::with_capacity(manifest.frame_files.len());
    for name in &manifest.frame_files {
        let mut bytes = Vec::new();
        fs::File::open(dir.join(name))?.read_to_end(&mut bytes)?;
        if bytes.len() != n_px * 4 {
            return Err(SimError::BadManifest(format!(
                "{name}: expected {} bytes, found {}",
                n_px * 4,
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        frames.push(Image::from_vec(manifest.width, manifest.height, data));
    }
    FrameSequence::new(manifest.timestamps_ns, frames)
}
