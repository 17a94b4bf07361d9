//! Scene rendering: textured background, camera ego-motion, capsule hand
//! rasterization, per-frame labeling, and rotation augmentation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::hand::{
    bbox_from_joints, blend_poses, hand_joints, pose_at, rest_pose, BBox, HandPose,
};
use super::script::{sigmoid_profile, GestureScript};
use super::SynthError;
use crate::image::Image;
use crate::labels::GestureClass;
use crate::sim::FrameSequence;

/// Static scene description: background texture, lighting, camera seed.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Lighting multiplier in [0.5, 4.0] (50-400% of nominal).
    pub brightness_factor: f64,
    pub camera_path_seed: u64,
    pub texture_id: String,
    /// Wrapped (tiling) background intensity map.
    pub texture: Image,
}

impl SceneConfig {
    /// Value-noise background at ~8 px feature scale.
    pub fn procedural(
        width: usize,
        height: usize,
        brightness_factor: f64,
        texture_seed: u64,
        camera_path_seed: u64,
    ) -> Self {
        let texture = value_noise_texture(width, height, 8, texture_seed);
        Self {
            width,
            height,
            brightness_factor,
            camera_path_seed,
            texture_id: format!("value-noise-8px-{texture_seed}"),
            texture,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.5..=4.0).contains(&self.brightness_factor) {
            return Err(SynthError::BadConfig(format!(
                "brightness factor {} outside [0.5, 4.0]",
                self.brightness_factor
            )));
        }
        if self.width == 0 || self.height == 0 || self.texture.as_slice().is_empty() {
            return Err(SynthError::BadConfig("empty scene".into()));
        }
        Ok(())
    }
}

/// Motion and placement parameters for one synthesized sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub frame_rate_hz: f64,
    /// Per-joint per-frame angle jitter, degrees (clipped at 3 sigma).
    pub jitter_std_deg: f64,
    /// Camera waypoint disc radius; 0 pins the camera.
    pub camera_radius_px: f64,
    pub camera_speed_px_s: f64,
    pub camera_yaw_rate_deg_s: f64,
    /// Hand root as a fraction of the frame dimensions.
    pub hand_root_frac: (f64, f64),
    pub hand_scale_px: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            frame_rate_hz: 90.0,
            jitter_std_deg: 1.0,
            camera_radius_px: 6.0,
            camera_speed_px_s: 8.0,
            camera_yaw_rate_deg_s: 30.0,
            hand_root_frac: (0.5, 0.64),
            hand_scale_px: 10.0,
        }
    }
}

impl MotionConfig {
    /// Everything still: no jitter, no camera motion. Test hook.
    pub fn static_scene() -> Self {
        Self {
            jitter_std_deg: 0.0,
            camera_radius_px: 0.0,
            camera_speed_px_s: 0.0,
            camera_yaw_rate_deg_s: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.frame_rate_hz > 0.0
            && self.jitter_std_deg >= 0.0
            && self.camera_radius_px >= 0.0
            && self.camera_speed_px_s >= 0.0
            && self.camera_yaw_rate_deg_s >= 0.0
            && self.hand_scale_px > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SynthError::BadConfig("inconsistent motion config".into()))
        }
    }
}

/// Ground truth for one rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub t_ns: u64,
    pub label: GestureClass,
    /// Projected joints in frame coordinates, wrist first, unclipped.
    pub joints: Vec<(f64, f64)>,
    /// None exactly when the hand is out of frame (label Untracked).
    pub bbox: Option<BBox>,
}

fn value_noise_texture(width: usize, height: usize, cell: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gw = width.div_ceil(cell).max(1);
    let gh = height.div_ceil(cell).max(1);
    let grid: Vec<f32> = (0..gw * gh).map(|_| rng.gen_range(0.25..0.75)).collect();
    // Wrapping grid lookups keep the texture tileable.
    let node = |gx: usize, gy: usize| grid[(gy % gh) * gw + (gx % gw)];
    Image::from_fn(width, height, |x, y| {
        let fx = x as f32 / cell as f32;
        let fy = y as f32 / cell as f32;
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx.fract(), fy.fract());
        let sx = tx * tx * (3.0 - 2.0 * tx);
        let sy = ty * ty * (3.0 - 2.0 * ty);
        let top = node(x0, y0) * (1.0 - sx) + node(x0 + 1, y0) * sx;
        let bottom = node(x0, y0 + 1) * (1.0 - sx) + node(x0 + 1, y0 + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    })
}

#[inline]
fn sample_wrapped(texture: &Image, x: f64, y: f64) -> f64 {
    let w = texture.width() as f64;
    let h = texture.height() as f64;
    let xw = x.rem_euclid(w);
    let yw = y.rem_euclid(h);
    let x0 = xw.floor();
    let y0 = yw.floor();
    let tx = xw - x0;
    let ty = yw - y0;
    let xi = x0 as usize;
    let yi = y0 as usize;
    let xn = (xi + 1) % texture.width();
    let yn = (yi + 1) % texture.height();
    let a = texture.get(xi, yi) as f64;
    let b = texture.get(xn, yi) as f64;
    let c = texture.get(xi, yn) as f64;
    let d = texture.get(xn, yn) as f64;
    (a * (1.0 - tx) + b * tx) * (1.0 - ty) + (c * (1.0 - tx) + d * tx) * ty
}

/// Per-frame camera pose: translation offset plus yaw about frame center.
struct CameraTrack {
    offsets: Vec<(f64, f64)>,
    yaws_rad: Vec<f64>,
}

fn build_camera_track(
    seed: u64,
    radius: f64,
    speed: f64,
    yaw_rate_max_deg_s: f64,
    times_s: &[f64],
) -> CameraTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = if radius > 0.0 && speed > 0.0 {
        // Constant-speed traversal of waypoints in the safe-zone disc.
        let mut waypoints = vec![(0.0f64, 0.0f64)];
        let mut path_len = 0.0;
        let need = speed * times_s.last().copied().unwrap_or(0.0) + 1e-9;
        while path_len < need {
            let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let next = (r * phi.cos(), r * phi.sin());
            let last = *waypoints.last().expect("seeded with origin");
            let leg = ((next.0 - last.0).powi(2) + (next.1 - last.1).powi(2)).sqrt();
            if leg < 1e-6 {
                continue;
            }
            path_len += leg;
            waypoints.push(next);
        }
        times_s
            .iter()
            .map(|&t| {
                let mut remaining = speed * t;
                for pair in waypoints.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    let leg = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
                    if remaining <= leg {
                        let f = remaining / leg;
                        return (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
                    }
                    remaining -= leg;
                }
                *waypoints.last().expect("non-empty")
            })
            .collect()
    } else {
        vec![(0.0, 0.0); times_s.len()]
    };

    let yaws_rad = if yaw_rate_max_deg_s > 0.0 {
        // Piecewise-constant yaw rate, resampled every half second.
        let max = yaw_rate_max_deg_s.to_radians();
        let mut yaw = 0.0f64;
        let mut rate = rng.gen_range(-max..=max);
        let mut segment_end = 0.5f64;
        let mut prev_t = 0.0f64;
        times_s
            .iter()
            .map(|&t| {
                let mut cursor = prev_t;
                while t > segment_end {
                    yaw += rate * (segment_end - cursor);
                    cursor = segment_end;
                    rate = rng.gen_range(-max..=max);
                    segment_end += 0.5;
                }
                yaw += rate * (t - cursor);
                prev_t = t;
                yaw
            })
            .collect()
    } else {
        vec![0.0; times_s.len()]
    };

    CameraTrack { offsets, yaws_rad }
}

const SEGMENTS: [(usize, usize); 5] = [(0, 1), (1, 2), (2, 3), (0, 4), (4, 5)];
const SEGMENT_RADII: [f64; 5] = [2.6, 2.1, 1.7, 2.4, 1.9];
const SEGMENT_VALUES: [f64; 5] = [1.35, 1.30, 1.25, 1.48, 1.42];
const PALM_RADIUS: f64 = 3.6;
const PALM_VALUE: f64 = 1.30;
const EDGE_SOFTNESS: f64 = 0.9;

#[inline]
fn smooth01(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Render the hand over the background for one camera pose. `joints` are in
/// world coordinates; each pixel is pulled through the camera transform.
fn render_frame(
    scene: &SceneConfig,
    joints: &[(f64, f64)],
    hand_scale: f64,
    offset: (f64, f64),
    yaw: f64,
    hand_visible: bool,
) -> Image {
    let w = scene.width;
    let h = scene.height;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin_yaw, cos_yaw) = yaw.sin_cos();
    let radius_scale = hand_scale / 10.0;

    // Hand bounding circle in world space for the cheap reject test.
    let (hand_cx, hand_cy, hand_r2) = if hand_visible {
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(jx, jy) in joints {
            sx += jx;
            sy += jy;
        }
        let n = joints.len() as f64;
        let (mx, my) = (sx / n, sy / n);
        let mut r2: f64 = 0.0;
        for &(jx, jy) in joints {
            r2 = r2.max((jx - mx).powi(2) + (jy - my).powi(2));
        }
        let margin = PALM_RADIUS * radius_scale + EDGE_SOFTNESS + 1.0;
        (mx, my, (r2.sqrt() + margin).powi(2))
    } else {
        (0.0, 0.0, -1.0)
    };

    let brightness = scene.brightness_factor as f32;
    Image::from_fn(w, h, |px, py| {
        let dx = px as f64 - cx;
        let dy = py as f64 - cy;
        let wx = cos_yaw * dx - sin_yaw * dy + cx + offset.0;
        let wy = sin_yaw * dx + cos_yaw * dy + cy + offset.1;
        let mut value = sample_wrapped(&scene.texture, wx, wy);

        if hand_visible && (wx - hand_cx).powi(2) + (wy - hand_cy).powi(2) <= hand_r2 {
            // Palm disc.
            let wrist = joints[0];
            let d_palm = ((wx - wrist.0).powi(2) + (wy - wrist.1).powi(2)).sqrt();
            let a = smooth01((PALM_RADIUS * radius_scale + EDGE_SOFTNESS - d_palm)
                / (2.0 * EDGE_SOFTNESS));
            value = value * (1.0 - a) + PALM_VALUE * a;
            // Capsule segments with a slight tip-ward shading ramp.
            for (s, &(i, j)) in SEGMENTS.iter().enumerate() {
                let (ax, ay) = joints[i];
                let (bx, by) = joints[j];
                let (ux, uy) = (bx - ax, by - ay);
                let len2 = ux * ux + uy * uy;
                let t = if len2 > 1e-12 {
                    (((wx - ax) * ux + (wy - ay) * uy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (ax + t * ux, ay + t * uy);
                let d = ((wx - qx).powi(2) + (wy - qy).powi(2)).sqrt();
                let r = SEGMENT_RADII[s] * radius_scale;
                let a = smooth01((r + EDGE_SOFTNESS - d) / (2.0 * EDGE_SOFTNESS));
                let shade = SEGMENT_VALUES[s] * (1.0 + 0.08 * t);
                value = value * (1.0 - a) + shade * a;
            }
        }
        value as f32 * brightness
    })
}

/// Pose of the scripted hand at `t_ns`, including the post-gesture blend
/// back to rest when a gesture skipped its return.
fn scripted_pose(
    script: &GestureScript,
    blend_ns: u64,
    t_ns: u64,
    rest: &HandPose,
) -> (HandPose, Option<GestureClass>) {
    if let Some(entry) = script.entry_at(t_ns) {
        let progress = (t_ns - entry.start_ns) as f64 / entry.duration_ns as f64;
        // Tracking loss is a drift, not a ballistic stroke: its arc runs on
        // raw time, so the out-of-frame stretch is not compressed into the
        // sigmoid's fast middle.
        let motion = if entry.class == GestureClass::Untracked {
            progress
        } else {
            sigmoid_profile(progress, entry.profile_m)
        };
        return (pose_at(entry.class, motion, rest), Some(entry.class));
    }
    // Between entries: blend back from the previous peak if it just ended
    // without a paired return.
    for entry in script.entries().iter().rev() {
        if entry.end_ns() <= t_ns {
            let since = t_ns - entry.end_ns();
            let followed_by_return = script
                .entries()
                .iter()
                .any(|e| e.start_ns == entry.end_ns());
            if since < blend_ns && !followed_by_return {
                let alpha = since as f64 / blend_ns as f64;
                let end_pose = pose_at(entry.class, 1.0, rest);
                let pose = blend_poses(&end_pose, rest, alpha).expect("same topology");
                return (pose, None);
            }
            break;
        }
    }
    (rest.clone(), None)
}

/// Render a scripted sequence: frames plus per-frame labels, joints, and
/// boxes. Frame `i` (1-based) sits at `round(i/rate)`, so the last frame
/// lands exactly on the sequence end.
pub fn synthesize_sequence(
    script: &GestureScript,
    scene: &SceneConfig,
    motion: &MotionConfig,
    blend_ns: u64,
    seed: u64,
) -> Result<(FrameSequence, Vec<FrameAnnotation>), SynthError> {
    scene.validate()?;
    motion.validate()?;

    let total_s = script.total_ns() as f64 / 1e9;
    let frame_count = (motion.frame_rate_hz * total_s).round() as usize;
    if frame_count < 2 {
        return Err(SynthError::BadConfig(
            "sequence too short for two frames".into(),
        ));
    }
    let timestamps_ns: Vec<u64> = (1..=frame_count)
        .map(|i| (i as f64 * 1e9 / motion.frame_rate_hz).round() as u64)
        .collect();
    let times_s: Vec<f64> = timestamps_ns.iter().map(|&t| t as f64 / 1e9).collect();

    let camera = build_camera_track(
        scene.camera_path_seed,
        motion.camera_radius_px,
        motion.camera_speed_px_s,
        motion.camera_yaw_rate_deg_s,
        &times_s,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = if motion.jitter_std_deg > 0.0 {
        Some(Normal::new(0.0, motion.jitter_std_deg.to_radians()).expect("positive std"))
    } else {
        None
    };

    let rest = rest_pose(
        (
            motion.hand_root_frac.0 * scene.width as f64,
            motion.hand_root_frac.1 * scene.height as f64,
        ),
        motion.hand_scale_px,
    );
    let w = scene.width;
    let h = scene.height;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;

    let mut frames = Vec::with_capacity(frame_count);
    let mut annotations = Vec::with_capacity(frame_count);
    for (i, &t_ns) in timestamps_ns.iter().enumerate() {
        let (mut pose, scripted_class) = scripted_pose(script, blend_ns, t_ns, &rest);
        if let Some(dist) = &jitter {
            let clip = 3.0 * motion.jitter_std_deg.to_radians();
            for angle in pose.angles.iter_mut() {
                *angle += dist.sample(&mut rng).clamp(-clip, clip);
            }
            pose.clamp_to_limits();
        }

        let world_joints = hand_joints(&pose);
        let (offset, yaw) = (camera.offsets[i], camera.yaws_rad[i]);
        // Frame coordinates = inverse camera transform of world points.
        let (sin_yaw, cos_yaw) = yaw.sin_cos();
        let frame_joints: Vec<(f64, f64)> = world_joints
            .iter()
            .map(|&(jx, jy)| {
                let rx = jx - cx - offset.0;
                let ry = jy - cy - offset.1;
                (
                    cos_yaw * rx + sin_yaw * ry + cx,
                    -sin_yaw * rx + cos_yaw * ry + cy,
                )
            })
            .collect();

        let out_of_frame = frame_joints
            .iter()
            .all(|&(jx, jy)| jx < 0.0 || jx > (w - 1) as f64 || jy < 0.0 || jy > (h - 1) as f64);
        let label = if out_of_frame {
            GestureClass::Untracked
        } else {
            match scripted_class {
                // A visible hand heading out of frame is out-of-vocabulary
                // motion, not yet untracked.
                Some(GestureClass::Untracked) => GestureClass::Unknown,
                Some(class) => class,
                None => GestureClass::Rest,
            }
        };
        let bbox = if label == GestureClass::Untracked {
            None
        } else {
            bbox_from_joints(&frame_joints, w, h, frame_joints[0].1)
        };

        frames.push(render_frame(
            scene,
            &world_joints,
            motion.hand_scale_px,
            offset,
            yaw,
            !out_of_frame,
        ));
        annotations.push(FrameAnnotation {
            t_ns,
            label,
            joints: frame_joints,
            bbox,
        });
    }

    Ok((FrameSequence::new(timestamps_ns, frames)?, annotations))
}

/// Rotate frames and joints by `angle_deg` about the image center with
/// bilinear resampling. Labels carry over; boxes are re-derived from the
/// rotated joints.
pub fn rotate_frames_by(
    frames: &FrameSequence,
    annotations: &[FrameAnnotation],
    angle_deg: f64,
) -> Result<(FrameSequence, Vec<FrameAnnotation>), SynthError> {
    let w = frames.width();
    let h = frames.height();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin_a, cos_a) = angle_deg.to_radians().sin_cos();

    let rotated: Vec<Image> = frames
        .frames()
        .iter()
        .map(|frame| {
            Image::from_fn(w, h, |px, py| {
                // Inverse-rotate the output pixel into the source frame.
                let dx = px as f64 - cx;
                let dy = py as f64 - cy;
                let sx = (cos_a * dx + sin_a * dy + cx).clamp(0.0, (w - 1) as f64);
                let sy = (-sin_a * dx + cos_a * dy + cy).clamp(0.0, (h - 1) as f64);
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let tx = (sx - x0 as f64) as f32;
                let ty = (sy - y0 as f64) as f32;
                let top = frame.get(x0, y0) * (1.0 - tx) + frame.get(x1, y0) * tx;
                let bottom = frame.get(x0, y1) * (1.0 - tx) + frame.get(x1, y1) * tx;
                top * (1.0 - ty) + bottom * ty
            })
        })
        .collect();

    let out_annotations = annotations
        .iter()
        .map(|ann| {
            let joints: Vec<(f64, f64)> = ann
                .joints
                .iter()
                .map(|&(jx, jy)| {
                    let dx = jx - cx;
                    let dy = jy - cy;
                    (cos_a * dx - sin_a * dy + cx, sin_a * dx + cos_a * dy + cy)
                })
                .collect();
            let bbox = if ann.label == GestureClass::Untracked || joints.is_empty() {
                None
            } else {
                bbox_from_joints(&joints, w, h, joints[0].1)
            };
            FrameAnnotation {
                t_ns: ann.t_ns,
                label: ann.label,
                joints,
                bbox,
            }
        })
        .collect();

    Ok((
        FrameSequence::new(frames.timestamps_ns().to_vec(), rotated)?,
        out_annotations,
    ))
}

/// Rotation augmentation: magnitude uniform in [25, 40] degrees, sign
/// uniform. Returns the drawn angle alongside the rotated copy.
pub fn rotate_sequence(
    frames: &FrameSequence,
    annotations: &[FrameAnnotation],
    seed: u64,
) -> Result<(FrameSequence, Vec<FrameAnnotation>, f64), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let magnitude = rng.gen_range(25.0..=40.0);
    let angle = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
    let (frames, annotations) = rotate_frames_by(frames, annotations, angle)?;
    Ok((frames, annotations, angle))
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    t_ns: u64,
    class: GestureClass,
    joints: Vec<(f64, f64)>,
    bbox: Option<(f64, f64, f64)>,
}

/// One JSON object per frame: `{t_ns, class, joints, bbox}`.
pub fn write_labels_jsonl<P: AsRef<Path>>(
    path: P,
    annotations: &[FrameAnnotation],
) -> Result<(), SynthError> {
    let mut out = BufWriter::new(File::create(path)?);
    for ann in annotations {
        let record = LabelRecord {
            t_ns: ann.t_ns,
            class: ann.label,
            joints: ann.joints.clone(),
            bbox: ann.bbox.map(|b| (b.x_min, b.y_min, b.side)),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| SynthError::BadLabelRecord(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_labels_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<FrameAnnotation>, SynthError> {
    let reader = BufReader::new(File::open(path)?);
    let mut annotations = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabelRecord =
            serde_json::from_str(&line).map_err(|e| SynthError::BadLabelRecord(e.to_string()))?;
        annotations.push(FrameAnnotation {
            t_ns: record.t_ns,
            label: record.class,
            joints: record.joints,
            bbox: record.bbox.map(|(x_min, y_min, side)| BBox {
                x_min,
                y_min,
                side,
            }),
        });
    }
    Ok(annotations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_events, SimConfig};
    use crate::synth::script::{sample_script, MarkovChain, ScriptConfig, ScriptEntry};

    fn scene() -> SceneConfig {
        SceneConfig::procedural(64, 64, 1.0, 11, 12)
    }

    fn script_with(entries: Vec<ScriptEntry>) -> GestureScript {
        GestureScript::new(entries, 2_000_000_000).unwrap()
    }

    #[test]
    fn static_rest_scene_renders_identical_frames_and_no_events() {
        let script = script_with(vec![]);
        let (frames, annotations) =
            synthesize_sequence(&script, &scene(), &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        assert_eq!(frames.len(), 180);
        let first = frames.frames()[0].as_slice();
        for frame in frames.frames() {
            assert_eq!(frame.as_slice(), first);
        }
        assert!(annotations.iter().all(|a| a.label == GestureClass::Rest));
        let stream = generate_events(&frames, &SimConfig::default(), 0).unwrap();
        assert!(stream.events().is_empty());
    }

    #[test]
    fn frame_count_and_final_timestamp() {
        let script = script_with(vec![]);
        let (frames, _) =
            synthesize_sequence(&script, &scene(), &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        assert_eq!(frames.len(), 180);
        assert_eq!(*frames.timestamps_ns().last().unwrap(), 2_000_000_000);
    }

    #[test]
    fn swipe_entry_labels_exactly_its_span() {
        let entry = ScriptEntry {
            class: GestureClass::SwipeRight,
            start_ns: 500_000_000,
            duration_ns: 300_000_000,
            profile_m: 8.0,
        };
        let script = script_with(vec![entry]);
        let (_, annotations) =
            synthesize_sequence(&script, &scene(), &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        for ann in &annotations {
            let in_span = ann.t_ns >= entry.start_ns && ann.t_ns < entry.start_ns + entry.duration_ns;
            let expected = if in_span {
                GestureClass::SwipeRight
            } else {
                GestureClass::Rest
            };
            assert_eq!(ann.label, expected, "t={}", ann.t_ns);
        }
    }

    #[test]
    fn untracked_entry_exits_frame_and_drops_bbox() {
        let script = script_with(vec![ScriptEntry {
            class: GestureClass::Untracked,
            start_ns: 400_000_000,
            duration_ns: 600_000_000,
            profile_m: 6.0,
        }]);
        let (_, annotations) =
            synthesize_sequence(&script, &scene(), &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        let untracked = annotations
            .iter()
            .filter(|a| a.label == GestureClass::Untracked)
            .count();
        assert!(untracked > 0, "hand never left the frame");
        for ann in &annotations {
            assert_eq!(ann.bbox.is_none(), ann.label == GestureClass::Untracked);
        }
    }

    #[test]
    fn moving_gesture_produces_events() {
        let script = script_with(vec![ScriptEntry {
            class: GestureClass::SwipeLeft,
            start_ns: 200_000_000,
            duration_ns: 300_000_000,
            profile_m: 8.0,
        }]);
        let (frames, _) =
            synthesize_sequence(&script, &scene(), &MotionConfig::default(), 50_000_000, 3)
                .unwrap();
        let stream = generate_events(&frames, &SimConfig::default(), 0).unwrap();
        assert!(stream.len() > 500, "only {} events", stream.len());
    }

    #[test]
    fn inter_frame_joint_velocity_is_bounded() {
        let chain = MarkovChain::desk_default();
        let config = ScriptConfig::default();
        for seed in 0..5 {
            let script = sample_script(&chain, &config, seed).unwrap();
            let (_, annotations) =
                synthesize_sequence(&script, &scene(), &MotionConfig::default(), config.blend_ns, seed)
                    .unwrap();
            for pair in annotations.windows(2) {
                for (a, b) in pair[0].joints.iter().zip(&pair[1].joints) {
                    let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                    assert!(d < 20.0, "seed {seed}: joint jumped {d} px");
                }
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_in_seed() {
        let chain = MarkovChain::desk_default();
        let config = ScriptConfig::default();
        let script = sample_script(&chain, &config, 5).unwrap();
        let run = |seed| {
            synthesize_sequence(&script, &scene(), &MotionConfig::default(), config.blend_ns, seed)
                .unwrap()
        };
        let (fa, aa) = run(9);
        let (fb, ab) = run(9);
        assert_eq!(aa, ab);
        for (x, y) in fa.frames().iter().zip(fb.frames()) {
            assert_eq!(x.as_slice(), y.as_slice());
        }
        let (_, ac) = run(10);
        assert_ne!(aa, ac);
    }

    #[test]
    fn brightness_factor_scales_intensities() {
        let script = script_with(vec![]);
        let mut bright = scene();
        bright.brightness_factor = 2.0;
        let (dim_frames, _) =
            synthesize_sequence(&script, &scene(), &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        let (bright_frames, _) =
            synthesize_sequence(&script, &bright, &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        for (a, b) in dim_frames.frames()[0]
            .as_slice()
            .iter()
            .zip(bright_frames.frames()[0].as_slice())
        {
            assert!((b - 2.0 * a).abs() < 1e-6);
        }
    }

    #[test]
    fn rotated_joints_match_rotation_matrix_oracle() {
        let script = script_with(vec![]);
        let (frames, annotations) =
            synthesize_sequence(&script, &scene(), &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        let angle: f64 = 30.0;
        let (_, rotated) = rotate_frames_by(&frames, &annotations, angle).unwrap();
        let (sin_a, cos_a) = angle.to_radians().sin_cos();
        let c = 31.5;
        for (orig, rot) in annotations.iter().zip(&rotated) {
            for (p, q) in orig.joints.iter().zip(&rot.joints) {
                let expected = (
                    cos_a * (p.0 - c) - sin_a * (p.1 - c) + c,
                    sin_a * (p.0 - c) + cos_a * (p.1 - c) + c,
                );
                assert!((expected.0 - q.0).abs() < 1e-9);
                assert!((expected.1 - q.1).abs() < 1e-9);
            }
            assert_eq!(orig.label, rot.label);
        }
    }

    #[test]
    fn full_turn_rotation_approximates_identity() {
        let script = script_with(vec![]);
        let (frames, annotations) =
            synthesize_sequence(&script, &scene(), &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        let (rotated, _) = rotate_frames_by(&frames, &annotations, 360.0).unwrap();
        let diff = rotated.frames()[0].mean_abs_diff(&frames.frames()[0]);
        assert!(diff < 1e-3, "mean abs diff {diff}");
    }

    #[test]
    fn augmentation_angles_stay_in_band() {
        let script = script_with(vec![]);
        let (frames, annotations) =
            synthesize_sequence(&script, &scene(), &MotionConfig::static_scene(), 50_000_000, 3)
                .unwrap();
        for seed in 0..200 {
            let (_, _, angle) = rotate_sequence(&frames, &annotations, seed).unwrap();
            assert!((25.0..=40.0).contains(&angle.abs()), "angle {angle}");
        }
    }

    #[test]
    fn labels_jsonl_round_trip() {
        let script = script_with(vec![ScriptEntry {
            class: GestureClass::Pinch,
            start_ns: 300_000_000,
            duration_ns: 200_000_000,
            profile_m: 4.0,
        }]);
        let (_, annotations) =
            synthesize_sequence(&script, &scene(), &MotionConfig::default(), 50_000_000, 3)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        write_labels_jsonl(&path, &annotations).unwrap();
        let back = read_labels_jsonl(&path).unwrap();
        assert_eq!(back, annotations);
    }
}
