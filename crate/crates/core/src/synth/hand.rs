//! Articulated 2D hand proxy: pose space, forward kinematics, keyposes,
//! and bounding-box derivation.

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::labels::GestureClass;

/// Wrist + 3 index joints + 2 thumb joints.
pub const JOINT_COUNT: usize = 6;
/// Index chain (3 relative angles) then thumb chain (2 relative angles).
pub const ANGLE_COUNT: usize = 5;

const INDEX_LENGTHS: [f64; 3] = [1.0, 0.7, 0.5];
const THUMB_LENGTHS: [f64; 2] = [0.8, 0.6];
const ANGLE_LIMITS: [(f64, f64); ANGLE_COUNT] = [
    (-0.6, 1.2),
    (-0.3, 1.4),
    (-0.3, 1.5),
    (-1.8, 0.6),
    (-1.2, 0.9),
];

/// Pose of the proxy: root in scene units, per-segment relative angles in
/// radians, uniform scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub root: (f64, f64),
    pub scale: f64,
    pub angles: Vec<f64>,
}

impl HandPose {
    pub fn clamp_to_limits(&mut self) {
        for (angle, &(lo, hi)) in self.angles.iter_mut().zip(&ANGLE_LIMITS) {
            *angle = angle.clamp(lo, hi);
        }
    }
}

/// Linear interpolation in angle space; root and scale interpolate too.
pub fn blend_poses(a: &HandPose, b: &HandPose, alpha: f64) -> Result<HandPose, SynthError> {
    if a.angles.len() != b.angles.len() {
        return Err(SynthError::TopologyMismatch {
            a: a.angles.len(),
            b: b.angles.len(),
        });
    }
    let lerp = |x: f64, y: f64| (1.0 - alpha) * x + alpha * y;
    Ok(HandPose {
        root: (lerp(a.root.0, b.root.0), lerp(a.root.1, b.root.1)),
        scale: lerp(a.scale, b.scale),
        angles: a
            .angles
            .iter()
            .zip(&b.angles)
            .map(|(&x, &y)| lerp(x, y))
            .collect(),
    })
}

/// Forward kinematics: joint positions in scene units, wrist first, then
/// the index chain tip-ward, then the thumb chain.
///
/// Angle zero points straight up (negative y); positive angles rotate
/// toward positive x. Chain angles are relative to the parent segment.
pub fn hand_joints(pose: &HandPose) -> Vec<(f64, f64)> {
    let mut joints = Vec::with_capacity(JOINT_COUNT);
    joints.push(pose.root);

    let mut position = pose.root;
    let mut heading = -std::f64::consts::FRAC_PI_2;
    for (i, &len) in INDEX_LENGTHS.iter().enumerate() {
        heading += pose.angles[i];
        position = (
            position.0 + len * pose.scale * heading.cos(),
            position.1 + len * pose.scale * heading.sin(),
        );
        joints.push(position);
    }

    let mut position = pose.root;
    let mut heading = -std::f64::consts::FRAC_PI_2;
    for (i, &len) in THUMB_LENGTHS.iter().enumerate() {
        heading += pose.angles[3 + i];
        position = (
            position.0 + len * pose.scale * heading.cos(),
            position.1 + len * pose.scale * heading.sin(),
        );
        joints.push(position);
    }
    joints
}

pub fn rest_pose(root: (f64, f64), scale: f64) -> HandPose {
    HandPose {
        root,
        scale,
        angles: vec![0.15, 0.25, 0.25, -0.90, -0.35],
    }
}

/// Keypose at full activation of a gesture; returns share their base
/// gesture's peak so motion is continuous across the pair.
pub fn peak_pose(class: GestureClass, rest: &HandPose) -> HandPose {
    let (dx, dy, angles) = match class {
        GestureClass::Pinch | GestureClass::DoublePinch | GestureClass::PinchReturn => {
            (0.0, 0.0, vec![0.55, 0.85, 0.95, -0.30, 0.30])
        }
        GestureClass::SwipeLeft | GestureClass::SwipeLeftReturn => {
            (-9.0, 0.0, vec![0.18, 0.28, 0.28, -1.30, -0.60])
        }
        GestureClass::SwipeRight | GestureClass::SwipeRightReturn => {
            (9.0, 0.0, vec![0.18, 0.28, 0.28, -0.45, -0.05])
        }
        GestureClass::Unknown => (0.0, -7.0, vec![0.00, 0.05, 0.05, -1.05, -0.50]),
        GestureClass::Untracked => (-55.0, 0.0, rest.angles.clone()),
        GestureClass::Rest => (0.0, 0.0, rest.angles.clone()),
    };
    let mut pose = HandPose {
        root: (rest.root.0 + dx, rest.root.1 + dy),
        scale: rest.scale,
        angles,
    };
    pose.clamp_to_limits();
    pose
}

/// Activation along a gesture as a function of motion progress.
///
/// Plain gestures ramp to their peak and stay there for the paired return
/// to undo; the double pinch pulses closed-open-closed; unknown and
/// untracked motions are self-returning arcs.
pub fn activation_shape(class: GestureClass, progress: f64) -> f64 {
    match class {
        GestureClass::Pinch | GestureClass::SwipeLeft | GestureClass::SwipeRight => progress,
        GestureClass::DoublePinch => {
            if progress < 1.0 / 3.0 {
                3.0 * progress
            } else if progress < 2.0 / 3.0 {
                2.0 - 3.0 * progress
            } else {
                3.0 * progress - 2.0
            }
        }
        GestureClass::PinchReturn
        | GestureClass::SwipeLeftReturn
        | GestureClass::SwipeRightReturn => 1.0 - progress,
        GestureClass::Unknown | GestureClass::Untracked => {
            (std::f64::consts::PI * progress).sin()
        }
        GestureClass::Rest => 0.0,
    }
}

/// Pose for a gesture class at the given motion progress.
pub fn pose_at(class: GestureClass, progress: f64, rest: &HandPose) -> HandPose {
    let activation = activation_shape(class, progress);
    blend_poses(rest, &peak_pose(class, rest), activation).expect("keyposes share topology")
}

/// Square bounding box in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub side: f64,
}

impl BBox {
    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x_min + self.side / 2.0, self.y_min + self.side / 2.0)
    }

    /// (cx, cy, side) scaled into [0,1] using `dim - 1` denominators — the
    /// same grid convention the crop sampler uses, so a normalized target of
    /// (0.5, 0.5, 1.0) means exactly "full frame".
    pub fn normalized(&self, width: usize, height: usize) -> (f64, f64, f64) {
        let (cx, cy) = self.center();
        (
            cx / (width - 1) as f64,
            cy / (height - 1) as f64,
            self.side / (width.min(height) - 1) as f64,
        )
    }
}

/// Square hand box from projected joints.
///
/// Joints are clipped into bounds, joints below the wrist row dropped, the
/// min-max box squared by expanding the shorter dimension about its center,
/// and the square translated (never shrunk) back inside the image. `None`
/// when no joints survive the wrist cut.
pub fn bbox_from_joints(
    joints: &[(f64, f64)],
    width: usize,
    height: usize,
    wrist_y: f64,
) -> Option<BBox> {
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    let wrist_row = wrist_y.clamp(0.0, max_y);

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut kept = 0usize;
    for &(jx, jy) in joints {
        let cx = jx.clamp(0.0, max_x);
        let cy = jy.clamp(0.0, max_y);
        if cy > wrist_row {
            continue;
        }
        kept += 1;
        x_min = x_min.min(cx);
        x_max = x_max.max(cx);
        y_min = y_min.min(cy);
        y_max = y_max.max(cy);
    }
    if kept == 0 {
        return None;
    }

    let side = (x_max - x_min)
        .max(y_max - y_min)
        .max(1.0)
        .min(max_x)
        .min(max_y);
    let cx = (x_min + x_max) / 2.0;
    let cy = (y_min + y_max) / 2.0;
    let mut bx = cx - side / 2.0;
    let mut by = cy - side / 2.0;
    bx = bx.clamp(0.0, max_x - side);
    by = by.clamp(0.0, max_y - side);
    Some(BBox {
        x_min: bx,
        y_min: by,
        side,
    })
}
