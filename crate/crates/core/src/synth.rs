//! Procedural generation of labeled multi-gesture sequences.
//!
//! A Markov chain rooted at rest samples a gesture schedule, sigmoid motion
//! profiles drive an articulated 2D hand proxy, and a capsule rasterizer
//! renders it over a textured background with camera ego-motion. The output
//! is a frame sequence plus per-frame class labels, joints, and boxes.

mod hand;
mod scene;
mod script;

pub use hand::{
    bbox_from_joints, blend_poses, hand_joints, rest_pose, BBox, HandPose, JOINT_COUNT,
};
pub use scene::{
    read_labels_jsonl, rotate_frames_by, rotate_sequence, synthesize_sequence, write_labels_jsonl,
    FrameAnnotation, MotionConfig, SceneConfig,
};
pub use script::{
    sample_script, sigmoid_profile, GestureScript, MarkovChain, ScriptConfig, ScriptEntry,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid markov chain: {0}")]
    BadChain(String),
    #[error("invalid gesture script: {0}")]
    BadScript(String),
    #[error("invalid synthesis config: {0}")]
    BadConfig(String),
    #[error("hand poses have different joint counts ({a} vs {b})")]
    TopologyMismatch { a: usize, b: usize },
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error("label file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad label record: {0}")]
    BadLabelRecord(String),
}
