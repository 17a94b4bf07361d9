//! Core library for an event-camera microgesture pipeline.
//!
//! The pipeline runs end to end on synthetic data: procedural hand-gesture
//! sequences are rendered to intensity frames, converted to event streams,
//! encoded as polarity-separated time surfaces, and fed to a five-stage
//! detection model that can be trained in float, quantization-aware, and
//! pure-integer inference modes. An evaluation harness scores sliding-window
//! predictions against prompted-gesture trials.
//!
//! Modules map onto pipeline stages:
//!
//! * [`events`], [`window`], [`surface`], [`labels`] — event data model and
//!   time-surface encoding
//! * [`sim`] — frame-sequence to event-stream conversion
//! * [`synth`] — procedural gesture sequence synthesis
//! * [`model`] — the five-stage float model, training and fine-tuning
//! * [`quant`] — int8 quantization-aware training and integer inference
//! * [`eval`] — sliding-window inference, trial scoring, latency stats

pub mod events;
pub mod image;
pub mod labels;
pub mod surface;
pub mod window;

pub mod sim;
pub mod synth;

pub mod model;
pub mod quant;

pub mod eval;

pub use events::{Event, EventStream, Polarity};
pub use image::Image;
pub use labels::GestureClass;
pub use surface::TimeSurface;
pub use window::{Window, WindowConfig};
