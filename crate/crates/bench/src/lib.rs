//! Shared fixtures for the criterion benchmarks: a deterministic model,
//! its int8 counterpart, and realistic inputs, built once per process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evgest_core::model::net::ModelConfig;
use evgest_core::model::{Parameters, Tensor};
use evgest_core::quant::{calibrate, prepare_quantized, QuantState, QuantizedParameters};
use evgest_core::{Event, EventStream, Polarity};

/// A surface-like input: sparse exponentially-distributed activations in
/// both polarity planes, the shape real encoded windows produce.
pub fn surface_input(config: &ModelConfig, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = config.input_channels * config.input_size * config.input_size;
    let data = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < 0.15 {
                (-5.0 * rng.gen::<f64>()).exp() as f32
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(
        &[config.input_channels, config.input_size, config.input_size],
        data,
    )
}

/// Model pair for the inference comparison: float parameters and their
/// calibrated int8 export.
pub fn model_pair(seed: u64) -> (ModelConfig, Parameters, QuantizedParameters) {
    let config = ModelConfig::default();
    let params = Parameters::init(&config, seed).expect("default config is valid");
    let mut state = QuantState::new(&config);
    let inputs: Vec<Tensor<f32>> = (0..16).map(|i| surface_input(&config, 100 + i)).collect();
    calibrate(&config, &params, &mut state, &inputs).expect("calibration");
    let quantized = prepare_quantized(&config, &params, &state).expect("quantization");
    (config, params, quantized)
}

/// A dense 2 s event stream on a 64x64 sensor for encoding benchmarks.
pub fn synthetic_stream(events_total: usize, seed: u64) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration_ns = 2_000_000_000u64;
    let mut events: Vec<Event> = (0..events_total)
        .map(|_| Event {
            x: rng.gen_range(0..64),
            y: rng.gen_range(0..64),
            polarity: if rng.gen_bool(0.5) {
                Polarity::Positive
            } else {
                Polarity::Negative
            },
            t_ns: rng.gen_range(0..=duration_ns),
        })
        .collect();
    events.sort_by_key(|e| e.t_ns);
    EventStream::new(64, 64, duration_ns, events).expect("events in bounds")
}
