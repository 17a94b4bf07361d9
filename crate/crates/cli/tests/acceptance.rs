//! Acceptance harness: ten go/no-go checks over the full pipeline, run
//! sequentially with one verdict line each (plus a summary block at the
//! end). Custom harness so the heavyweight end-to-end fixture is built
//! exactly once and shared by the criteria that need it.
//!
//!     cargo test -p evgest-cli --test acceptance

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evgest_core::events::{Event, EventStream, Polarity};
use evgest_core::labels::{aggregate_window_label, GestureClass};
use evgest_core::model::check::{max_rel_err, numeric_grad};
use evgest_core::model::layers::{
    avgpool2_backward, avgpool2_forward, conv2d_backward, conv2d_forward, crop_resize_backward,
    crop_resize_forward, dense_backward, dense_forward, relu_backward, relu_forward,
};
use evgest_core::model::loss::{bce_with_logits, cross_entropy_from_logits, mse};
use evgest_core::model::train::STAGE123_PREFIXES;
use evgest_core::model::{
    forward, read_container, ForwardCtx, ModelConfig, Parameters, Tensor, TensorRecord,
};
use evgest_core::quant::{
    calibrate, dequantize, integer_forward, prepare_quantized, quantize_tensor, quantize_weights,
    FakeQuantSession, QuantState,
};
use evgest_core::sim::{generate_events, FrameSequence, SimConfig};
use evgest_core::surface::build_time_surface;
use evgest_core::synth::{sample_script, MarkovChain, ScriptConfig};
use evgest_core::window::WindowConfig;
use evgest_core::Image;

use evgest_cli::artifacts::{hash_tree, read_json, Layout};
use evgest_cli::config::PipelineConfig;
use evgest_cli::run::{
    run_bench, run_encode, run_evaluate, run_finetune, run_qat, run_simulate, run_train,
    BenchReport, EvalReport,
};

type Outcome = Result<String, String>;

struct Verdict {
    criterion: u32,
    title: &'static str,
    outcome: Outcome,
    elapsed_s: f64,
    budget_s: Option<f64>,
}

impl Verdict {
    fn passed(&self) -> bool {
        self.outcome.is_ok()
    }

    fn line(&self) -> String {
        let timing = match self.budget_s {
            Some(b) => format!("{:.1}s; budget {:.0}s", self.elapsed_s, b),
            None => format!("{:.1}s", self.elapsed_s),
        };
        match &self.outcome {
            Ok(detail) => format!(
                "[PASS] criterion {}: {} - {} ({})",
                self.criterion, self.title, detail, timing
            ),
            Err(reason) => format!(
                "[FAIL] criterion {}: {} - {} ({})",
                self.criterion, self.title, reason, timing
            ),
        }
    }
}

fn run_criterion(
    criterion: u32,
    title: &'static str,
    budget_s: Option<f64>,
    f: impl FnOnce() -> Outcome,
) -> Verdict {
    let start = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => Err(panic_text(&payload)),
    };
    let elapsed_s = start.elapsed().as_secs_f64();
    let outcome = match (outcome, budget_s) {
        (Ok(d), Some(b)) if elapsed_s > b => {
            Err(format!("passed checks but exceeded budget ({d})"))
        }
        (o, _) => o,
    };
    let v = Verdict {
        criterion,
        title,
        outcome,
        elapsed_s,
        budget_s,
    };
    println!("{}", v.line());
    v
}

fn panic_text(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".into()
    }
}

fn fail(msg: impl Into<String>) -> Outcome {
    Err(msg.into())
}

fn main() {
    let start = Instant::now();
    let mut verdicts = Vec::new();

    verdicts.push(run_criterion(
        1,
        "time-surface construction matches a brute-force oracle",
        Some(10.0),
        check_time_surface_oracle,
    ));
    verdicts.push(run_criterion(
        2,
        "event generator matches a dense-time oracle on ramps",
        Some(30.0),
        check_event_generator_oracle,
    ));
    verdicts.push(run_criterion(
        3,
        "sampled scripts honor the chain statistics and caps",
        Some(30.0),
        check_markov_script_statistics,
    ));
    verdicts.push(run_criterion(
        4,
        "analytic gradients match numeric gradients for every op",
        Some(120.0),
        check_gradients,
    ));
    verdicts.push(run_criterion(
        5,
        "quantization contracts and integer/fake-quant agreement",
        Some(120.0),
        check_quantization_contracts,
    ));
    verdicts.push(run_criterion(
        6,
        "window label aggregation: worked examples and properties",
        Some(5.0),
        check_label_aggregation,
    ));

    // Criteria 7, 8, and 10 share one end-to-end run at the desk scale.
    let fixture_start = Instant::now();
    let fixture = catch_unwind(build_desk_fixture);
    let fixture_s = fixture_start.elapsed().as_secs_f64();
    match fixture {
        Ok(Ok(fx)) => {
            verdicts.push(run_criterion(
                7,
                "desk-scale train + QAT reaches the accuracy bars",
                Some(1800.0 - fixture_s),
                || check_desk_accuracy(&fx),
            ));
            // Fold the shared fixture time into criterion 7's verdict: its
            // budget is the whole end-to-end run.
            if let Some(v) = verdicts.last_mut() {
                v.elapsed_s += fixture_s;
                v.budget_s = Some(1800.0);
                if v.outcome.is_ok() && v.elapsed_s > 1800.0 {
                    v.outcome = Err("accuracy bars met but run exceeded 30 minutes".into());
                }
            }
            verdicts.push(run_criterion(
                8,
                "fine-tune freezes stages 1-3 and lifts rotated F1",
                None,
                || check_finetune_contract(&fx),
            ));
            verdicts.push(run_criterion(
                9,
                "same-seed re-runs produce byte-identical artifacts",
                None,
                check_determinism,
            ));
            verdicts.push(run_criterion(
                10,
                "integer inference is faster than float",
                None,
                || check_latency(&fx),
            ));
        }
        other => {
            let reason = match other {
                Ok(Err(e)) => format!("end-to-end fixture failed: {e}"),
                Err(payload) => format!("end-to-end fixture {}", panic_text(&payload)),
                Ok(Ok(_)) => unreachable!(),
            };
            for (criterion, title) in [
                (7u32, "desk-scale train + QAT reaches the accuracy bars"),
                (8, "fine-tune freezes stages 1-3 and lifts rotated F1"),
                (10, "integer inference is faster than float"),
            ] {
                let v = Verdict {
                    criterion,
                    title,
                    outcome: Err(reason.clone()),
                    elapsed_s: fixture_s,
                    budget_s: None,
                };
                println!("{}", v.line());
                verdicts.push(v);
            }
            verdicts.push(run_criterion(
                9,
                "same-seed re-runs produce byte-identical artifacts",
                None,
                check_determinism,
            ));
        }
    }

    verdicts.sort_by_key(|v| v.criterion);
    let failed = verdicts.iter().filter(|v| !v.passed()).count();
    println!();
    println!("acceptance summary ({:.0}s total):", start.elapsed().as_secs_f64());
    for v in &verdicts {
        println!("{}", v.line());
    }
    if failed > 0 {
        println!("{failed} of {} criteria FAILED", verdicts.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", verdicts.len());
}

// ---------------------------------------------------------------------------
// Criterion 1: time surfaces against an independent brute-force oracle.

fn check_time_surface_oracle() -> Outcome {
    let config = WindowConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC01);
    for case in 0..100 {
        let w = rng.gen_range(4..=16u16);
        let h = rng.gen_range(4..=16u16);
        let duration = rng.gen_range(300_000_000..=900_000_000u64);
        let count = rng.gen_range(0..2000);
        let events: Vec<Event> = (0..count)
            .map(|_| Event {
                x: rng.gen_range(0..w),
                y: rng.gen_range(0..h),
                polarity: if rng.gen_bool(0.5) {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
                t_ns: rng.gen_range(0..=duration),
            })
            .collect();
        let stream = EventStream::from_unsorted(w, h, duration, events)
            .map_err(|e| format!("case {case}: {e}"))?;
        let end = rng.gen_range(config.window_ns..=duration);
        let got = build_time_surface(&stream, end, &config)
            .map_err(|e| format!("case {case}: {e}"))?;

        // Oracle: for every pixel and polarity, scan all events for the
        // newest one inside (end - window, end] and decay it directly.
        for x in 0..w {
            for y in 0..h {
                for polarity in [Polarity::Positive, Polarity::Negative] {
                    let newest = stream
                        .events()
                        .iter()
                        .filter(|e| {
                            e.x == x
                                && e.y == y
                                && e.polarity == polarity
                                && e.t_ns <= end
                                && end - e.t_ns < config.window_ns
                        })
                        .map(|e| e.t_ns)
                        .max();
                    let expected = match newest {
                        Some(t) => {
                            let age = (end - t) as f64;
                            (-config.decay * age / config.window_ns as f64).exp() as f32
                        }
                        None => 0.0,
                    };
                    let actual = got.value(x as usize, y as usize, polarity);
                    if actual.to_bits() != expected.to_bits() {
                        return fail(format!(
                            "case {case}: ({x},{y},{polarity:?}) expected {expected}, got {actual}"
                        ));
                    }
                }
            }
        }
    }
    Ok("100 random streams bit-exact against the per-pixel scan".into())
}

// ---------------------------------------------------------------------------
// Criterion 2: event generator against a dense-time stepping oracle.

/// March the piecewise-linear log signal at 1 us, stepping a running
/// reference level on every threshold crossing.
fn dense_event_oracle(
    frames: &FrameSequence,
    config: &SimConfig,
) -> Vec<(usize, Polarity, u64)> {
    let n_px = frames.width() * frames.height();
    let logs: Vec<Vec<f64>> = frames
        .frames()
        .iter()
        .map(|f| {
            f.as_slice()
                .iter()
                .map(|&v| (v as f64 + config.log_eps).ln())
                .collect()
        })
        .collect();
    let ts = frames.timestamps_ns();
    let mut out = Vec::new();
    for px in 0..n_px {
        let mut l_ref = logs[0][px];
        for seg in 1..frames.len() {
            let (t_a, t_b) = (ts[seg - 1], ts[seg]);
            let (l_a, l_b) = (logs[seg - 1][px], logs[seg][px]);
            let dt = (t_b - t_a) as f64;
            let mut t = t_a + 1000;
            while t <= t_b {
                let alpha = (t - t_a) as f64 / dt;
                let l = l_a + (l_b - l_a) * alpha;
                while l - l_ref >= config.contrast_threshold_pos {
                    l_ref += config.contrast_threshold_pos;
                    out.push((px, Polarity::Positive, t));
                }
                while l_ref - l >= config.contrast_threshold_neg {
                    l_ref -= config.contrast_threshold_neg;
                    out.push((px, Polarity::Negative, t));
                }
                t += 1000;
            }
        }
    }
    out
}

fn check_event_generator_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC02);
    let config = SimConfig::default();

    // Dense-time oracle over random multi-segment ramps with per-pixel
    // level offsets.
    for case in 0..30 {
        let (w, h) = (2usize, 2usize);
        let segments = rng.gen_range(3..=6);
        let mut levels = vec![rng.gen_range(0.1..0.8f64)];
        for _ in 0..segments {
            let step = rng.gen_range(0.15..0.75) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let next = (levels.last().unwrap() + step).clamp(0.05, 2.0);
            levels.push(next);
        }
        let offsets: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..0.3)).collect();
        let timestamps: Vec<u64> = (0..levels.len() as u64).map(|i| i * 2_000_000).collect();
        let frames: Vec<Image> = levels
            .iter()
            .map(|&l| {
                Image::from_fn(w, h, |x, y| {
                    ((l + offsets[y * w + x]).exp() - config.log_eps) as f32
                })
            })
            .collect();
        let frames = FrameSequence::new(timestamps, frames).map_err(|e| e.to_string())?;
        let stream = generate_events(&frames, &config, 0).map_err(|e| e.to_string())?;

        let oracle = dense_event_oracle(&frames, &config);
        for px in 0..w * h {
            for polarity in [Polarity::Positive, Polarity::Negative] {
                let got: Vec<u64> = stream
                    .events()
                    .iter()
                    .filter(|e| {
                        e.y as usize * w + e.x as usize == px && e.polarity == polarity
                    })
                    .map(|e| e.t_ns)
                    .collect();
                let want: Vec<u64> = oracle
                    .iter()
                    .filter(|(p, pol, _)| *p == px && *pol == polarity)
                    .map(|&(_, _, t)| t)
                    .collect();
                if got.len() != want.len() {
                    return fail(format!(
                        "case {case}: pixel {px} {polarity:?}: {} events vs oracle {}",
                        got.len(),
                        want.len()
                    ));
                }
                for (i, (g, o)) in got.iter().zip(&want).enumerate() {
                    if g.abs_diff(*o) > 1000 {
                        return fail(format!(
                            "case {case}: pixel {px} {polarity:?} event {i}: {g} ns vs oracle {o} ns"
                        ));
                    }
                }
            }
        }
    }

    // Closed form on monotone single-segment ramps: the event count is
    // floor(|delta log| / threshold), recomputed from the stored f32
    // intensities. Levels are redrawn when the ratio sits on an integer
    // boundary.
    for case in 0..50 {
        let rising = case % 2 == 0;
        let (l0, l1) = loop {
            let a = rng.gen_range(0.1..1.0f64);
            let delta = rng.gen_range(0.25..2.5f64);
            let b = if rising { a + delta } else { (a - delta).max(0.02) };
            let i0 = (a.exp() - config.log_eps) as f32;
            let i1 = (b.exp() - config.log_eps) as f32;
            let la = (i0 as f64 + config.log_eps).ln();
            let lb = (i1 as f64 + config.log_eps).ln();
            let span = (lb - la).abs();
            let ratio = span / config.contrast_threshold_pos;
            if (ratio - ratio.round()).abs() > 1e-6 && span > 1e-3 {
                break (la, lb);
            }
        };
        let frames = FrameSequence::new(
            vec![0, 2_000_000],
            vec![
                Image::from_fn(1, 1, |_, _| (l0.exp() - config.log_eps) as f32),
                Image::from_fn(1, 1, |_, _| (l1.exp() - config.log_eps) as f32),
            ],
        )
        .map_err(|e| e.to_string())?;
        let stream = generate_events(&frames, &config, 0).map_err(|e| e.to_string())?;
        let i0 = frames.frames()[0].get(0, 0);
        let i1 = frames.frames()[1].get(0, 0);
        let span = ((i1 as f64 + config.log_eps).ln() - (i0 as f64 + config.log_eps).ln()).abs();
        let threshold = if rising {
            config.contrast_threshold_pos
        } else {
            config.contrast_threshold_neg
        };
        let expected = (span / threshold).floor() as usize;
        if stream.len() != expected {
            return fail(format!(
                "case {case}: span {span:.4} expected {expected} events, got {}",
                stream.len()
            ));
        }
        let polarity = if rising {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        if !stream.events().iter().all(|e| e.polarity == polarity) {
            return fail(format!("case {case}: mixed polarities on a monotone ramp"));
        }
    }
    Ok("30 dense-oracle ramps within 1 us, 50 closed-form counts exact".into())
}

// ---------------------------------------------------------------------------
// Criterion 3: Markov script sampling statistics.

fn check_markov_script_statistics() -> Outcome {
    let chain = MarkovChain::desk_default();
    let config = ScriptConfig::default();
    // Stated independently of the chain's own normalization.
    let expected: [(GestureClass, f64); 6] = [
        (GestureClass::Pinch, 0.22),
        (GestureClass::DoublePinch, 0.16),
        (GestureClass::SwipeLeft, 0.21),
        (GestureClass::SwipeRight, 0.21),
        (GestureClass::Unknown, 0.10),
        (GestureClass::Untracked, 0.10),
    ];

    let mut initiations = [0usize; GestureClass::COUNT];
    let mut total_initiations = 0usize;
    let mut return_chances = 0usize;
    let mut returns_taken = 0usize;
    for seed in 0..10_000u64 {
        let script = sample_script(&chain, &config, seed).map_err(|e| e.to_string())?;
        script
            .validate_against(&chain, &config)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        if script.total_ns() != 2_000_000_000 {
            return fail(format!("seed {seed}: total {} ns", script.total_ns()));
        }
        if script.entries().len() > config.max_gestures {
            return fail(format!("seed {seed}: {} entries", script.entries().len()));
        }
        if let Some(first) = script.entries().first() {
            if first.class.is_return() {
                return fail(format!("seed {seed}: starts with return {}", first.class));
            }
            if first.start_ns < config.rest_dwell_min_ns {
                return fail(format!("seed {seed}: no initial rest dwell"));
            }
        }
        let entries = script.entries();
        for (i, entry) in entries.iter().enumerate() {
            let (lo, hi) = match entry.class {
                GestureClass::Untracked => (config.untracked_min_ns, config.untracked_max_ns),
                GestureClass::DoublePinch => (220_000_000, config.max_gesture_ns),
                _ => (config.min_gesture_ns, config.max_gesture_ns),
            };
            if entry.duration_ns < lo || entry.duration_ns > hi {
                return fail(format!(
                    "seed {seed}: {} duration {} ns outside [{lo}, {hi}]",
                    entry.class, entry.duration_ns
                ));
            }
            if !entry.class.is_return() {
                initiations[entry.class.index()] += 1;
                total_initiations += 1;
            }
            if let Some(ret) = entry.class.return_class() {
                return_chances += 1;
                if entries
                    .get(i + 1)
                    .is_some_and(|next| next.start_ns == entry.end_ns() && next.class == ret)
                {
                    returns_taken += 1;
                }
            }
        }
    }

    let l1: f64 = expected
        .iter()
        .map(|&(class, p)| {
            (initiations[class.index()] as f64 / total_initiations as f64 - p).abs()
        })
        .sum();
    if l1 >= 0.05 {
        return fail(format!("initiation distribution L1 {l1:.4} >= 0.05"));
    }
    let other: usize = initiations.iter().sum::<usize>()
        - expected
            .iter()
            .map(|&(c, _)| initiations[c.index()])
            .sum::<usize>();
    if other != 0 {
        return fail(format!("{other} initiations outside the chain vocabulary"));
    }
    let p_return = returns_taken as f64 / return_chances as f64;
    if (p_return - 0.7).abs() > 0.03 {
        return fail(format!("return branch rate {p_return:.3}, expected ~0.7"));
    }
    Ok(format!(
        "10k scripts valid; initiation L1 {l1:.4}, return rate {p_return:.3}"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 4: numeric gradient checks in f64.

const GRAD_TOL: f64 = 1e-3;
const GRAD_INSTANCES: usize = 24;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn project(out: &Tensor<f64>, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn check_one(op: &str, instance: usize, analytic: &[f64], numeric: &[f64]) -> Result<(), String> {
    let err = max_rel_err(analytic, numeric);
    if err < GRAD_TOL {
        Ok(())
    } else {
        Err(format!("{op} instance {instance}: max rel err {err:.2e}"))
    }
}

fn check_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC04);

    for i in 0..GRAD_INSTANCES {
        // conv2d: input, weight, and bias gradients.
        let (c_in, c_out) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, w) = (rng.gen_range(4..=7), rng.gen_range(4..=7));
        let stride = if i % 2 == 0 { 1 } else { 2 };
        let x = Tensor::from_vec(&[c_in, h, w], rand_vec(&mut rng, c_in * h * w));
        let wt = Tensor::from_vec(
            &[c_out, c_in, 3, 3],
            rand_vec(&mut rng, c_out * c_in * 9),
        );
        let b = Tensor::from_vec(&[c_out], rand_vec(&mut rng, c_out));
        let out = conv2d_forward(&x, &wt, &b, stride);
        let r = rand_vec(&mut rng, out.len());
        let grad_out = Tensor::from_vec(out.shape(), r.clone());
        let (gx, gw, gb) = conv2d_backward(&x, &wt, &grad_out, stride);
        let nx = numeric_grad(x.data(), |v| {
            project(
                &conv2d_forward(&Tensor::from_vec(x.shape(), v.to_vec()), &wt, &b, stride),
                &r,
            )
        });
        check_one("conv2d/input", i, gx.data(), &nx)?;
        let nw = numeric_grad(wt.data(), |v| {
            project(
                &conv2d_forward(&x, &Tensor::from_vec(wt.shape(), v.to_vec()), &b, stride),
                &r,
            )
        });
        check_one("conv2d/weight", i, gw.data(), &nw)?;
        let nb = numeric_grad(b.data(), |v| {
            project(
                &conv2d_forward(&x, &wt, &Tensor::from_vec(b.shape(), v.to_vec()), stride),
                &r,
            )
        });
        check_one("conv2d/bias", i, gb.data(), &nb)?;
    }

    for i in 0..GRAD_INSTANCES {
        // dense: input, weight, and bias gradients.
        let (inp, out_dim) = (rng.gen_range(3..=10), rng.gen_range(2..=8));
        let x = Tensor::from_vec(&[inp], rand_vec(&mut rng, inp));
        let wt = Tensor::from_vec(&[out_dim, inp], rand_vec(&mut rng, out_dim * inp));
        let b = Tensor::from_vec(&[out_dim], rand_vec(&mut rng, out_dim));
        let r = rand_vec(&mut rng, out_dim);
        let grad_out = Tensor::from_vec(&[out_dim], r.clone());
        let (gx, gw, gb) = dense_backward(&x, &wt, &grad_out);
        let nx = numeric_grad(x.data(), |v| {
            project(
                &dense_forward(&Tensor::from_vec(x.shape(), v.to_vec()), &wt, &b),
                &r,
            )
        });
        check_one("dense/input", i, gx.data(), &nx)?;
        let nw = numeric_grad(wt.data(), |v| {
            project(
                &dense_forward(&x, &Tensor::from_vec(wt.shape(), v.to_vec()), &b),
                &r,
            )
        });
        check_one("dense/weight", i, gw.data(), &nw)?;
        let nb = numeric_grad(b.data(), |v| {
            project(
                &dense_forward(&x, &wt, &Tensor::from_vec(b.shape(), v.to_vec())),
                &r,
            )
        });
        check_one("dense/bias", i, gb.data(), &nb)?;
    }

    for i in 0..GRAD_INSTANCES {
        // relu: inputs kept away from the kink at zero.
        let n = rng.gen_range(4..=32);
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let mag = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let xt = Tensor::from_vec(&[n], x);
        let r = rand_vec(&mut rng, n);
        let grad_out = Tensor::from_vec(&[n], r.clone());
        let g = relu_backward(&xt, &grad_out);
        let numeric = numeric_grad(xt.data(), |v| {
            project(&relu_forward(&Tensor::from_vec(&[n], v.to_vec())), &r)
        });
        check_one("relu", i, g.data(), &numeric)?;
    }

    for i in 0..GRAD_INSTANCES {
        // avgpool2 over even spatial dims.
        let c = rng.gen_range(1..=3);
        let (h, w) = (2 * rng.gen_range(2..=4usize), 2 * rng.gen_range(2..=4usize));
        let x = Tensor::from_vec(&[c, h, w], rand_vec(&mut rng, c * h * w));
        let out = avgpool2_forward(&x);
        let r = rand_vec(&mut rng, out.len());
        let grad_out = Tensor::from_vec(out.shape(), r.clone());
        let g = avgpool2_backward(&grad_out, x.shape());
        let numeric = numeric_grad(x.data(), |v| {
            project(&avgpool2_forward(&Tensor::from_vec(x.shape(), v.to_vec())), &r)
        });
        check_one("avgpool2", i, g.data(), &numeric)?;
    }

    for i in 0..GRAD_INSTANCES {
        // crop_resize: image and bbox gradients. Bboxes are redrawn until
        // every sample coordinate is at least 1e-3 away from the bilinear
        // integer kinks, the edge clamps, and the 2 px side floor.
        let c = rng.gen_range(1..=2);
        let (h, w) = (rng.gen_range(5..=9), rng.gen_range(5..=9));
        let res = rng.gen_range(3..=5usize);
        let bbox: [f64; 3] = loop {
            let candidate = [
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.25..0.9),
            ];
            let min_dim = (w.min(h) - 1) as f64;
            let span_raw = candidate[2] * min_dim;
            if (span_raw - 2.0).abs() < 1e-2 {
                continue;
            }
            let span = span_raw.max(2.0);
            // A sample deep outside the image clamps with zero gradient on
            // both sides of the finite-difference step, so only coordinates
            // near or inside the image need the kink margin.
            let cx = candidate[0] * (w - 1) as f64;
            let cy = candidate[1] * (h - 1) as f64;
            let clear = |center: f64, dim: usize| {
                (0..res).all(|j| {
                    let s = center - span / 2.0 + j as f64 * span / (res - 1) as f64;
                    let interior = (s - s.round()).abs() > 1e-3
                        && s > 1e-3
                        && s < (dim - 1) as f64 - 1e-3;
                    let far_outside = s < -0.05 || s > (dim - 1) as f64 + 0.05;
                    interior || far_outside
                })
            };
            if clear(cx, w) && clear(cy, h) {
                break candidate;
            }
        };
        let img = Tensor::from_vec(&[c, h, w], rand_vec(&mut rng, c * h * w));
        let out = crop_resize_forward(&img, &bbox, res);
        let r = rand_vec(&mut rng, out.len());
        let grad_out = Tensor::from_vec(out.shape(), r.clone());
        let (gimg, gbbox) = crop_resize_backward(&img, &bbox, &grad_out, res, true);
        let gimg = gimg.expect("image gradient requested");
        let nimg = numeric_grad(img.data(), |v| {
            project(
                &crop_resize_forward(&Tensor::from_vec(img.shape(), v.to_vec()), &bbox, res),
                &r,
            )
        });
        check_one("crop_resize/image", i, gimg.data(), &nimg)?;
        let nbbox = numeric_grad(&bbox, |v| {
            project(&crop_resize_forward(&img, &[v[0], v[1], v[2]], res), &r)
        });
        check_one("crop_resize/bbox", i, &gbbox, &nbbox)?;
    }

    for i in 0..GRAD_INSTANCES {
        // softmax cross-entropy on logits.
        let n = rng.gen_range(3..=10);
        let logits = rand_vec(&mut rng, n);
        let target = rng.gen_range(0..n);
        let (_, grad) = cross_entropy_from_logits(&logits, target);
        let numeric = numeric_grad(&logits, |v| cross_entropy_from_logits(v, target).0);
        check_one("cross_entropy", i, &grad, &numeric)?;
    }

    for i in 0..GRAD_INSTANCES {
        // presence BCE on a single logit.
        let logit = [rng.gen_range(-3.0..3.0f64)];
        let target = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let (_, grad) = bce_with_logits(logit[0], target);
        let numeric = numeric_grad(&logit, |v| bce_with_logits(v[0], target).0);
        check_one("bce", i, &[grad], &numeric)?;
    }

    for i in 0..GRAD_INSTANCES {
        // bbox MSE.
        let n = rng.gen_range(2..=6);
        let pred = rand_vec(&mut rng, n);
        let target = rand_vec(&mut rng, n);
        let (_, grad) = mse(&pred, &target);
        let numeric = numeric_grad(&pred, |v| mse(v, &target).0);
        check_one("mse", i, &grad, &numeric)?;
    }

    Ok(format!(
        "8 ops x {GRAD_INSTANCES} instances, all max rel errs < 1e-3"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 5: quantization contracts.

fn sparse_surface(rng: &mut ChaCha8Rng, config: &ModelConfig) -> Tensor<f32> {
    let n = config.input_channels * config.input_size * config.input_size;
    let data: Vec<f32> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.15) {
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

fn check_quantization_contracts() -> Outcome {
    let config = ModelConfig::default();
    let params = Parameters::init(&config, 0xAC05).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC05);

    // Weight contract on a hand-built tensor: zero quantizes to exactly 0
    // (symmetric, no zero-point) and each channel's max magnitude hits 127.
    let probe = Tensor::from_vec(
        &[2, 4],
        vec![0.0, 0.5, -1.0, 0.25, 0.0, 2.0, -3.0, 1.5],
    );
    let qp = quantize_weights(&probe);
    if qp.q[0] != 0 || qp.q[4] != 0 {
        return fail("zero weight did not quantize to 0");
    }
    if qp.q[2] != -127 || qp.q[6] != -127 {
        return fail("channel max magnitude did not map to +/-127");
    }

    // Round trip on every quantizable tensor of a real parameter set.
    let mut checked = 0usize;
    let mut round_trip_err: Option<String> = None;
    params.visit(&mut |name, t| {
        if round_trip_err.is_some()
            || !(name.starts_with("s2_") || name.starts_with("s4_"))
            || !name.ends_with(".weight")
        {
            return;
        }
        let qw = quantize_weights(t);
        let channels = t.shape()[0];
        let per_channel = t.len() / channels;
        for c in 0..channels {
            let scale = qw.scales[c] as f64;
            let mut max_q = 0i8;
            for k in 0..per_channel {
                let v = t.data()[c * per_channel + k] as f64;
                let q = qw.q[c * per_channel + k];
                max_q = max_q.max(q.unsigned_abs() as i8);
                if (v - q as f64 * scale).abs() > scale * 0.5 * (1.0 + 1e-5) {
                    round_trip_err =
                        Some(format!("{name} channel {c}: round-trip error over scale/2"));
                    return;
                }
            }
            if max_q != 127 {
                round_trip_err = Some(format!("{name} channel {c}: max |q| {max_q} != 127"));
                return;
            }
        }
        checked += 1;
    });
    if let Some(e) = round_trip_err {
        return fail(e);
    }

    // Calibrate activation observers on sparse surface-like inputs.
    let mut state = QuantState::new(&config);
    let calibration: Vec<Tensor<f32>> =
        (0..64).map(|_| sparse_surface(&mut rng, &config)).collect();
    calibrate(&config, &params, &mut state, &calibration).map_err(|e| e.to_string())?;

    // Activation contract: real zero is exactly representable at every tap.
    let taps = state.layout();
    for tap in 0..taps.count() {
        let (scale, zp) = state.qparams(tap).map_err(|e| e.to_string())?;
        if !(0..=255).contains(&zp) {
            return fail(format!("tap {tap}: zero point {zp} outside u8 range"));
        }
        let zero = Tensor::from_vec(&[4], vec![0.0f32; 4]);
        let q = quantize_tensor(&zero, scale, zp);
        if q.iter().any(|&b| b as i32 != zp) {
            return fail(format!("tap {tap}: quantized zero is not the zero point"));
        }
        let back = dequantize(&q, scale, zp);
        if back.iter().any(|&v| v != 0.0) {
            return fail(format!("tap {tap}: dequantized zero point is not exactly 0.0"));
        }
    }

    // Integer inference against the fake-quant training graph.
    let quantized = prepare_quantized(&config, &params, &state).map_err(|e| e.to_string())?;
    let mut agreements = 0usize;
    let mut total_dev = 0.0f64;
    const TRIALS: usize = 1000;
    for _ in 0..TRIALS {
        let input = sparse_surface(&mut rng, &config);
        let int_out = integer_forward(&config, &quantized, &input).map_err(|e| e.to_string())?;
        let mut ctx = ForwardCtx {
            dropout: None,
            quant: Some(FakeQuantSession {
                state: &mut state,
                observe: false,
            }),
        };
        let (fq_out, _) = forward(&config, &params, &input, &mut ctx).map_err(|e| e.to_string())?;
        let argmax = |v: &[f32]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap()
        };
        if argmax(&int_out.combined) == argmax(&fq_out.combined) {
            agreements += 1;
        }
        let dev = int_out
            .combined
            .iter()
            .zip(&fq_out.combined)
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        total_dev += dev;
    }
    let agreement = agreements as f64 / TRIALS as f64;
    let mean_dev = total_dev / TRIALS as f64;
    if agreement < 0.99 {
        return fail(format!("argmax agreement {agreement:.3} < 0.99"));
    }
    if mean_dev > 1e-2 {
        return fail(format!("mean probability deviation {mean_dev:.3e} > 1e-2"));
    }
    Ok(format!(
        "{checked} weight tensors round-trip; argmax agreement {agreement:.3}, mean prob dev {mean_dev:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6: window label aggregation.

fn frames_of(spec: &[(GestureClass, usize)]) -> Vec<GestureClass> {
    let mut out = Vec::new();
    for &(class, n) in spec {
        out.extend(std::iter::repeat(class).take(n));
    }
    out
}

fn check_label_aggregation() -> Outcome {
    use GestureClass::*;
    let t = 0.6;

    // Worked example 1: no previous window, majority wins; exact ties go to
    // the lowest class code (Pinch = 3 beats Rest = 10).
    let first = frames_of(&[(Rest, 5), (Pinch, 7)]);
    if aggregate_window_label(&first, None, t).map_err(|e| e.to_string())? != Pinch {
        return fail("worked example 1a: majority Pinch expected");
    }
    let tie = frames_of(&[(Pinch, 6), (Rest, 6)]);
    if aggregate_window_label(&tie, None, t).map_err(|e| e.to_string())? != Pinch {
        return fail("worked example 1b: tie should resolve to the lower code");
    }

    // Worked example 2: a challenger covering 10/16 = 62.5% >= 60% displaces
    // the previous label.
    let flip = frames_of(&[(SwipeLeft, 10), (Rest, 6)]);
    if aggregate_window_label(&flip, Some(Rest), t).map_err(|e| e.to_string())? != SwipeLeft {
        return fail("worked example 2: 62.5% challenger should flip");
    }

    // Worked example 3: 7/12 = 58.3% < 60% sticks with the previous label
    // even though the previous label covers none of the window.
    let stick = frames_of(&[(Pinch, 7), (Rest, 5)]);
    if aggregate_window_label(&stick, Some(SwipeRight), t).map_err(|e| e.to_string())?
        != SwipeRight
    {
        return fail("worked example 3: 58.3% challenger should not flip");
    }

    // Property cases.
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC06);
    let classes = GestureClass::ALL;
    for case in 0..100 {
        let n = rng.gen_range(1..=60);
        let frames: Vec<GestureClass> = (0..n)
            .map(|_| classes[rng.gen_range(0..classes.len())])
            .collect();
        let previous = if rng.gen_bool(0.2) {
            None
        } else {
            Some(classes[rng.gen_range(0..classes.len())])
        };

        // Idempotence: feeding the result back as the previous label is a
        // fixed point.
        let once = aggregate_window_label(&frames, previous, t).map_err(|e| e.to_string())?;
        let twice = aggregate_window_label(&frames, Some(once), t).map_err(|e| e.to_string())?;
        if once != twice {
            return fail(format!("case {case}: not idempotent ({once} then {twice})"));
        }

        // Threshold monotonicity: whatever flips at a high threshold also
        // flips (to the same label) at a lower one.
        if let Some(prev) = previous {
            let hi = aggregate_window_label(&frames, previous, 0.7).map_err(|e| e.to_string())?;
            let lo = aggregate_window_label(&frames, previous, 0.55).map_err(|e| e.to_string())?;
            if hi != prev && lo != hi {
                return fail(format!(
                    "case {case}: flipped to {hi} at 0.7 but {lo} at 0.55"
                ));
            }
        }
    }
    Ok("3 worked examples and 100 property cases hold".into())
}

// ---------------------------------------------------------------------------
// Desk-scale fixture shared by criteria 7, 8, and 10.

struct DeskFixture {
    // Kept alive so the temp dir outlives the fixture.
    _dir: tempfile::TempDir,
    config: PipelineConfig,
    quantized_trials: EvalReport,
    float_rot: EvalReport,
    finetuned_rot: EvalReport,
    bench: BenchReport,
}

fn build_desk_fixture() -> Result<DeskFixture, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = PipelineConfig::default();
    config.out_dir = dir.path().join("run");
    config.validate().map_err(|e| e.to_string())?;

    run_simulate(&config, None).map_err(|e| format!("simulate: {e}"))?;
    run_encode(&config, false).map_err(|e| format!("encode: {e}"))?;
    run_train(&config).map_err(|e| format!("train: {e}"))?;
    run_finetune(&config).map_err(|e| format!("finetune: {e}"))?;
    run_qat(&config, "float").map_err(|e| format!("qat: {e}"))?;
    run_evaluate(&config, "quantized", "trials").map_err(|e| format!("evaluate: {e}"))?;
    run_evaluate(&config, "float", "trials_rot").map_err(|e| format!("evaluate: {e}"))?;
    run_evaluate(&config, "finetuned", "trials_rot").map_err(|e| format!("evaluate: {e}"))?;
    run_bench(&config, None).map_err(|e| format!("bench: {e}"))?;

    let layout = Layout::new(&config.out_dir);
    let quantized_trials: EvalReport =
        read_json(&layout.report("evaluate-quantized-trials.json")).map_err(|e| e.to_string())?;
    let float_rot: EvalReport =
        read_json(&layout.report("evaluate-float-trials_rot.json")).map_err(|e| e.to_string())?;
    let finetuned_rot: EvalReport = read_json(&layout.report("evaluate-finetuned-trials_rot.json"))
        .map_err(|e| e.to_string())?;
    let bench: BenchReport =
        read_json(&layout.report("bench.json")).map_err(|e| e.to_string())?;
    Ok(DeskFixture {
        _dir: dir,
        config,
        quantized_trials,
        float_rot,
        finetuned_rot,
        bench,
    })
}

// ---------------------------------------------------------------------------
// Criterion 7: desk-scale accuracy bars.

fn check_desk_accuracy(fx: &DeskFixture) -> Outcome {
    let report = &fx.quantized_trials;
    if report.trials < 200 {
        return fail(format!("only {} trials scored", report.trials));
    }
    if report.val_average_precision < 0.75 {
        return fail(format!(
            "validation average precision {:.3} < 0.75",
            report.val_average_precision
        ));
    }
    if report.metrics.mean_f1 < 0.8 {
        return fail(format!(
            "trial mean F1 {:.3} < 0.8",
            report.metrics.mean_f1
        ));
    }
    Ok(format!(
        "{} trials: val precision {:.3}, mean F1 {:.3}",
        report.trials, report.val_average_precision, report.metrics.mean_f1
    ))
}

// ---------------------------------------------------------------------------
// Criterion 8: fine-tune freeze contract and rotated-domain gain.

fn stage123_tensors(path: &Path) -> Result<Vec<(String, Vec<u32>)>, String> {
    let payload = read_container(path).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for (name, record) in payload.tensors {
        if !STAGE123_PREFIXES.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        match record {
            TensorRecord::F32 { data, .. } => {
                out.push((name, data.iter().map(|v| v.to_bits()).collect()))
            }
            _ => return Err(format!("{name}: stage 1-3 tensor is not f32")),
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn check_finetune_contract(fx: &DeskFixture) -> Outcome {
    let layout = Layout::new(&fx.config.out_dir);
    let float = stage123_tensors(&layout.model("float"))?;
    let tuned = stage123_tensors(&layout.model("finetuned"))?;
    if float.is_empty() {
        return fail("no stage 1-3 tensors found in the float model");
    }
    if float.len() != tuned.len() {
        return fail(format!(
            "stage 1-3 tensor counts differ: {} vs {}",
            float.len(),
            tuned.len()
        ));
    }
    for ((name_a, bits_a), (name_b, bits_b)) in float.iter().zip(&tuned) {
        if name_a != name_b || bits_a != bits_b {
            return fail(format!("stage 1-3 tensor {name_a} changed during fine-tune"));
        }
    }

    let gain = fx.finetuned_rot.metrics.mean_f1 - fx.float_rot.metrics.mean_f1;
    if gain < 0.05 {
        return fail(format!(
            "rotated mean F1 gain {:.3} < 0.05 (float {:.3}, finetuned {:.3})",
            gain, fx.float_rot.metrics.mean_f1, fx.finetuned_rot.metrics.mean_f1
        ));
    }
    Ok(format!(
        "{} frozen tensors bit-identical; rotated mean F1 {:.3} -> {:.3} (+{:.3})",
        float.len(),
        fx.float_rot.metrics.mean_f1,
        fx.finetuned_rot.metrics.mean_f1,
        gain
    ))
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical artifacts on a same-seed re-run.

fn tiny_pipeline(out_dir: &Path) -> Result<std::collections::BTreeMap<String, String>, String> {
    let mut config = PipelineConfig::default();
    config.seed = 11;
    config.scale = 0.00073;
    config.dataset.trial_units = 2;
    config.dataset.trials_per_unit = 4;
    config.train.epochs = 2;
    config.finetune.epochs = 1;
    config.qat.epochs = 1;
    config.out_dir = out_dir.to_path_buf();
    config.validate().map_err(|e| e.to_string())?;

    run_simulate(&config, None).map_err(|e| format!("simulate: {e}"))?;
    run_encode(&config, false).map_err(|e| format!("encode: {e}"))?;
    run_train(&config).map_err(|e| format!("train: {e}"))?;
    run_finetune(&config).map_err(|e| format!("finetune: {e}"))?;
    run_qat(&config, "float").map_err(|e| format!("qat: {e}"))?;
    run_evaluate(&config, "quantized", "trials").map_err(|e| format!("evaluate: {e}"))?;
    hash_tree(out_dir, out_dir).map_err(|e| e.to_string())
}

fn check_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_dir = dir.path().join("det");
    let first = tiny_pipeline(&out_dir)?;
    std::fs::remove_dir_all(&out_dir).map_err(|e| e.to_string())?;
    let second = tiny_pipeline(&out_dir)?;

    if first.len() != second.len() {
        return fail(format!(
            "artifact counts differ: {} vs {}",
            first.len(),
            second.len()
        ));
    }
    for (path, hash) in &first {
        match second.get(path) {
            Some(h) if h == hash => {}
            Some(_) => return fail(format!("{path} differs between runs")),
            None => return fail(format!("{path} missing from the second run")),
        }
    }
    Ok(format!("{} artifacts byte-identical across runs", first.len()))
}

// ---------------------------------------------------------------------------
// Criterion 10: integer inference latency strictly below float.

fn check_latency(fx: &DeskFixture) -> Outcome {
    let float = fx.bench.float.mean_ns;
    let integer = fx.bench.integer.mean_ns;
    if !(integer < float) {
        return fail(format!(
            "integer mean {:.0} ns not below float mean {:.0} ns",
            integer, float
        ));
    }
    Ok(format!(
        "integer {:.2} ms vs float {:.2} ms over {} iterations ({:.2}x)",
        integer / 1e6,
        float / 1e6,
        fx.bench.iterations,
        fx.bench.speedup
    ))
}
