//! Online thresholded evaluation: sliding-window inference, candidate
//! debouncing, trial matching with the combined-pinch aggregate, confusion
//! matrices, and latency measurement.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::labels::GestureClass;
use crate::surface::{build_time_surface, SurfaceError, TimeSurface};
use crate::window::{slice_windows, WindowConfig};
use crate::EventStream;

use thiserror::Error;

/// Softmax threshold a window must clear (strictly) to emit a candidate.
pub const DEFAULT_EMIT_THRESHOLD: f64 = 0.65;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("threshold must be in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("trial {index} overlaps its predecessor's match window")]
    OverlappingTrials { index: usize },
    #[error("trial prompt {0:?} is not an emittable gesture")]
    BadPrompt(GestureClass),
    #[error("probability vector has {got} entries, expected {expected}")]
    BadProbabilities { expected: usize, got: usize },
    #[error("inference failed: {0}")]
    Inference(String),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Window(#[from] crate::window::WindowError),
}

/// A debounced gesture emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvent {
    pub class: GestureClass,
    /// End of the first window in the debounce group.
    pub t_ns: u64,
    pub confidence: f64,
}

/// One window's candidate before debouncing.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    class: GestureClass,
    window_end_ns: u64,
    prob: f64,
}

fn window_candidate(
    probs: &[f64],
    window_end_ns: u64,
    threshold: f64,
) -> Result<Option<Candidate>, EvalError> {
    if probs.len() != GestureClass::COUNT {
        return Err(EvalError::BadProbabilities {
            expected: GestureClass::COUNT,
            got: probs.len(),
        });
    }
    let mut best: Option<Candidate> = None;
    for class in GestureClass::ALL {
        if !class.is_emittable() {
            continue;
        }
        let p = probs[class.index()];
        if p > threshold && best.map_or(true, |b| p > b.prob) {
            best = Some(Candidate {
                class,
                window_end_ns,
                prob: p,
            });
        }
    }
    Ok(best)
}

/// Collapse consecutive identical candidates within `debounce_ns` into one
/// event stamped at the group's first window end, keeping the best
/// confidence seen.
fn debounce(candidates: &[Candidate], debounce_ns: u64) -> Vec<PredictionEvent> {
    let mut events: Vec<PredictionEvent> = Vec::new();
    let mut open: Option<(PredictionEvent, u64)> = None;
    for c in candidates {
        match &mut open {
            Some((event, last_end))
                if event.class == c.class
                    && c.window_end_ns.saturating_sub(*last_end) <= debounce_ns =>
            {
                event.confidence = event.confidence.max(c.prob);
                *last_end = c.window_end_ns;
            }
            _ => {
                if let Some((event, _)) = open.take() {
                    events.push(event);
                }
                open = Some((
                    PredictionEvent {
                        class: c.class,
                        t_ns: c.window_end_ns,
                        confidence: c.prob,
                    },
                    c.window_end_ns,
                ));
            }
        }
    }
    if let Some((event, _)) = open {
        events.push(event);
    }
    events
}

/// Pure candidate logic over per-window probability vectors (window end,
/// probabilities indexed by class). Exposed for reuse when probabilities
/// come from somewhere other than a live model.
pub fn candidate_events(
    window_probs: &[(u64, Vec<f64>)],
    threshold: f64,
    debounce_ns: u64,
) -> Result<Vec<PredictionEvent>, EvalError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let mut candidates = Vec::new();
    for (end_ns, probs) in window_probs {
        if let Some(c) = window_candidate(probs, *end_ns, threshold)? {
            candidates.push(c);
        }
    }
    Ok(debounce(&candidates, debounce_ns))
}

/// Slide the window grid over a stream, build each time surface, ask the
/// model for combined class probabilities, and debounce the candidates.
/// The debounce horizon is the window length.
pub fn sliding_inference<F>(
    stream: &EventStream,
    config: &WindowConfig,
    threshold: f64,
    mut infer: F,
) -> Result<Vec<PredictionEvent>, EvalError>
where
    F: FnMut(&TimeSurface) -> Result<Vec<f64>, EvalError>,
{
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let windows = slice_windows(stream.duration_ns(), config)?;
    let mut candidates = Vec::new();
    for window in &windows {
        let surface = build_time_surface(stream, window.end_ns, config)?;
        let probs = infer(&surface)?;
        if let Some(c) = window_candidate(&probs, window.end_ns, threshold)? {
            candidates.push(c);
        }
    }
    Ok(debounce(&candidates, config.window_ns))
}

/// A prompted gesture with its timestamp; the subject has `match_window_ns`
/// (passed to the scorer) to perform it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub prompt: GestureClass,
    pub prompt_ns: u64,
}

/// Scoring families: both pinch variants pool into the combined-pinch
/// aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreFamily {
    SwipeRight,
    SwipeLeft,
    CombinedPinch,
}

impl ScoreFamily {
    pub const ALL: [ScoreFamily; 3] = [
        ScoreFamily::SwipeRight,
        ScoreFamily::SwipeLeft,
        ScoreFamily::CombinedPinch,
    ];

    pub fn of(class: GestureClass) -> Option<ScoreFamily> {
        match class {
            GestureClass::SwipeRight => Some(ScoreFamily::SwipeRight),
            GestureClass::SwipeLeft => Some(ScoreFamily::SwipeLeft),
            GestureClass::Pinch | GestureClass::DoublePinch => Some(ScoreFamily::CombinedPinch),
            _ => None,
        }
    }

    fn idx(self) -> usize {
        match self {
            ScoreFamily::SwipeRight => 0,
            ScoreFamily::SwipeLeft => 1,
            ScoreFamily::CombinedPinch => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreFamily::SwipeRight => "swipe_right",
            ScoreFamily::SwipeLeft => "swipe_left",
            ScoreFamily::CombinedPinch => "combined_pinch",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u32,
    pub fp: u32,
    pub fn_: u32,
}

impl ClassCounts {
    /// F1 = 2TP / (2TP + FP + FN); defined as 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn active(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Per-family counts for one evaluation unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub families: [ClassCounts; 3],
}

impl UnitScore {
    /// Mean F1 across the families that actually occur in this unit.
    pub fn mean_f1(&self) -> f64 {
        let active: Vec<f64> = self
            .families
            .iter()
            .filter(|c| c.active())
            .map(ClassCounts::f1)
            .collect();
        if active.is_empty() {
            0.0
        } else {
            active.iter().sum::<f64>() / active.len() as f64
        }
    }
}

fn satisfies(prediction: GestureClass, prompt: GestureClass) -> bool {
    match (ScoreFamily::of(prediction), ScoreFamily::of(prompt)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

/// Match debounced predictions against prompted trials. A prediction inside
/// [prompt, prompt + match_window] whose family matches the prompt is a TP
/// and is consumed; every unconsumed prediction is an FP for its own
/// family; every unmatched trial is an FN. Trials must be sorted and their
/// match windows disjoint.
pub fn match_and_score(
    predictions: &[PredictionEvent],
    trials: &[TrialRecord],
    match_window_ns: u64,
) -> Result<UnitScore, EvalError> {
    for (i, t) in trials.iter().enumerate() {
        if ScoreFamily::of(t.prompt).is_none() {
            return Err(EvalError::BadPrompt(t.prompt));
        }
        if i > 0 {
            let prev = &trials[i - 1];
            if t.prompt_ns < prev.prompt_ns.saturating_add(match_window_ns) {
                return Err(EvalError::OverlappingTrials { index: i });
            }
        }
    }
    let mut consumed = vec![false; predictions.len()];
    let mut score = UnitScore::default();
    for trial in trials {
        let family = ScoreFamily::of(trial.prompt).expect("validated above");
        let window_end = trial.prompt_ns.saturating_add(match_window_ns);
        let hit = predictions.iter().enumerate().find(|(i, p)| {
            !consumed[*i]
                && p.t_ns >= trial.prompt_ns
                && p.t_ns <= window_end
                && satisfies(p.class, trial.prompt)
        });
        match hit {
            Some((i, _)) => {
                consumed[i] = true;
                score.families[family.idx()].tp += 1;
            }
            None => score.families[family.idx()].fn_ += 1,
        }
    }
    for (i, p) in predictions.iter().enumerate() {
        if consumed[i] {
            continue;
        }
        if let Some(family) = ScoreFamily::of(p.class) {
            score.families[family.idx()].fp += 1;
        }
    }
    Ok(score)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub counts: ClassCounts,
    pub f1: f64,
}

/// Aggregated trial metrics: pooled counts per family plus the unit-level
/// mean/median of per-unit mean F1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub families: Vec<FamilyReport>,
    pub unit_mean_f1: Vec<f64>,
    pub mean_f1: f64,
    pub median_f1: f64,
}

pub fn score_units(units: &[UnitScore]) -> MetricsReport {
    let mut pooled = [ClassCounts::default(); 3];
    for unit in units {
        for (p, u) in pooled.iter_mut().zip(unit.families.iter()) {
            p.add(u);
        }
    }
    let families = ScoreFamily::ALL
        .iter()
        .map(|f| FamilyReport {
            family: f.name().to_string(),
            counts: pooled[f.idx()],
            f1: pooled[f.idx()].f1(),
        })
        .collect();
    let mut unit_mean_f1: Vec<f64> = units.iter().map(UnitScore::mean_f1).collect();
    let mean_f1 = if unit_mean_f1.is_empty() {
        0.0
    } else {
        unit_mean_f1.iter().sum::<f64>() / unit_mean_f1.len() as f64
    };
    let mut sorted = unit_mean_f1.clone();
    sorted.sort_by(f64::total_cmp);
    let median_f1 = if sorted.is_empty() {
        0.0
    } else if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    unit_mean_f1.shrink_to_fit();
    MetricsReport {
        families,
        unit_mean_f1,
        mean_f1,
        median_f1,
    }
}

/// Row = true class, column = predicted class, both in stable-code order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u32>>,
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: &[(GestureClass, GestureClass)]) -> ConfusionMatrix {
        let n = GestureClass::COUNT;
        let mut counts = vec![vec![0u32; n]; n];
        for (truth, pred) in pairs {
            counts[truth.index()][pred.index()] += 1;
        }
        ConfusionMatrix { counts }
    }

    /// Per-class precision: diagonal over column sum; classes never
    /// predicted are excluded from the average.
    pub fn average_precision(&self) -> f64 {
        let n = self.counts.len();
        let mut total = 0.0;
        let mut included = 0usize;
        for c in 0..n {
            let col_sum: u32 = (0..n).map(|r| self.counts[r][c]).sum();
            if col_sum == 0 {
                continue;
            }
            total += self.counts[c][c] as f64 / col_sum as f64;
            included += 1;
        }
        if included == 0 {
            0.0
        } else {
            total / included as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for class in GestureClass::ALL {
            out.push(',');
            out.push_str(class.name());
        }
        out.push('\n');
        for (r, class) in GestureClass::ALL.iter().enumerate() {
            out.push_str(class.name());
            for c in 0..self.counts[r].len() {
                out.push(',');
                out.push_str(&self.counts[r][c].to_string());
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
}

/// Time `f` over `iterations` runs after 10 unrecorded warmup runs.
pub fn bench_latency(mut f: impl FnMut(), iterations: usize) -> LatencyStats {
    const WARMUP: usize = 10;
    for _ in 0..WARMUP {
        f();
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        f();
        samples.push(start.elapsed().as_nanos() as u64);
    }
    samples.sort_unstable();
    let mean_ns = samples.iter().map(|&s| s as f64).sum::<f64>() / samples.len().max(1) as f64;
    let pct = |q: f64| -> u64 {
        if samples.is_empty() {
            return 0;
        }
        let rank = ((q * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
        samples[rank - 1]
    };
    LatencyStats {
        samples: samples.len(),
        mean_ns,
        p50_ns: pct(0.50),
        p99_ns: pct(0.99),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, Polarity};

    const MS: u64 = 1_000_000;

    fn probs_for(class: GestureClass, p: f64) -> Vec<f64> {
        let mut v = vec![(1.0 - p) / 9.0; GestureClass::COUNT];
        v[class.index()] = p;
        v
    }

    // [PAPER] threshold 0.65 is strict: 0.65 exactly must not emit.
    #[test]
    fn threshold_is_strict() {
        let at = vec![(240 * MS, probs_for(GestureClass::SwipeRight, 0.65))];
        assert!(candidate_events(&at, 0.65, 240 * MS).unwrap().is_empty());
        let above = vec![(240 * MS, probs_for(GestureClass::SwipeRight, 0.66))];
        assert_eq!(candidate_events(&above, 0.65, 240 * MS).unwrap().len(), 1);
    }

    #[test]
    fn non_emittable_classes_never_emit() {
        for class in [
            GestureClass::Rest,
            GestureClass::Unknown,
            GestureClass::Untracked,
            GestureClass::PinchReturn,
            GestureClass::SwipeLeftReturn,
            GestureClass::SwipeRightReturn,
        ] {
            let windows = vec![(240 * MS, probs_for(class, 0.99))];
            assert!(
                candidate_events(&windows, 0.65, 240 * MS).unwrap().is_empty(),
                "{class:?} must never emit"
            );
        }
    }

    // [PAPER] worked example: SwipeRight windows at 0.62 / 0.70 / 0.71 emit a
    // single event stamped at the first window that cleared the threshold.
    #[test]
    fn debounce_merges_consecutive_candidates() {
        let windows = vec![
            (240 * MS, probs_for(GestureClass::SwipeRight, 0.62)),
            (320 * MS, probs_for(GestureClass::SwipeRight, 0.70)),
            (400 * MS, probs_for(GestureClass::SwipeRight, 0.71)),
        ];
        let events = candidate_events(&windows, 0.65, 240 * MS).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].class, GestureClass::SwipeRight);
        assert_eq!(events[0].t_ns, 320 * MS);
        assert!((events[0].confidence - 0.71).abs() < 1e-12);
    }

    #[test]
    fn candidates_beyond_debounce_become_separate_events() {
        let windows = vec![
            (240 * MS, probs_for(GestureClass::Pinch, 0.8)),
            (720 * MS, probs_for(GestureClass::Pinch, 0.8)),
        ];
        let events = candidate_events(&windows, 0.65, 240 * MS).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].t_ns, 240 * MS);
        assert_eq!(events[1].t_ns, 720 * MS);
    }

    #[test]
    fn class_change_breaks_the_debounce_group() {
        let windows = vec![
            (240 * MS, probs_for(GestureClass::Pinch, 0.8)),
            (320 * MS, probs_for(GestureClass::SwipeLeft, 0.8)),
            (400 * MS, probs_for(GestureClass::Pinch, 0.8)),
        ];
        let events = candidate_events(&windows, 0.65, 240 * MS).unwrap();
        assert_eq!(events.len(), 3);
    }

    #[test]
    fn matching_scores_the_worked_example() {
        // Pinch prompt satisfied by a DoublePinch prediction (combined pinch),
        // plus a stray SwipeLeft FP and a missed SwipeRight trial.
        let predictions = vec![
            PredictionEvent {
                class: GestureClass::DoublePinch,
                t_ns: 500 * MS,
                confidence: 0.8,
            },
            PredictionEvent {
                class: GestureClass::SwipeLeft,
                t_ns: 900 * MS,
                confidence: 0.7,
            },
        ];
        let trials = vec![
            TrialRecord {
                prompt: GestureClass::Pinch,
                prompt_ns: 0,
            },
            TrialRecord {
                prompt: GestureClass::SwipeRight,
                prompt_ns: 2000 * MS,
            },
        ];
        let score = match_and_score(&predictions, &trials, 2000 * MS).unwrap();
        let cp = score.families[ScoreFamily::CombinedPinch.idx()];
        let rs = score.families[ScoreFamily::SwipeRight.idx()];
        let ls = score.families[ScoreFamily::SwipeLeft.idx()];
        assert_eq!((cp.tp, cp.fp, cp.fn_), (1, 0, 0));
        assert_eq!((rs.tp, rs.fp, rs.fn_), (0, 0, 1));
        assert_eq!((ls.tp, ls.fp, ls.fn_), (0, 1, 0));
    }

    #[test]
    fn duplicate_predictions_count_as_false_positives() {
        let predictions = vec![
            PredictionEvent {
                class: GestureClass::Pinch,
                t_ns: 100 * MS,
                confidence: 0.9,
            },
            PredictionEvent {
                class: GestureClass::Pinch,
                t_ns: 600 * MS,
                confidence: 0.9,
            },
        ];
        let trials = vec![TrialRecord {
            prompt: GestureClass::Pinch,
            prompt_ns: 0,
        }];
        let score = match_and_score(&predictions, &trials, 2000 * MS).unwrap();
        let cp = score.families[ScoreFamily::CombinedPinch.idx()];
        assert_eq!((cp.tp, cp.fp, cp.fn_), (1, 1, 0));
    }

    #[test]
    fn overlapping_trials_rejected() {
        let trials = vec![
            TrialRecord {
                prompt: GestureClass::Pinch,
                prompt_ns: 0,
            },
            TrialRecord {
                prompt: GestureClass::SwipeLeft,
                prompt_ns: 1000 * MS,
            },
        ];
        assert!(matches!(
            match_and_score(&[], &trials, 2000 * MS),
            Err(EvalError::OverlappingTrials { index: 1 })
        ));
    }

    // [TRIVIAL] F1 arithmetic.
    #[test]
    fn f1_formula_and_empty_denominator() {
        let counts = ClassCounts {
            tp: 3,
            fp: 1,
            fn_: 2,
        };
        assert!((counts.f1() - 6.0 / 9.0).abs() < 1e-12);
        assert_eq!(ClassCounts::default().f1(), 0.0);
    }

    #[test]
    fn unit_aggregation_mean_and_median() {
        let perfect = UnitScore {
            families: [
                ClassCounts { tp: 2, fp: 0, fn_: 0 },
                ClassCounts { tp: 2, fp: 0, fn_: 0 },
                ClassCounts { tp: 2, fp: 0, fn_: 0 },
            ],
        };
        let half = UnitScore {
            families: [
                ClassCounts { tp: 1, fp: 1, fn_: 1 },
                ClassCounts { tp: 1, fp: 1, fn_: 1 },
                ClassCounts { tp: 1, fp: 1, fn_: 1 },
            ],
        };
        let report = score_units(&[perfect, half, perfect]);
        assert!((report.unit_mean_f1[0] - 1.0).abs() < 1e-12);
        assert!((report.unit_mean_f1[1] - 0.5).abs() < 1e-12);
        assert!((report.mean_f1 - (1.0 + 0.5 + 1.0) / 3.0).abs() < 1e-12);
        assert!((report.median_f1 - 1.0).abs() < 1e-12);
        // Pooled CP counts: 2+1+2 TPs.
        assert_eq!(report.families[2].counts.tp, 5);
    }

    #[test]
    fn confusion_matrix_precision_excludes_empty_columns() {
        let pairs = vec![
            (GestureClass::Pinch, GestureClass::Pinch),
            (GestureClass::Pinch, GestureClass::Pinch),
            (GestureClass::Rest, GestureClass::Pinch),
            (GestureClass::Rest, GestureClass::Rest),
        ];
        let cm = ConfusionMatrix::from_pairs(&pairs);
        // Pinch column: 2 correct of 3; Rest column: 1 of 1; others empty.
        let expected = (2.0 / 3.0 + 1.0) / 2.0;
        assert!((cm.average_precision() - expected).abs() < 1e-12);
        let csv = cm.to_csv();
        assert!(csv.starts_with("true\\pred,unknown"));
        assert_eq!(csv.lines().count(), GestureClass::COUNT + 1);
    }

    #[test]
    fn latency_stats_ordered_and_warmup_excluded() {
        let mut calls = 0usize;
        let stats = bench_latency(
            || {
                calls += 1;
                std::hint::black_box((0..500).sum::<u64>());
            },
            50,
        );
        assert_eq!(calls, 60, "10 warmup calls plus 50 measured");
        assert_eq!(stats.samples, 50);
        assert!(stats.mean_ns > 0.0);
        assert!(stats.p50_ns <= stats.p99_ns);
    }

    #[test]
    fn sliding_inference_walks_the_window_grid() {
        // 2-second stream, one event; fake model emits SwipeLeft with high
        // probability only for windows ending in [800ms, 1040ms].
        let events = vec![Event {
            x: 1,
            y: 1,
            polarity: Polarity::Positive,
            t_ns: 10 * MS,
        }];
        let stream = EventStream::new(8, 8, 2_000 * MS, events).unwrap();
        let config = WindowConfig::default();
        let mut seen_ends = Vec::new();
        let predictions = sliding_inference(&stream, &config, 0.65, |surface| {
            seen_ends.push(surface.window_end_ns());
            let active = (800 * MS..=1040 * MS).contains(&surface.window_end_ns());
            let p = if active { 0.9 } else { 0.2 };
            Ok(probs_for(GestureClass::SwipeLeft, p))
        })
        .unwrap();
        assert_eq!(seen_ends.len(), 23, "2 s / 240 ms / 80 ms grid");
        assert_eq!(seen_ends[0], 240 * MS);
        assert_eq!(*seen_ends.last().unwrap(), 2_000 * MS);
        // Windows at 800..1040 all cleared the bar and debounced into one.
        assert_eq!(predictions.len(), 1);
        assert_eq!(predictions[0].class, GestureClass::SwipeLeft);
        assert_eq!(predictions[0].t_ns, 800 * MS);
    }
}
