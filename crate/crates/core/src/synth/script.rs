//! Markov gesture scripting and motion profiles.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::labels::GestureClass;

const N: usize = GestureClass::COUNT;

/// Transition weights over the gesture vocabulary, rooted at rest.
///
/// Only structurally allowed edges may carry weight: rest initiates
/// gestures, a gesture is followed by its paired return or by rest, and
/// returns / unknown / untracked always fall back to rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    weights: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn empty() -> Self {
        Self {
            weights: vec![vec![0.0; N]; N],
        }
    }

    /// Balanced desk-scale default: every initiating class reachable,
    /// returns favored 70/30 over direct rest blends.
    pub fn desk_default() -> Self {
        let mut chain = Self::empty();
        let rest = GestureClass::Rest;
        chain.set_weight(rest, GestureClass::Pinch, 0.22);
        chain.set_weight(rest, GestureClass::DoublePinch, 0.16);
        chain.set_weight(rest, GestureClass::SwipeLeft, 0.21);
        chain.set_weight(rest, GestureClass::SwipeRight, 0.21);
        chain.set_weight(rest, GestureClass::Unknown, 0.10);
        chain.set_weight(rest, GestureClass::Untracked, 0.10);
        for gesture in [
            GestureClass::Pinch,
            GestureClass::DoublePinch,
            GestureClass::SwipeLeft,
            GestureClass::SwipeRight,
        ] {
            let ret = gesture.return_class().expect("emittable gesture");
            chain.set_weight(gesture, ret, 0.7);
            chain.set_weight(gesture, rest, 0.3);
        }
        for source in [
            GestureClass::PinchReturn,
            GestureClass::SwipeLeftReturn,
            GestureClass::SwipeRightReturn,
            GestureClass::Unknown,
            GestureClass::Untracked,
        ] {
            chain.set_weight(source, rest, 1.0);
        }
        chain
    }

    pub fn weight(&self, from: GestureClass, to: GestureClass) -> f64 {
        self.weights[from.index()][to.index()]
    }

    pub fn set_weight(&mut self, from: GestureClass, to: GestureClass, weight: f64) {
        self.weights[from.index()][to.index()] = weight;
    }

    /// The structural edge set; everything else must stay at weight zero.
    pub fn allowed(from: GestureClass, to: GestureClass) -> bool {
        use GestureClass::*;
        match from {
            Rest => !matches!(to, Rest) && !to.is_return(),
            Pinch | DoublePinch | SwipeLeft | SwipeRight => {
                to == Rest || Some(to) == from.return_class()
            }
            PinchReturn | SwipeLeftReturn | SwipeRightReturn | Unknown | Untracked => to == Rest,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for from in GestureClass::ALL {
            for to in GestureClass::ALL {
                let w = self.weight(from, to);
                if !w.is_finite() || w < 0.0 {
                    return Err(SynthError::BadChain(format!(
                        "weight {from}->{to} is {w}"
                    )));
                }
                if w > 0.0 && !Self::allowed(from, to) {
                    return Err(SynthError::BadChain(format!(
                        "forbidden edge {from}->{to} has weight {w}"
                    )));
                }
            }
        }
        let rest_row: f64 = GestureClass::ALL
            .iter()
            .map(|&to| self.weight(GestureClass::Rest, to))
            .sum();
        if rest_row <= 0.0 {
            return Err(SynthError::BadChain("rest row has zero total weight".into()));
        }
        for from in GestureClass::ALL {
            if from == GestureClass::Rest || self.weight(GestureClass::Rest, from) == 0.0 {
                continue;
            }
            let row: f64 = GestureClass::ALL.iter().map(|&to| self.weight(from, to)).sum();
            if row <= 0.0 {
                return Err(SynthError::BadChain(format!(
                    "reachable state {from} has an unnormalizable row"
                )));
            }
        }
        Ok(())
    }

    /// Normalized rest-row initiation distribution.
    pub fn initiation_distribution(&self) -> Vec<(GestureClass, f64)> {
        let total: f64 = GestureClass::ALL
            .iter()
            .map(|&to| self.weight(GestureClass::Rest, to))
            .sum();
        GestureClass::ALL
            .iter()
            .filter(|&&to| self.weight(GestureClass::Rest, to) > 0.0)
            .map(|&to| (to, self.weight(GestureClass::Rest, to) / total))
            .collect()
    }

    /// Probability that `gesture` is followed by its paired return rather
    /// than blending straight back to rest.
    pub fn return_probability(&self, gesture: GestureClass) -> f64 {
        match gesture.return_class() {
            None => 0.0,
            Some(ret) => {
                let wr = self.weight(gesture, ret);
                let rest = self.weight(gesture, GestureClass::Rest);
                if wr + rest == 0.0 {
                    0.0
                } else {
                    wr / (wr + rest)
                }
            }
        }
    }

    /// Expected long-run frequency of each class among script entries,
    /// derived from the configured weights.
    pub fn expected_entry_frequencies(&self) -> Vec<(GestureClass, f64)> {
        let mut freq = vec![0.0; N];
        for (class, q) in self.initiation_distribution() {
            freq[class.index()] += q;
            if let Some(ret) = class.return_class() {
                freq[ret.index()] += q * self.return_probability(class);
            }
        }
        let total: f64 = freq.iter().sum();
        GestureClass::ALL
            .iter()
            .filter(|c| freq[c.index()] > 0.0)
            .map(|&c| (c, freq[c.index()] / total))
            .collect()
    }
}

/// One scheduled motion; gaps between entries are rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub class: GestureClass,
    pub start_ns: u64,
    pub duration_ns: u64,
    pub profile_m: f64,
}

impl ScriptEntry {
    #[inline]
    pub fn end_ns(&self) -> u64 {
        self.start_ns + self.duration_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureScript {
    entries: Vec<ScriptEntry>,
    total_ns: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptConfig {
    pub sequence_ns: u64,
    pub min_gesture_ns: u64,
    pub max_gesture_ns: u64,
    pub max_gestures: usize,
    pub rest_dwell_min_ns: u64,
    pub rest_dwell_max_ns: u64,
    /// Tracking loss holds the hand out of frame far longer than any
    /// gesture, so it gets its own duration band.
    pub untracked_min_ns: u64,
    pub untracked_max_ns: u64,
    /// Pose blend-back window after a gesture that skips its return.
    pub blend_ns: u64,
    pub profile_steepness: Vec<f64>,
}

impl Default for ScriptConfig {
    fn default() -> Self {
        Self {
            sequence_ns: 2_000_000_000,
            min_gesture_ns: 160_000_000,
            max_gesture_ns: 333_000_000,
            max_gestures: 6,
            rest_dwell_min_ns: 120_000_000,
            rest_dwell_max_ns: 420_000_000,
            untracked_min_ns: 450_000_000,
            untracked_max_ns: 900_000_000,
            blend_ns: 50_000_000,
            profile_steepness: vec![4.0, 6.0, 8.0, 12.0],
        }
    }
}

impl ScriptConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.min_gesture_ns > 0
            && self.min_gesture_ns <= self.max_gesture_ns
            && self.untracked_min_ns > 0
            && self.untracked_min_ns <= self.untracked_max_ns
            && self.max_gestures >= 1
            && self.rest_dwell_min_ns <= self.rest_dwell_max_ns
            && self.sequence_ns > self.max_gesture_ns
            && self.sequence_ns > self.untracked_max_ns
            && !self.profile_steepness.is_empty()
            && self.profile_steepness.iter().all(|&m| m > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SynthError::BadConfig("inconsistent script config".into()))
        }
    }

    /// Slower classes get their duration range tightened toward the cap;
    /// tracking loss draws from its dedicated band instead.
    fn duration_range(&self, class: GestureClass) -> (u64, u64) {
        if class == GestureClass::Untracked {
            return (self.untracked_min_ns, self.untracked_max_ns);
        }
        let lo = match class {
            GestureClass::DoublePinch => self.min_gesture_ns.max(220_000_000),
            _ => self.min_gesture_ns,
        };
        (lo.min(self.max_gesture_ns), self.max_gesture_ns)
    }

    /// Longest duration any single entry can take.
    fn max_entry_ns(&self) -> u64 {
        self.max_gesture_ns.max(self.untracked_max_ns)
    }
}

impl GestureScript {
    pub fn new(entries: Vec<ScriptEntry>, total_ns: u64) -> Result<Self, SynthError> {
        let script = Self { entries, total_ns };
        script.check_structure()?;
        Ok(script)
    }

    #[inline]
    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    #[inline]
    pub fn total_ns(&self) -> u64 {
        self.total_ns
    }

    /// The scheduled class covering `t_ns`, or rest.
    pub fn class_at(&self, t_ns: u64) -> GestureClass {
        self.entries
            .iter()
            .find(|e| e.start_ns <= t_ns && t_ns < e.end_ns())
            .map(|e| e.class)
            .unwrap_or(GestureClass::Rest)
    }

    /// The entry covering `t_ns`, if any.
    pub fn entry_at(&self, t_ns: u64) -> Option<&ScriptEntry> {
        self.entries
            .iter()
            .find(|e| e.start_ns <= t_ns && t_ns < e.end_ns())
    }

    fn check_structure(&self) -> Result<(), SynthError> {
        for pair in self.entries.windows(2) {
            if pair[1].start_ns < pair[0].end_ns() {
                return Err(SynthError::BadScript(format!(
                    "entries overlap at {} ns",
                    pair[1].start_ns
                )));
            }
            // Back-to-back entries are only ever a gesture and its return.
            if pair[1].start_ns == pair[0].end_ns()
                && pair[0].class.return_class() != Some(pair[1].class)
            {
                return Err(SynthError::BadScript(format!(
                    "{} directly followed by {}",
                    pair[0].class, pair[1].class
                )));
            }
        }
        if let Some(last) = self.entries.last() {
            if last.end_ns() > self.total_ns {
                return Err(SynthError::BadScript(
                    "entry extends past sequence end".into(),
                ));
            }
        }
        if self.entries.iter().any(|e| e.class == GestureClass::Rest) {
            return Err(SynthError::BadScript("rest is implicit, not an entry".into()));
        }
        Ok(())
    }

    /// Full invariants against a chain and config: edge legality, duration
    /// cap, and gesture budget.
    pub fn validate_against(
        &self,
        chain: &MarkovChain,
        config: &ScriptConfig,
    ) -> Result<(), SynthError> {
        self.check_structure()?;
        if self.entries.len() > config.max_gestures {
            return Err(SynthError::BadScript(format!(
                "{} gestures exceed the {} cap",
                self.entries.len(),
                config.max_gestures
            )));
        }
        let mut previous = GestureClass::Rest;
        let mut previous_end = 0u64;
        for entry in &self.entries {
            let (floor, cap) = config.duration_range(entry.class);
            if entry.duration_ns < floor || entry.duration_ns > cap {
                return Err(SynthError::BadScript(format!(
                    "{} duration {} ns outside [{floor}, {cap}]",
                    entry.class, entry.duration_ns
                )));
            }
            // A gap means the hand blended back to rest in between.
            let from = if entry.start_ns > previous_end {
                GestureClass::Rest
            } else {
                previous
            };
            if chain.weight(from, entry.class) == 0.0 {
                return Err(SynthError::BadScript(format!(
                    "transition {from}->{} has zero weight",
                    entry.class
                )));
            }
            previous = entry.class;
            previous_end = entry.end_ns();
        }
        Ok(())
    }
}

/// Sample one script from the chain.
///
/// Gestures are initiated atomically with their optional return, and only
/// while enough time remains for a worst-case pair, so truncation never
/// biases class frequencies.
pub fn sample_script(
    chain: &MarkovChain,
    config: &ScriptConfig,
    seed: u64,
) -> Result<GestureScript, SynthError> {
    chain.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let initiation = chain.initiation_distribution();
    let weights: Vec<f64> = initiation.iter().map(|&(_, w)| w).collect();
    let picker = WeightedIndex::new(&weights)
        .map_err(|e| SynthError::BadChain(format!("rest row not sampleable: {e}")))?;

    let reserve = (2 * config.max_gesture_ns).max(config.max_entry_ns()) + config.blend_ns;
    let mut entries = Vec::new();
    let mut t = 0u64;
    loop {
        t += rng.gen_range(config.rest_dwell_min_ns..=config.rest_dwell_max_ns);
        if t + reserve > config.sequence_ns || entries.len() + 2 > config.max_gestures {
            break;
        }

        let class = initiation[picker.sample(&mut rng)].0;
        let (lo, hi) = config.duration_range(class);
        let duration_ns = rng.gen_range(lo..=hi);
        let profile_m = *config
            .profile_steepness
            .get(rng.gen_range(0..config.profile_steepness.len()))
            .expect("validated non-empty");
        entries.push(ScriptEntry {
            class,
            start_ns: t,
            duration_ns,
            profile_m,
        });
        t += duration_ns;

        if let Some(ret) = class.return_class() {
            if rng.gen_bool(chain.return_probability(class)) {
                let (rlo, rhi) = config.duration_range(ret);
                let rdur = rng.gen_range(rlo..=rhi);
                let rm = *config
                    .profile_steepness
                    .get(rng.gen_range(0..config.profile_steepness.len()))
                    .expect("validated non-empty");
                entries.push(ScriptEntry {
                    class: ret,
                    start_ns: t,
                    duration_ns: rdur,
                    profile_m: rm,
                });
                t += rdur;
                continue;
            }
        }
        // No return: leave room for the pose to blend back to rest.
        t += config.blend_ns;
    }

    GestureScript::new(entries, config.sequence_ns)
}

/// Rescaled sigmoid motion profile.
///
/// `S(x) = 1/(1+e^(−m(2x−1)))`, shifted and scaled so progress(0) = 0 and
/// progress(1) = 1.
pub fn sigmoid_profile(t_norm: f64, m: f64) -> f64 {
    let s = |x: f64| 1.0 / (1.0 + (-m * (2.0 * x - 1.0)).exp());
    let s0 = s(0.0);
    let s1 = s(1.0);
    (s(t_norm) - s0) / (s1 - s0)
}
