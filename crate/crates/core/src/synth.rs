//! Synthetic transient generator.
//!
//! Each class is described by a [`ClassArchetype`]: a set of ranges from which
//! one transient's parameters are drawn. A transient is a sum of damped
//! sinusoid bursts,
//!
//! ```text
//! s[n] = sum_k A_k * exp(-d * (n - n_k)) * sin(2*pi*f*(n - n_k) + phi_k)   for n >= n_k
//! ```
//!
//! plus white Gaussian noise with standard deviation `noise_floor`. Carrier
//! `f` and damping `d` are drawn once per transient; onset `n_k`, amplitude
//! `A_k` and phase `phi_k` per burst.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};

/// Number of source classes.
pub const NUM_CLASSES: usize = 8;

/// Per-class transient counts of the recorded dataset this generator stands in for.
pub const DEFAULT_CLASS_COUNTS: [usize; NUM_CLASSES] = [662, 543, 5523, 264, 16006, 35932, 3675, 525];

/// Human-readable class descriptions, indexed by `class_id - 1`.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "Compact fluorescent lamp",
    "Power tool",
    "Step-down transformer",
    "Cable",
    "Mechanical relay (700W resistive load)",
    "Mechanical relay (without load)",
    "AC motor (approximately 1 kW)",
    "Small switching power supply",
];

/// Smallest number of transients per class produced by [`scaled_counts`].
pub const MIN_SCALED_COUNT: usize = 3;

/// One labelled waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transient {
    /// Stable identifier (line index when loaded from disk).
    #[serde(skip)]
    pub id: usize,
    #[serde(rename = "class")]
    pub label: u8,
    pub samples: Vec<f64>,
}

impl Transient {
    pub fn new(id: usize, label: u8, samples: Vec<f64>) -> Self {
        Transient { id, label, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Zero-based class index.
    pub fn class_index(&self) -> usize {
        self.label as usize - 1
    }
}

/// Parameter ranges for one source class. All ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassArchetype {
    pub class_id: u8,
    /// Carrier frequency as a fraction of the sample rate, inside (0, 0.5).
    pub carrier_freq_range: (f64, f64),
    /// Exponential decay per sample.
    pub damping_range: (f64, f64),
    pub burst_count_range: (usize, usize),
    pub length_range: (usize, usize),
    pub noise_floor: f64,
    pub amplitude_range: (f64, f64),
    /// Samples between consecutive burst onsets.
    pub gap_range: (usize, usize),
    /// Onset of the first burst.
    pub onset_range: (usize, usize),
}

/// Parameters actually drawn for one burst.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub onset: usize,
    pub amplitude: f64,
    pub phase: f64,
    pub carrier: f64,
    pub damping: f64,
}

impl Burst {
    /// Noise-free contribution of this burst at sample `n`.
    pub fn value_at(&self, n: usize) -> f64 {
        if n < self.onset {
            return 0.0;
        }
        let k = (n - self.onset) as f64;
        self.amplitude * (-self.damping * k).exp() * (2.0 * PI * self.carrier * k + self.phase).sin()
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, class: u8, r: (T, T)) -> Result<()> {
    if r.0 > r.1 {
        return Err(Error::Config(format!(
            "archetype {class}: empty {name} range {:?}..{:?}",
            r.0, r.1
        )));
    }
    Ok(())
}

impl ClassArchetype {
    pub fn validate(&self) -> Result<()> {
        let c = self.class_id;
        if !(1..=NUM_CLASSES as u8).contains(&c) {
            return Err(Error::Config(format!("archetype class id {c} outside 1..=8")));
        }
        check_range("carrier", c, self.carrier_freq_range)?;
        check_range("damping", c, self.damping_range)?;
        check_range("burst count", c, self.burst_count_range)?;
        check_range("length", c, self.length_range)?;
        check_range("amplitude", c, self.amplitude_range)?;
        check_range("gap", c, self.gap_range)?;
        check_range("onset", c, self.onset_range)?;
        let bad = |what: &str| Err(Error::Config(format!("archetype {c}: {what}")));
        if !(self.carrier_freq_range.0 > 0.0 && self.carrier_freq_range.1 < 0.5) {
            return bad("carrier frequency must lie in (0, 0.5)");
        }
        if self.damping_range.0 <= 0.0 || !self.damping_range.1.is_finite() {
            return bad("damping must be positive and finite");
        }
        if self.burst_count_range.0 < 1 {
            return bad("burst count must be at least 1");
        }
        if self.length_range.0 < 500 || self.length_range.1 > 8000 {
            return bad("length range must lie in [500, 8000]");
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return bad("noise floor must be non-negative and finite");
        }
        if self.amplitude_range.0 <= 0.0 || !self.amplitude_range.1.is_finite() {
            return bad("amplitude must be positive and finite");
        }
        let last_onset =
            self.onset_range.1 + (self.burst_count_range.1 - 1) * self.gap_range.1;
        if last_onset >= self.length_range.0 {
            return bad("bursts do not fit inside the shortest transient");
        }
        Ok(())
    }

    /// Draw the per-transient parameters: length and bursts.
    fn draw(&self, rng: &mut Rng) -> (usize, Vec<Burst>) {
        let length = rng.random_range(self.length_range.0..=self.length_range.1);
        let carrier = rng.random_range(self.carrier_freq_range.0..=self.carrier_freq_range.1);
        let damping = rng.random_range(self.damping_range.0..=self.damping_range.1);
        let count = rng.random_range(self.burst_count_range.0..=self.burst_count_range.1);
        let mut onset = rng.random_range(self.onset_range.0..=self.onset_range.1);
        let mut bursts = Vec::with_capacity(count);
        for k in 0..count {
            if k > 0 {
                onset += rng.random_range(self.gap_range.0..=self.gap_range.1);
            }
            let amplitude = rng.random_range(self.amplitude_range.0..=self.amplitude_range.1);
            let phase = rng.random_range(0.0..2.0 * PI);
            bursts.push(Burst { onset, amplitude, phase, carrier, damping });
        }
        (length, bursts)
    }
}

/// Maximum number of redraws when noise swamps the bursts.
const MAX_ATTEMPTS: usize = 64;

/// Generate one transient and the burst parameters it was built from.
pub fn synth_transient_with_bursts(
    archetype: &ClassArchetype,
    seed: u64,
) -> Result<(Transient, Vec<Burst>)> {
    archetype.validate()?;
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, archetype.noise_floor)
        .map_err(|e| Error::Config(format!("noise floor: {e}")))?;
    for _ in 0..MAX_ATTEMPTS {
        let (length, bursts) = archetype.draw(&mut rng);
        let mut samples = vec![0.0; length];
        for b in &bursts {
            for (n, s) in samples.iter_mut().enumerate().skip(b.onset) {
                *s += b.value_at(n);
            }
        }
        if archetype.noise_floor > 0.0 {
            for s in samples.iter_mut() {
                *s += noise.sample(&mut rng);
            }
        }
        let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak > 3.0 * archetype.noise_floor {
            return Ok((Transient::new(0, archetype.class_id, samples), bursts));
        }
    }
    Err(Error::Config(format!(
        "archetype {}: noise floor too high for the burst amplitudes",
        archetype.class_id
    )))
}

/// Generate one transient; a pure function of `(archetype, seed)`.
pub fn synth_transient(archetype: &ClassArchetype, seed: u64) -> Result<Transient> {
    synth_transient_with_bursts(archetype, seed).map(|(t, _)| t)
}

/// The eight built-in class archetypes.
///
/// The ranges are free parameters chosen to give each class a distinct
/// morphology; they make no claim of physical fidelity.
pub fn default_archetypes() -> Vec<ClassArchetype> {
    let a = |class_id,
             carrier_freq_range,
             damping_range,
             burst_count_range,
             length_range,
             gap_range,
             onset_range| ClassArchetype {
        class_id,
        carrier_freq_range,
        damping_range,
        burst_count_range,
        length_range,
        noise_floor: 0.02,
        amplitude_range: (0.5, 1.0),
        gap_range,
        onset_range,
    };
    vec![
        // CFL: regular bursts on a 100 Hz-like envelope.
        a(1, (0.049, 0.051), (0.0005, 0.0008), (4, 6), (3000, 5000), (480, 520), (0, 200)),
        // Power tool: brush sparking, a few irregular bursts.
        a(2, (0.214, 0.216), (0.001, 0.0015), (2, 4), (2000, 4000), (250, 500), (0, 200)),
        // Step-down transformer: one long ring at low frequency.
        a(3, (0.0195, 0.0205), (0.0003, 0.0004), (1, 1), (3000, 6000), (1, 1), (0, 200)),
        // Cable: shaped like an unloaded relay bounce, but in a narrow band
        // inside the relay's carrier range.
        a(4, (0.136, 0.144), (0.0025, 0.004), (2, 3), (1000, 3000), (150, 300), (0, 200)),
        // Relay with load: contact bounce, many short bursts.
        a(5, (0.107, 0.109), (0.002, 0.003), (5, 8), (2500, 5000), (120, 250), (0, 200)),
        // Relay without load: fewer, sharper bounces over a wide band.
        a(6, (0.12, 0.16), (0.0025, 0.004), (2, 3), (1000, 3000), (150, 300), (0, 200)),
        // AC motor: dense commutator bursts.
        a(7, (0.314, 0.316), (0.001, 0.0015), (8, 12), (5000, 8000), (300, 400), (0, 200)),
        // Switching PSU: ringing at the switching harmonic.
        a(8, (0.074, 0.076), (0.0003, 0.0006), (1, 2), (2000, 4000), (700, 1000), (0, 200)),
    ]
}

/// Default class counts multiplied by `scale`, floored, with a minimum of
/// [`MIN_SCALED_COUNT`] per class.
pub fn scaled_counts(scale: f64) -> Result<Vec<usize>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    Ok(DEFAULT_CLASS_COUNTS
        .iter()
        .map(|&c| ((c as f64 * scale).floor() as usize).max(MIN_SCALED_COUNT))
        .collect())
}

/// Generate `counts[i]` transients of class `i + 1` with the default archetypes.
pub fn synth_dataset(counts: &[usize], seed: u64) -> Result<Vec<Transient>> {
    synth_dataset_with(&default_archetypes(), counts, seed)
}

/// Generate a dataset from explicit archetypes. Output is ordered by class,
/// then by index within the class; ids are assigned in that order.
pub fn synth_dataset_with(
    archetypes: &[ClassArchetype],
    counts: &[usize],
    seed: u64,
) -> Result<Vec<Transient>> {
    if counts.is_empty() {
        return Err(Error::Config("empty class counts".into()));
    }
    if counts.len() != archetypes.len() {
        return Err(Error::Config(format!(
            "{} class counts for {} archetypes",
            counts.len(),
            archetypes.len()
        )));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("class {} has a count of zero", i + 1)));
    }
    for a in archetypes {
        a.validate()?;
    }
    let jobs: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(class, &n)| (0..n).map(move |i| (class, i)))
        .collect();
    let mut out = jobs
        .par_iter()
        .map(|&(class, i)| {
            let s = transient_seed(seed, archetypes[class].class_id, i);
            synth_transient(&archetypes[class], s)
        })
        .collect::<Result<Vec<_>>>()?;
    for (id, t) in out.iter_mut().enumerate() {
        t.id = id;
    }
    Ok(out)
}

/// Seed of the `index`-th transient of `class_id` under a dataset seed.
pub fn transient_seed(seed: u64, class_id: u8, index: usize) -> u64 {
    derive_seed(seed, &[stream::SYNTH, class_id as u64, index as u64])
}
