//! Raw transient to fixed-length standardized feature vector.
//!
//! The pipeline is align by peak, amplitude-scale the unpadded samples,
//! crop or zero-pad to `T`, then standardize each time step with parameters
//! fitted on the training set only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Transient;

/// Floor applied to per-feature standard deviations before dividing.
pub const SIGMA_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Output length `T`.
    pub length: usize,
    /// Index the largest peak is moved to.
    pub anchor: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { length: 5000, anchor: 100 }
    }
}

/// A preprocessed sample of exactly `T` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedVector {
    #[serde(skip)]
    pub id: usize,
    #[serde(rename = "class")]
    pub label: u8,
    #[serde(rename = "samples")]
    pub values: Vec<f64>,
}

impl FixedVector {
    pub fn class_index(&self) -> usize {
        self.label as usize - 1
    }
}

/// Index of the first sample with the largest magnitude.
pub fn peak_index(samples: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.abs() > samples[best].abs() {
            best = i;
        }
    }
    best
}

/// Shift the waveform so that its peak sits at `anchor`. Length is
/// preserved; samples shifted past either end are dropped and vacated
/// positions are zero.
pub fn align_by_peak(t: &Transient, anchor: usize) -> Transient {
    let n = t.samples.len();
    let peak = peak_index(&t.samples);
    let shift = anchor as isize - peak as isize;
    let samples = (0..n as isize)
        .map(|i| {
            let src = i - shift;
            if src >= 0 && (src as usize) < n {
                t.samples[src as usize]
            } else {
                0.0
            }
        })
        .collect();
    Transient { id: t.id, label: t.label, samples }
}

/// Keep the first `length` samples, zero-padding on the right if shorter.
pub fn crop_pad(t: &Transient, length: usize) -> FixedVector {
    let mut values: Vec<f64> = t.samples.iter().take(length).copied().collect();
    values.resize(length, 0.0);
    FixedVector { id: t.id, label: t.label, values }
}

/// Map samples linearly onto [-1, 1]. A constant input maps to zeros.
pub fn amplitude_scale(samples: &[f64]) -> Vec<f64> {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(hi > lo) {
        return vec![0.0; samples.len()];
    }
    let range = hi - lo;
    samples.iter().map(|&x| 2.0 * (x - lo) / range - 1.0).collect()
}

/// Align, scale and crop/pad one transient. Standardization is separate
/// because it needs fitted parameters.
pub fn preprocess_transient(t: &Transient, cfg: &PreprocessConfig) -> Result<FixedVector> {
    if t.is_empty() {
        return Err(Error::Data(format!("transient {} is empty", t.id)));
    }
    let mut aligned = align_by_peak(t, cfg.anchor);
    aligned.samples = amplitude_scale(&aligned.samples);
    Ok(crop_pad(&aligned, cfg.length))
}

pub fn preprocess_all(items: &[Transient], cfg: &PreprocessConfig) -> Result<Vec<FixedVector>> {
    items.par_iter().map(|t| preprocess_transient(t, cfg)).collect()
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(rename = "T")]
    pub length: usize,
    /// Ids of the items the parameters were computed from.
    #[serde(skip)]
    pub fitted_on: Vec<usize>,
}

/// Fit on training vectors only.
pub fn fit_standardizer(train: &[FixedVector]) -> Result<Standardizer> {
    if train.len() < 2 {
        return Err(Error::Fit(format!(
            "standardizer needs at least 2 training vectors, got {}",
            train.len()
        )));
    }
    let length = train[0].values.len();
    if let Some(v) = train.iter().find(|v| v.values.len() != length) {
        return Err(Error::Shape(format!(
            "vector {} has length {}, expected {length}",
            v.id,
            v.values.len()
        )));
    }
    let n = train.len() as f64;
    let mut mu = vec![0.0; length];
    for v in train {
        for (m, x) in mu.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; length];
    for v in train {
        for ((s, x), m) in var.iter_mut().zip(&v.values).zip(&mu) {
            let d = x - m;
            *s += d * d;
        }
    }
    let sigma = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(Standardizer { mu, sigma, length, fitted_on: train.iter().map(|v| v.id).collect() })
}

impl Standardizer {
    pub fn apply(&self, v: &FixedVector) -> Result<FixedVector> {
        if v.values.len() != self.length {
            return Err(Error::Shape(format!(
                "vector length {} does not match standardizer length {}",
                v.values.len(),
                self.length
            )));
        }
        let values = v
            .values
            .iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(x, (m, s))| (x - m) / s.max(SIGMA_EPS))
            .collect();
        Ok(FixedVector { id: v.id, label: v.label, values })
    }

    pub fn apply_all(&self, vs: &[FixedVector]) -> Result<Vec<FixedVector>> {
        vs.par_iter().map(|v| self.apply(v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.length || self.sigma.len() != self.length {
            return Err(Error::Shape(format!(
                "standardizer arrays ({}, {}) disagree with T = {}",
                self.mu.len(),
                self.sigma.len(),
                self.length
            )));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Fit("negative or NaN sigma".into()));
        }
        Ok(())
    }
}

pub fn apply_standardizer(s: &Standardizer, v: &FixedVector) -> Result<FixedVector> {
    s.apply(v)
}
