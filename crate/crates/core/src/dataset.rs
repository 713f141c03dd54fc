//! Labelled collections, stratified splitting and class balancing.

use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::synth::{Transient, NUM_CLASSES};

/// An ordered collection of transients over `num_classes` classes.
///
/// Individual classes may be empty (a small class can contribute nothing to a
/// 20% split); [`class_counts`] reports that as an error for callers that
/// need every class present.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    items: Vec<Transient>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(items: Vec<Transient>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(t) = items
            .iter()
            .find(|t| t.label == 0 || t.label as usize > num_classes)
        {
            return Err(Error::Input(format!(
                "item {} has label {} outside 1..={num_classes}",
                t.id, t.label
            )));
        }
        Ok(LabeledDataset { items, num_classes })
    }

    /// Dataset over the default eight classes.
    pub fn with_default_classes(items: Vec<Transient>) -> Result<Self> {
        Self::new(items, NUM_CLASSES)
    }

    pub fn items(&self) -> &[Transient] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Transient> {
        self.items
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Histogram of labels, indexed by `class_id - 1`. Empty classes read 0.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for t in &self.items {
            counts[t.class_index()] += 1;
        }
        counts
    }

    pub fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|t| t.id).collect()
    }

    /// Concatenate two datasets over the same classes (train + validation).
    pub fn merged(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.num_classes != other.num_classes {
            return Err(Error::Config("cannot merge datasets with different class counts".into()));
        }
        let mut items = self.items.clone();
        items.extend(other.items.iter().cloned());
        Ok(LabeledDataset { items, num_classes: self.num_classes })
    }
}

/// Per-class counts `L`. Errors if any class has no items.
pub fn class_counts(data: &LabeledDataset) -> Result<Vec<usize>> {
    let counts = data.histogram();
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {} has no samples", i + 1)));
    }
    Ok(counts)
}

/// Train / validation / test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec { fractions: [train, validation, test], seed };
        spec.validate()?;
        Ok(spec)
    }

    /// The usual 60/20/20 split.
    pub fn standard(seed: u64) -> Self {
        SplitSpec { fractions: [0.6, 0.2, 0.2], seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::Config(format!(
                "split fractions must each lie in (0, 1): {:?}",
                self.fractions
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// (train, validation, test) sizes for a class of `n` items.
    ///
    /// Test gets `floor(n * f_test)`, test and validation together get
    /// `floor(n * (f_test + f_val))`, train takes the remainder. Every set
    /// then lands within one item of its exact share.
    pub fn class_sizes(&self, n: usize) -> (usize, usize, usize) {
        // Guards products like 0.29 * 100 = 28.999999999999996.
        let floor = |x: f64| (x + 1e-9).floor() as usize;
        let [_, f_val, f_test] = self.fractions;
        let n_test = floor(n as f64 * f_test).min(n);
        let n_held = floor(n as f64 * (f_test + f_val)).clamp(n_test, n);
        (n - n_held, n_held - n_test, n_test)
    }
}

/// Split each class by the fractions in `spec`, then shuffle each set.
pub fn stratified_split(
    data: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let counts = data.histogram();
    if let Some((i, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 3) {
        return Err(Error::Stratification { class: i + 1, count: c });
    }
    let mut sets: [Vec<Transient>; 3] = Default::default();
    for class in 0..data.num_classes {
        let mut members: Vec<&Transient> =
            data.items.iter().filter(|t| t.class_index() == class).collect();
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[stream::SPLIT, class as u64]));
        members.shuffle(&mut rng);
        let (_, n_val, n_test) = spec.class_sizes(members.len());
        for (k, t) in members.into_iter().enumerate() {
            let set = if k < n_test {
                2
            } else if k < n_test + n_val {
                1
            } else {
                0
            };
            sets[set].push(t.clone());
        }
    }
    let [mut train, mut val, mut test] = sets;
    for (tag, set) in [&mut train, &mut val, &mut test].into_iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[stream::SPLIT, 1000 + tag as u64]));
        set.shuffle(&mut rng);
    }
    let m = data.num_classes;
    Ok((
        LabeledDataset { items: train, num_classes: m },
        LabeledDataset { items: val, num_classes: m },
        LabeledDataset { items: test, num_classes: m },
    ))
}

/// Reduce every class to the size of the smallest one by uniform sampling
/// without replacement. Surviving items keep their relative order.
pub fn balance_by_downsampling(data: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    if data.is_empty() {
        return Err(Error::Data("cannot balance an empty dataset".into()));
    }
    let counts = class_counts(data)?;
    let target = *counts.iter().min().expect("at least two classes");
    let mut keep = vec![false; data.items.len()];
    for class in 0..data.num_classes {
        let positions: Vec<usize> = data
            .items
            .iter()
            .enumerate()
            .filter(|(_, t)| t.class_index() == class)
            .map(|(i, _)| i)
            .collect();
        if positions.len() == target {
            positions.iter().for_each(|&p| keep[p] = true);
            continue;
        }
        let mut rng = rng_from_seed(derive_seed(seed, &[stream::BALANCE, class as u64]));
        for k in index::sample(&mut rng, positions.len(), target) {
            keep[positions[k]] = true;
        }
    }
    let items = data
        .items
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(t, _)| t.clone())
        .collect();
    Ok(LabeledDataset { items, num_classes: data.num_classes })
}
