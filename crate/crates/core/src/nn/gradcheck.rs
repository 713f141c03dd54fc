//! Finite-difference gradient checking.

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use super::model::{batch_loss, batch_loss_and_grad, Classifier};
use crate::error::{Error, Result};
use crate::loss::ClassWeights;
use crate::rng::{derive_seed, rng_from_seed, stream};

pub const MAX_CHECK_PARAMS: usize = 5000;
pub const MAX_CHECK_BATCH: usize = 4;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check a random subset of this many parameters instead of all.
    pub samples: Option<usize>,
    /// Tensors left out of the check (frozen layers).
    pub exclude: Vec<String>,
    /// Fault injection: zero the analytic gradient of this tensor.
    pub zero_grad: Option<String>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, samples: None, exclude: Vec::new(), zero_grad: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked_tensors: Vec<String>,
}

/// `|a - n| / max(|a| + |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compare analytic gradients of the mean weighted loss with central
/// differences `(L(θ+ε) − L(θ−ε)) / 2ε` and return the worst relative error.
pub fn grad_check<C: Classifier>(
    model: &C,
    inputs: &[&[f64]],
    classes: &[usize],
    weights: &ClassWeights,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if model.num_params() > MAX_CHECK_PARAMS {
        return Err(Error::Config(format!(
            "gradient check limited to {MAX_CHECK_PARAMS} parameters, model has {}",
            model.num_params()
        )));
    }
    if inputs.is_empty() || inputs.len() > MAX_CHECK_BATCH {
        return Err(Error::Config(format!(
            "gradient check batch must have 1..={MAX_CHECK_BATCH} samples"
        )));
    }
    if !(opts.eps > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    for name in opts.exclude.iter().chain(opts.zero_grad.iter()) {
        if model.tensor(name).is_none() {
            return Err(Error::Config(format!("unknown tensor {name}")));
        }
    }

    let (_, mut grads) = batch_loss_and_grad(model, inputs, classes, weights)?;
    if let Some(name) = &opts.zero_grad {
        for (n, t) in grads.tensors_mut() {
            if n == name {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    // Flat (tensor, index) list of candidate parameters.
    let mut candidates = Vec::new();
    let mut checked_tensors = Vec::new();
    for (k, (name, t)) in model.tensors().into_iter().enumerate() {
        if opts.exclude.iter().any(|e| e == name) {
            continue;
        }
        checked_tensors.push(name.to_string());
        candidates.extend((0..t.len()).map(|i| (k, i)));
    }
    if let Some(n) = opts.samples {
        if n > candidates.len() {
            return Err(Error::Config(format!(
                "asked to check {n} parameters, only {} available",
                candidates.len()
            )));
        }
        let mut rng = rng_from_seed(derive_seed(opts.seed, &[stream::GRADCHECK]));
        let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), n).into_vec();
        picked.sort_unstable();
        candidates = picked.into_iter().map(|p| candidates[p]).collect();
    }

    let grad_tensors = grads.tensors();
    let results = candidates
        .par_iter()
        .map(|&(k, i)| -> Result<(f64, usize, usize, f64, f64)> {
            let eval = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                m.tensors_mut()[k].1.data[i] += delta;
                batch_loss(&m, inputs, classes, weights)
            };
            let numeric = (eval(opts.eps)? - eval(-opts.eps)?) / (2.0 * opts.eps);
            let analytic = grad_tensors[k].1.data[i];
            Ok((relative_error(analytic, numeric), k, i, analytic, numeric))
        })
        .collect::<Result<Vec<_>>>()?;

    let names: Vec<&str> = model.tensors().iter().map(|(n, _)| *n).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: results.len(),
        worst_tensor: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked_tensors,
    };
    for (err, k, i, a, n) in results {
        if err > report.max_rel_error || report.worst_tensor.is_empty() {
            report.max_rel_error = err;
            report.worst_tensor = names[k].to_string();
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    Ok(report)
}
