//! Labeled datasets for objective and diagnostic experiments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// A validated labeled dataset of dense inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<i32>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<i32>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidParameter(
                "dataset must contain at least one point".into(),
            ));
        }
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "dataset inputs must have at least one coordinate".into(),
            ));
        }
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "input {i} has dimension {}, expected {dim}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "input {i} contains a non-finite coordinate"
                )));
            }
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> i32 {
        self.labels[i]
    }
}

/// Balanced two-component Gaussian mixture: even points are `+1` around
/// `mean_plus`, odd points are `-1` around `mean_minus`, both isotropic with
/// standard deviation `sigma`.
pub fn gaussian_mixture(
    n: usize,
    mean_plus: &[f64],
    mean_minus: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "mixture needs at least one point".into(),
        ));
    }
    if mean_plus.len() != mean_minus.len() || mean_plus.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "mixture means must share a positive dimension, got {} and {}",
            mean_plus.len(),
            mean_minus.len()
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mixture spread must be nonnegative, got {sigma}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mean = if i % 2 == 0 { mean_plus } else { mean_minus };
        inputs.push(
            mean.iter()
                .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        labels.push(if i % 2 == 0 { 1 } else { -1 });
    }
    Dataset::new(inputs, labels)
}
