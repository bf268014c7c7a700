//! Feature maps and transform-averaged features.
//!
//! A feature map embeds inputs into the space where linear models are
//! trained. Averaging the map over a transform's output distribution gives
//! the first-order surrogate features `E[phi(T(x))]`; Gram matrices of those
//! averaged features drive both the surrogate objectives and the
//! training-free alignment diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};
use crate::sampler::{Expectation, TransformSampler};

/// Random Fourier features approximating a Gaussian kernel of the given
/// bandwidth: `phi(x) = sqrt(2 / m) cos(W x + b)` with `W` entries drawn
/// from `N(0, 1 / bandwidth^2)` and phases uniform on `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFourierMap {
    w: DMatrix<f64>,
    b: DVector<f64>,
    bandwidth: f64,
    seed: u64,
}

impl RandomFourierMap {
    pub fn new(input_dim: usize, output_dim: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "feature map needs positive dimensions, got {input_dim} -> {output_dim}"
            )));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be strictly positive, got {bandwidth}"
            )));
        }
        let mut rng = seeded_rng(seed);
        let mut w = DMatrix::zeros(output_dim, input_dim);
        for i in 0..output_dim {
            for j in 0..input_dim {
                w[(i, j)] = rng.sample::<f64, _>(StandardNormal) / bandwidth;
            }
        }
        let b = DVector::from_fn(output_dim, |_, _| {
            rng.random::<f64>() * 2.0 * std::f64::consts::PI
        });
        Ok(RandomFourierMap {
            w,
            b,
            bandwidth,
            seed,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// A deterministic feature embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// The raw input, unchanged.
    Identity { dim: usize },
    RandomFourier(RandomFourierMap),
}

impl FeatureMap {
    pub fn random_fourier(
        input_dim: usize,
        output_dim: usize,
        bandwidth: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(FeatureMap::RandomFourier(RandomFourierMap::new(
            input_dim, output_dim, bandwidth, seed,
        )?))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::RandomFourier(m) => m.w.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::RandomFourier(m) => m.w.nrows(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature map takes inputs of dimension {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        match self {
            FeatureMap::Identity { .. } => Ok(DVector::from_row_slice(x)),
            FeatureMap::RandomFourier(m) => {
                let mut out = &m.w * DVector::from_row_slice(x) + &m.b;
                let scale = (2.0 / m.w.nrows() as f64).sqrt();
                for v in out.iter_mut() {
                    *v = scale * v.cos();
                }
                Ok(out)
            }
        }
    }
}

/// Features averaged over a transform's output distribution,
/// `E[phi(T(x))]` — exactly via the transform's finite support, or by Monte
/// Carlo with the configured sample count and seed.
pub fn averaged_features(
    sampler: &TransformSampler,
    map: &FeatureMap,
    x: &[f64],
    expectation: &Expectation,
) -> Result<DVector<f64>> {
    match expectation {
        Expectation::Exact => {
            let support = sampler.support(x)?;
            let mut acc = DVector::zeros(map.output_dim());
            for atom in &support {
                acc += map.eval(&atom.value)? * atom.probability;
            }
            Ok(acc)
        }
        Expectation::MonteCarlo { samples, seed } => {
            if *samples == 0 {
                return Err(Error::InvalidParameter(
                    "Monte Carlo averaging needs at least one sample".into(),
                ));
            }
            sampler.validate()?;
            let mut rng = seeded_rng(*seed);
            let mut acc = DVector::zeros(map.output_dim());
            for _ in 0..*samples {
                let z = sampler.sample_with(x, &mut rng);
                acc += map.eval(&z)?;
            }
            Ok(acc / *samples as f64)
        }
    }
}

/// Gram matrix of transform-averaged features over a set of inputs.
///
/// Monte Carlo expectations give point `i` the derived seed
/// `derive_seed(seed, i)`, so results are identical for any worker count.
/// The result is exactly symmetric: entries are computed once per pair and
/// mirrored.
pub fn averaged_kernel(
    inputs: &[Vec<f64>],
    sampler: &TransformSampler,
    map: &FeatureMap,
    expectation: &Expectation,
) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(Error::InvalidParameter(
            "Gram matrix needs at least one input".into(),
        ));
    }
    let features: Vec<DVector<f64>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let point_expectation = match expectation {
                Expectation::Exact => Expectation::Exact,
                Expectation::MonteCarlo { samples, seed } => Expectation::MonteCarlo {
                    samples: *samples,
                    seed: derive_seed(*seed, i as u64),
                },
            };
            averaged_features(sampler, map, x, &point_expectation)
        })
        .collect::<Result<_>>()?;

    let n = features.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = features[i].dot(&features[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    Ok(gram)
}
