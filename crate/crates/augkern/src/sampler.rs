//! Stochastic transforms on raw feature vectors.
//!
//! A [`TransformSampler`] draws a transformed copy `z` of an input vector
//! `x`. Samplers are pure: the same input and seed always produce the same
//! output. Kinds with a finite parameter grid also expose their full support
//! as an explicit weighted atom list via [`TransformSampler::support`], which
//! is what the exact-expectation objective and diagnostic paths consume.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Cap on the number of atoms a support enumeration may produce.
pub const MAX_SUPPORT_ATOMS: usize = 100_000;

/// One atom of a finite transform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportAtom {
    pub value: Vec<f64>,
    pub probability: f64,
}

/// How a declared continuous noise law is reduced to a finite support.
///
/// A declared discretization replaces the continuous law for *both* sampling
/// and support enumeration, so Monte-Carlo and exact expectations agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum NoiseDiscretization {
    /// Two atoms `x + eps*1` and `x - eps*1`, each with probability 1/2.
    TwoPointShared { epsilon: f64 },
    /// Independent `±eps` per coordinate: `2^d` equally weighted atoms whose
    /// displacement covariance is exactly `eps^2 I`.
    TwoPointPerAxis { epsilon: f64 },
}

/// Expectation strategy for quantities of the form `E[f(z)]` under a sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Expectation {
    /// Enumerate the full support and sum exactly.
    Exact,
    /// Average over `samples` draws from a generator seeded with `seed`.
    MonteCarlo { samples: usize, seed: u64 },
}

/// A stochastic transform of feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum TransformSampler {
    /// Returns the input unchanged.
    Identity,
    /// Adds noise with scale `sigma`: isotropic Gaussian by default, or the
    /// declared finite discretization when one is given.
    AdditiveNoise {
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        discretization: Option<NoiseDiscretization>,
    },
    /// Rotates the coordinates of `x` by one of the given offsets, chosen
    /// with the matching weight.
    CyclicShift { offsets: Vec<i64>, weights: Vec<f64> },
    /// Multiplies `x` by a factor from `[min_factor, max_factor]`: uniform
    /// when `grid` is absent, or one of `grid` evenly spaced factors (each
    /// with probability `1/grid`) when present.
    Scale {
        min_factor: f64,
        max_factor: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<usize>,
    },
    /// Deterministic cyclic moving average with the given window size.
    MovingAverageBlur { window: usize },
    /// Applies the stages in order; the support is the product enumeration.
    Composite { stages: Vec<TransformSampler> },
}

impl TransformSampler {
    /// Checks parameters without touching any data.
    pub fn validate(&self) -> Result<()> {
        match self {
            TransformSampler::Identity => Ok(()),
            TransformSampler::AdditiveNoise {
                sigma,
                discretization,
            } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "noise sigma must be positive, got {sigma}"
                    )));
                }
                if let Some(
                    NoiseDiscretization::TwoPointShared { epsilon }
                    | NoiseDiscretization::TwoPointPerAxis { epsilon },
                ) = discretization
                {
                    if !(*epsilon > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "noise discretization epsilon must be positive, got {epsilon}"
                        )));
                    }
                }
                Ok(())
            }
            TransformSampler::CyclicShift { offsets, weights } => {
                if offsets.is_empty() || offsets.len() != weights.len() {
                    return Err(Error::InvalidParameter(format!(
                        "cyclic shift needs matching offsets/weights, got {} and {}",
                        offsets.len(),
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::InvalidParameter(
                        "cyclic shift weights must be nonnegative".into(),
                    ));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "cyclic shift weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            TransformSampler::Scale {
                min_factor,
                max_factor,
                grid,
            } => {
                if !min_factor.is_finite() || !max_factor.is_finite() || min_factor > max_factor {
                    return Err(Error::InvalidParameter(format!(
                        "scale range [{min_factor}, {max_factor}] is invalid"
                    )));
                }
                if let Some(0) = grid {
                    return Err(Error::InvalidParameter(
                        "scale grid must have at least one point".into(),
                    ));
                }
                Ok(())
            }
            TransformSampler::MovingAverageBlur { window } => {
                if *window == 0 {
                    return Err(Error::InvalidParameter(
                        "blur window must be at least 1".into(),
                    ));
                }
                Ok(())
            }
            TransformSampler::Composite { stages } => {
                if stages.is_empty() {
                    return Err(Error::InvalidParameter(
                        "composite sampler needs at least one stage".into(),
                    ));
                }
                stages.iter().try_for_each(TransformSampler::validate)
            }
        }
    }

    /// Draws one transformed copy of `x`; the same `x` and `seed` always
    /// yield the same output.
    pub fn sample(&self, x: &[f64], seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = seeded_rng(seed);
        Ok(self.sample_with(x, &mut rng))
    }

    /// Draws from an already positioned generator (used by composites and by
    /// Monte-Carlo loops that consume one stream).
    pub(crate) fn sample_with(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            TransformSampler::Identity => x.to_vec(),
            TransformSampler::AdditiveNoise {
                sigma,
                discretization,
            } => match discretization {
                None => x
                    .iter()
                    .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                Some(NoiseDiscretization::TwoPointShared { epsilon }) => {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    x.iter().map(|v| v + sign * epsilon).collect()
                }
                Some(NoiseDiscretization::TwoPointPerAxis { epsilon }) => x
                    .iter()
                    .map(|v| {
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        v + sign * epsilon
                    })
                    .collect(),
            },
            TransformSampler::CyclicShift { offsets, weights } => {
                let pick = sample_weighted_index(weights, rng);
                rotate(x, offsets[pick])
            }
            TransformSampler::Scale {
                min_factor,
                max_factor,
                grid,
            } => {
                let factor = match grid {
                    Some(g) => {
                        let factors = scale_factors(*min_factor, *max_factor, *g);
                        factors[rng.random_range(0..*g)]
                    }
                    None => {
                        if min_factor == max_factor {
                            *min_factor
                        } else {
                            rng.random_range(*min_factor..*max_factor)
                        }
                    }
                };
                x.iter().map(|v| v * factor).collect()
            }
            TransformSampler::MovingAverageBlur { window } => blur(x, *window),
            TransformSampler::Composite { stages } => {
                let mut z = x.to_vec();
                for stage in stages {
                    z = stage.sample_with(&z, rng);
                }
                z
            }
        }
    }

    /// Enumerates the transform distribution at `x` as weighted atoms.
    ///
    /// Atom order is deterministic: nested iteration over parameter indices,
    /// first stage outermost for composites. Probabilities sum to 1 within
    /// 1e-12. Continuous-parameter kinds without a declared discretization
    /// (Gaussian noise, ungridded scale) return
    /// [`Error::SupportUnavailable`]; enumerations larger than
    /// [`MAX_SUPPORT_ATOMS`] return [`Error::SupportTooLarge`].
    pub fn support(&self, x: &[f64]) -> Result<Vec<SupportAtom>> {
        self.validate()?;
        let atoms = self.support_inner(x)?;
        debug_assert!({
            let total: f64 = atoms.iter().map(|a| a.probability).sum();
            (total - 1.0).abs() <= 1e-12
        });
        Ok(atoms)
    }

    fn support_inner(&self, x: &[f64]) -> Result<Vec<SupportAtom>> {
        match self {
            TransformSampler::Identity => Ok(vec![SupportAtom {
                value: x.to_vec(),
                probability: 1.0,
            }]),
            TransformSampler::AdditiveNoise {
                discretization, ..
            } => match discretization {
                None => Err(Error::SupportUnavailable(
                    "additive noise has no declared discretization".into(),
                )),
                Some(NoiseDiscretization::TwoPointShared { epsilon }) => Ok(vec![
                    SupportAtom {
                        value: x.iter().map(|v| v + epsilon).collect(),
                        probability: 0.5,
                    },
                    SupportAtom {
                        value: x.iter().map(|v| v - epsilon).collect(),
                        probability: 0.5,
                    },
                ]),
                Some(NoiseDiscretization::TwoPointPerAxis { epsilon }) => {
                    let d = x.len();
                    if d >= MAX_SUPPORT_ATOMS.ilog2() as usize {
                        return Err(Error::SupportTooLarge {
                            atoms: usize::MAX,
                            cap: MAX_SUPPORT_ATOMS,
                        });
                    }
                    let count = 1usize << d;
                    if count > MAX_SUPPORT_ATOMS {
                        return Err(Error::SupportTooLarge {
                            atoms: count,
                            cap: MAX_SUPPORT_ATOMS,
                        });
                    }
                    let p = 1.0 / count as f64;
                    let mut atoms = Vec::with_capacity(count);
                    for mask in 0..count {
                        let value = x
                            .iter()
                            .enumerate()
                            .map(|(j, v)| {
                                if mask >> j & 1 == 0 {
                                    v + epsilon
                                } else {
                                    v - epsilon
                                }
                            })
                            .collect();
                        atoms.push(SupportAtom {
                            value,
                            probability: p,
                        });
                    }
                    Ok(atoms)
                }
            },
            TransformSampler::CyclicShift { offsets, weights } => Ok(offsets
                .iter()
                .zip(weights.iter())
                .map(|(&o, &w)| SupportAtom {
                    value: rotate(x, o),
                    probability: w,
                })
                .collect()),
            TransformSampler::Scale {
                min_factor,
                max_factor,
                grid,
            } => match grid {
                None => Err(Error::SupportUnavailable(
                    "scale over a continuous range has no grid parameter".into(),
                )),
                Some(g) => {
                    let p = 1.0 / *g as f64;
                    Ok(scale_factors(*min_factor, *max_factor, *g)
                        .into_iter()
                        .map(|f| SupportAtom {
                            value: x.iter().map(|v| v * f).collect(),
                            probability: p,
                        })
                        .collect())
                }
            },
            TransformSampler::MovingAverageBlur { window } => Ok(vec![SupportAtom {
                value: blur(x, *window),
                probability: 1.0,
            }]),
            TransformSampler::Composite { stages } => {
                let mut atoms = vec![SupportAtom {
                    value: x.to_vec(),
                    probability: 1.0,
                }];
                for stage in stages {
                    let mut next = Vec::new();
                    for atom in &atoms {
                        for out in stage.support_inner(&atom.value)? {
                            next.push(SupportAtom {
                                value: out.value,
                                probability: atom.probability * out.probability,
                            });
                            if next.len() > MAX_SUPPORT_ATOMS {
                                return Err(Error::SupportTooLarge {
                                    atoms: next.len(),
                                    cap: MAX_SUPPORT_ATOMS,
                                });
                            }
                        }
                    }
                    atoms = next;
                }
                Ok(atoms)
            }
        }
    }

    /// Short lowercase name for reports.
    pub fn kind_name(&self) -> &'static str {
        match self {
            TransformSampler::Identity => "identity",
            TransformSampler::AdditiveNoise { .. } => "additive-noise",
            TransformSampler::CyclicShift { .. } => "cyclic-shift",
            TransformSampler::Scale { .. } => "scale",
            TransformSampler::MovingAverageBlur { .. } => "moving-average-blur",
            TransformSampler::Composite { .. } => "composite",
        }
    }
}

/// Evenly spaced factors over `[lo, hi]`; a single-point grid uses the
/// midpoint.
fn scale_factors(lo: f64, hi: f64, grid: usize) -> Vec<f64> {
    if grid == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..grid)
            .map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64)
            .collect()
    }
}

/// Cyclic coordinate rotation: entry `j` of the result is `x[(j - o) mod d]`.
fn rotate(x: &[f64], offset: i64) -> Vec<f64> {
    let d = x.len();
    let o = offset.rem_euclid(d as i64) as usize;
    (0..d).map(|j| x[(j + d - o) % d]).collect()
}

/// Cyclic moving average over a window of the given size centered at each
/// coordinate (one extra trailing element for even windows).
fn blur(x: &[f64], window: usize) -> Vec<f64> {
    let d = x.len() as i64;
    let w = window as i64;
    let lo = -(w - 1) / 2;
    let hi = w / 2;
    (0..d)
        .map(|i| {
            let mut acc = 0.0;
            for o in lo..=hi {
                acc += x[(i + o).rem_euclid(d) as usize];
            }
            acc / w as f64
        })
        .collect()
}

/// Inverse-CDF draw from explicit weights (assumed validated).
fn sample_weighted_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}
