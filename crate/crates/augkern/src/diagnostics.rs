//! Training-free diagnostics for choosing between candidate transforms.
//!
//! Two cheap signals predict whether a transform will help a downstream
//! classifier before any training happens. Kernel-target alignment measures
//! how closely the Gram matrix of transform-averaged features matches the
//! ideal same-label indicator kernel; a transform that raises alignment
//! above the raw-feature baseline is worth keeping. Feature invariance
//! measures how far the transform moves points in feature space, and the
//! ratio of that displacement under two feature maps compares how strongly
//! each map has absorbed the transform.

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::{averaged_kernel, FeatureMap};
use crate::rng::{derive_seed, seeded_rng, stream_rng};
use crate::sampler::{Expectation, TransformSampler};

/// Alignment between a Gram matrix and the same-label indicator kernel
/// `K_Y(y, y') = 1{y = y'}`:
/// `<K, K_Y> / sqrt(<K, K> <K_Y, K_Y>)` with Frobenius inner products.
pub fn kernel_target_alignment(gram: &DMatrix<f64>, labels: &[i32]) -> Result<f64> {
    let n = labels.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Gram matrix is {}x{} but there are {n} labels",
            gram.nrows(),
            gram.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("no labels to align against".into()));
    }
    let mut cross = 0.0;
    let mut k_norm2 = 0.0;
    let mut y_norm2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = gram[(i, j)];
            k_norm2 += v * v;
            if labels[i] == labels[j] {
                cross += v;
                y_norm2 += 1.0;
            }
        }
    }
    if k_norm2 <= 0.0 {
        return Err(Error::DegenerateFit(
            "Gram matrix has zero Frobenius norm".into(),
        ));
    }
    Ok(cross / (k_norm2 * y_norm2).sqrt())
}

/// Alignment of the transform-averaged Gram matrix over the full dataset.
pub fn averaged_alignment(
    dataset: &Dataset,
    sampler: &TransformSampler,
    map: &FeatureMap,
    expectation: &Expectation,
) -> Result<f64> {
    let gram = averaged_kernel(dataset.inputs(), sampler, map, expectation)?;
    kernel_target_alignment(&gram, dataset.labels())
}

/// Subsampled alignment estimate with a spread across repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentEstimate {
    pub mean: f64,
    /// Standard error over repeats (sample standard deviation divided by
    /// `sqrt(repeats)`); zero for a single repeat.
    pub stderr: f64,
    pub per_repeat: Vec<f64>,
}

/// Estimates alignment on random subsamples of the dataset.
///
/// Repeat `r` draws `subsample` indices without replacement using the
/// derived stream `stream_rng(seed, r)`, so estimates are reproducible and
/// independent of worker count. Taking `subsample == dataset.len()`
/// reproduces the full-dataset alignment in every repeat.
pub fn alignment_estimate(
    dataset: &Dataset,
    sampler: &TransformSampler,
    map: &FeatureMap,
    expectation: &Expectation,
    subsample: usize,
    repeats: usize,
    seed: u64,
) -> Result<AlignmentEstimate> {
    if subsample < 2 || subsample > dataset.len() {
        return Err(Error::InvalidParameter(format!(
            "subsample size {subsample} must lie in 2..={}",
            dataset.len()
        )));
    }
    if repeats == 0 {
        return Err(Error::InvalidParameter(
            "alignment estimate needs at least one repeat".into(),
        ));
    }
    let mut per_repeat = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut rng = stream_rng(seed, r as u64);
        let mut picked: Vec<usize> =
            sample_indices(&mut rng, dataset.len(), subsample).into_vec();
        picked.sort_unstable();
        let inputs: Vec<Vec<f64>> = picked.iter().map(|&i| dataset.input(i).to_vec()).collect();
        let labels: Vec<i32> = picked.iter().map(|&i| dataset.label(i)).collect();
        let gram = averaged_kernel(&inputs, sampler, map, expectation)?;
        per_repeat.push(kernel_target_alignment(&gram, &labels)?);
    }
    let mean = per_repeat.iter().sum::<f64>() / repeats as f64;
    let stderr = if repeats == 1 {
        0.0
    } else {
        let var = per_repeat
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (repeats - 1) as f64;
        (var / repeats as f64).sqrt()
    };
    Ok(AlignmentEstimate {
        mean,
        stderr,
        per_repeat,
    })
}

/// One ranked transform candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingRow {
    pub name: String,
    pub alignment: f64,
    /// Alignment gain over the raw-feature baseline.
    pub delta: f64,
    /// Whether the candidate strictly improves on the baseline.
    pub recommended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    /// Alignment of the raw (untransformed) feature Gram matrix.
    pub baseline: f64,
    /// Candidates sorted by alignment, best first; ties break by name.
    pub rows: Vec<RankingRow>,
}

/// Ranks candidate transforms by the alignment of their averaged-feature
/// Gram matrices against the labels.
pub fn rank_transformations(
    dataset: &Dataset,
    candidates: &[(String, TransformSampler)],
    map: &FeatureMap,
    expectation: &Expectation,
) -> Result<RankingReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter(
            "ranking needs at least one candidate transform".into(),
        ));
    }
    let baseline = averaged_alignment(
        dataset,
        &TransformSampler::Identity,
        map,
        &Expectation::Exact,
    )?;
    let mut rows = Vec::with_capacity(candidates.len());
    for (name, sampler) in candidates {
        let alignment = averaged_alignment(dataset, sampler, map, expectation)?;
        rows.push(RankingRow {
            name: name.clone(),
            alignment,
            delta: alignment - baseline,
            recommended: alignment > baseline,
        });
    }
    rows.sort_by(|x, y| {
        y.alignment
            .total_cmp(&x.alignment)
            .then_with(|| x.name.cmp(&y.name))
    });
    Ok(RankingReport { baseline, rows })
}

/// Total feature displacement a transform causes over the dataset:
/// `sum_i E[ |phi(x_i) - phi(T(x_i))|^2 / m ]` with `m` the feature
/// dimension (not averaged over points).
pub fn feature_invariance(
    dataset: &Dataset,
    sampler: &TransformSampler,
    map: &FeatureMap,
    expectation: &Expectation,
) -> Result<f64> {
    let m = map.output_dim() as f64;
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let x = dataset.input(i);
        let phi_x = map.eval(x)?;
        match expectation {
            Expectation::Exact => {
                for atom in sampler.support(x)? {
                    let diff = map.eval(&atom.value)? - &phi_x;
                    total += atom.probability * diff.norm_squared() / m;
                }
            }
            Expectation::MonteCarlo { samples, seed } => {
                if *samples == 0 {
                    return Err(Error::InvalidParameter(
                        "Monte Carlo invariance needs at least one sample".into(),
                    ));
                }
                sampler.validate()?;
                let mut rng = seeded_rng(derive_seed(*seed, i as u64));
                let mut acc = 0.0;
                for _ in 0..*samples {
                    let z = sampler.sample_with(x, &mut rng);
                    let diff = map.eval(&z)? - &phi_x;
                    acc += diff.norm_squared() / m;
                }
                total += acc / *samples as f64;
            }
        }
    }
    Ok(total)
}

/// Ratio of feature displacements under two maps for the same transform:
/// `invariance(map_a) / invariance(map_b)`. A ratio below one means
/// `map_a` has absorbed more of the transform than `map_b`. Fails when the
/// denominator displacement is zero (e.g. the identity transform), where
/// the ratio is undefined.
pub fn feature_invariance_ratio(
    dataset: &Dataset,
    sampler: &TransformSampler,
    map_a: &FeatureMap,
    map_b: &FeatureMap,
    expectation: &Expectation,
) -> Result<f64> {
    let denominator = feature_invariance(dataset, sampler, map_b, expectation)?;
    if denominator <= 0.0 {
        return Err(Error::DegenerateFit(
            "reference feature displacement is zero; the invariance ratio is undefined".into(),
        ));
    }
    Ok(feature_invariance(dataset, sampler, map_a, expectation)? / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_mixture;
    use crate::sampler::NoiseDiscretization;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn alignment_hand_values() {
        let labels = [1, 1, -1, -1];
        // The indicator kernel itself (block-diagonal ones) aligns perfectly.
        let blocks = DMatrix::from_fn(4, 4, |i, j| if (i < 2) == (j < 2) { 1.0 } else { 0.0 });
        assert_abs_diff_eq!(
            kernel_target_alignment(&blocks, &labels).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        // All-ones: cross sum 8, norms 16 and 8, giving 8 / sqrt(128).
        let ones = DMatrix::from_element(4, 4, 1.0);
        assert_abs_diff_eq!(
            kernel_target_alignment(&ones, &labels).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        // Mass only on cross-label pairs is orthogonal to the target.
        let anti = DMatrix::from_fn(4, 4, |i, j| if (i < 2) == (j < 2) { 0.0 } else { 1.0 });
        assert_abs_diff_eq!(
            kernel_target_alignment(&anti, &labels).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        // Errors: shape mismatch, empty, zero matrix.
        assert!(kernel_target_alignment(&blocks, &[1, -1]).is_err());
        assert!(kernel_target_alignment(&DMatrix::zeros(0, 0), &[]).is_err());
        let zero = DMatrix::zeros(2, 2);
        assert!(matches!(
            kernel_target_alignment(&zero, &[1, -1]),
            Err(Error::DegenerateFit(_))
        ));
    }

    proptest! {
        #[test]
        fn alignment_is_scale_invariant_and_bounded(
            entries in proptest::collection::vec(0.05f64..2.0, 16),
            scale in 0.1f64..50.0,
        ) {
            let mut k = DMatrix::from_fn(4, 4, |i, j| entries[i * 4 + j]);
            k = (&k + k.transpose()) * 0.5;
            let labels = [1, -1, 1, -1];
            let a1 = kernel_target_alignment(&k, &labels).unwrap();
            let a2 = kernel_target_alignment(&(&k * scale), &labels).unwrap();
            prop_assert!((a1 - a2).abs() < 1e-12);
            // Entrywise-nonnegative Gram against a nonnegative target.
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a1));
        }
    }

    #[test]
    fn invariance_of_shared_two_point_noise() {
        // Identity features, one point, shared-sign noise: every atom sits
        // at squared distance d * epsilon^2, normalized by d to epsilon^2.
        let data = crate::data::Dataset::new(vec![vec![1.0, 2.0]], vec![1]).unwrap();
        let sampler = TransformSampler::AdditiveNoise {
            sigma: 0.5,
            discretization: Some(NoiseDiscretization::TwoPointShared { epsilon: 0.5 }),
        };
        let map = FeatureMap::Identity { dim: 2 };
        let delta = feature_invariance(&data, &sampler, &map, &Expectation::Exact).unwrap();
        assert_abs_diff_eq!(delta, 0.25, epsilon = 1e-15);
        // Identity transform moves nothing.
        let still =
            feature_invariance(&data, &TransformSampler::Identity, &map, &Expectation::Exact)
                .unwrap();
        assert_eq!(still, 0.0);
    }

    #[test]
    fn invariance_ratio_compares_maps() {
        let data = gaussian_mixture(6, &[1.0, 0.0], &[-1.0, 0.0], 0.3, 5).unwrap();
        let sampler = TransformSampler::AdditiveNoise {
            sigma: 0.4,
            discretization: Some(NoiseDiscretization::TwoPointShared { epsilon: 0.4 }),
        };
        let identity = FeatureMap::Identity { dim: 2 };
        let fourier = FeatureMap::random_fourier(2, 64, 1.5, 7).unwrap();
        // Same map above and below cancels exactly.
        let same = feature_invariance_ratio(
            &data, &sampler, &fourier, &fourier, &Expectation::Exact,
        )
        .unwrap();
        assert_eq!(same, 1.0);
        // Different maps give a finite positive ratio.
        let mixed = feature_invariance_ratio(
            &data, &sampler, &fourier, &identity, &Expectation::Exact,
        )
        .unwrap();
        assert!(mixed.is_finite() && mixed > 0.0);
        // The identity transform zeroes the denominator.
        assert!(matches!(
            feature_invariance_ratio(
                &data,
                &TransformSampler::Identity,
                &fourier,
                &identity,
                &Expectation::Exact,
            ),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn invariance_grows_with_noise() {
        let data = gaussian_mixture(10, &[1.0, 0.0], &[-1.0, 0.0], 0.3, 5).unwrap();
        let map = FeatureMap::Identity { dim: 2 };
        let mut last = 0.0;
        for epsilon in [0.1, 0.2, 0.4, 0.8] {
            let sampler = TransformSampler::AdditiveNoise {
                sigma: epsilon,
                discretization: Some(NoiseDiscretization::TwoPointPerAxis { epsilon }),
            };
            let delta =
                feature_invariance(&data, &sampler, &map, &Expectation::Exact).unwrap();
            assert!(
                delta > last,
                "displacement should grow with noise: {delta} after {last}"
            );
            // Per-dimension normalization makes this n * epsilon^2 exactly.
            assert_abs_diff_eq!(delta, 10.0 * epsilon * epsilon, epsilon = 1e-12);
            last = delta;
        }
    }

    #[test]
    fn estimate_is_deterministic() {
        let data = gaussian_mixture(24, &[2.0, -2.0], &[-2.0, 2.0], 0.5, 11).unwrap();
        let map = FeatureMap::random_fourier(2, 48, 2.0, 3).unwrap();
        let sampler = TransformSampler::AdditiveNoise {
            sigma: 0.3,
            discretization: Some(NoiseDiscretization::TwoPointShared { epsilon: 0.3 }),
        };
        let a = alignment_estimate(&data, &sampler, &map, &Expectation::Exact, 12, 4, 99).unwrap();
        let b = alignment_estimate(&data, &sampler, &map, &Expectation::Exact, 12, 4, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_repeat.len(), 4);
        assert!(a.mean.abs() <= 1.0 + 1e-12);
        assert!(a.stderr >= 0.0);

        let single =
            alignment_estimate(&data, &sampler, &map, &Expectation::Exact, 12, 1, 99).unwrap();
        assert_eq!(single.stderr, 0.0);
        assert!(alignment_estimate(&data, &sampler, &map, &Expectation::Exact, 1, 2, 9).is_err());
        assert!(alignment_estimate(&data, &sampler, &map, &Expectation::Exact, 25, 2, 9).is_err());
    }

    #[test]
    fn full_subsample_reproduces_exact_alignment() {
        let data = gaussian_mixture(16, &[1.0, -1.0], &[-1.0, 1.0], 0.4, 17).unwrap();
        let map = FeatureMap::random_fourier(2, 32, 1.0, 13).unwrap();
        let sampler = TransformSampler::Identity;
        let full = averaged_alignment(&data, &sampler, &map, &Expectation::Exact).unwrap();
        let estimate = alignment_estimate(
            &data,
            &sampler,
            &map,
            &Expectation::Exact,
            data.len(),
            1,
            123,
        )
        .unwrap();
        assert_eq!(estimate.mean, full);
    }

    #[test]
    fn ranking_flags_harmful_swap() {
        // Means sit at (2, -2) and (-2, 2); swapping coordinates maps each
        // class onto the other, which destroys alignment. The identity
        // transform reproduces the baseline bit for bit.
        let data = gaussian_mixture(30, &[2.0, -2.0], &[-2.0, 2.0], 0.4, 21).unwrap();
        let map = FeatureMap::random_fourier(2, 96, 2.0, 5).unwrap();
        let candidates = vec![
            ("identity".to_string(), TransformSampler::Identity),
            (
                "swap".to_string(),
                TransformSampler::CyclicShift {
                    offsets: vec![0, 1],
                    weights: vec![0.5, 0.5],
                },
            ),
        ];
        let report =
            rank_transformations(&data, &candidates, &map, &Expectation::Exact).unwrap();
        let identity = report.rows.iter().find(|r| r.name == "identity").unwrap();
        let swap = report.rows.iter().find(|r| r.name == "swap").unwrap();
        assert_eq!(identity.delta, 0.0);
        assert!(!identity.recommended);
        assert!(swap.delta < 0.0, "coordinate swap should hurt alignment");
        assert!(!swap.recommended);
        assert_eq!(report.rows[0].name, "identity");
        // Rows are sorted by alignment, best first.
        assert!(report.rows[0].alignment >= report.rows[1].alignment);
    }

    #[test]
    fn ranking_rewards_denoising_on_replicated_data() {
        // Classes are tight clusters blurred by replicate jitter; averaging
        // over modest symmetric noise smooths the features of same-class
        // replicates together and helps alignment.
        let data = gaussian_mixture(40, &[1.0, 0.0], &[-1.0, 0.0], 0.35, 33).unwrap();
        let map = FeatureMap::random_fourier(2, 128, 0.6, 9).unwrap();
        let candidates = vec![(
            "smooth".to_string(),
            TransformSampler::AdditiveNoise {
                sigma: 0.35,
                discretization: Some(NoiseDiscretization::TwoPointPerAxis { epsilon: 0.35 }),
            },
        )];
        let report =
            rank_transformations(&data, &candidates, &map, &Expectation::Exact).unwrap();
        assert!(
            report.rows[0].delta >= 0.0,
            "smoothing should not hurt alignment here: delta {}",
            report.rows[0].delta
        );
    }
}
