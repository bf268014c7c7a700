//! Small numeric helpers shared across modules.

use nalgebra::DMatrix;

/// Sums a slice with fixed-order pairwise (cascade) summation.
///
/// The reduction tree depends only on the slice length, so results are
/// identical no matter how the terms were produced (serially or by a thread
/// pool that collected them in index order), and rounding error grows as
/// O(log n) rather than O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Pairwise sum of equally shaped matrices; the matrix analogue of
/// [`pairwise_sum`].
pub fn pairwise_sum_matrices(terms: &[DMatrix<f64>]) -> DMatrix<f64> {
    assert!(!terms.is_empty(), "cannot sum zero matrices");
    match terms.len() {
        1 => terms[0].clone(),
        2 => &terms[0] + &terms[1],
        n => {
            let mid = n / 2;
            pairwise_sum_matrices(&terms[..mid]) + pairwise_sum_matrices(&terms[mid..])
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pairwise_matches_naive_sum() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert_relative_eq!(pairwise_sum(&xs), naive, max_relative = 1e-12);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[3.5]), 3.5);
    }

    #[test]
    fn pairwise_matrices_match_naive() {
        let terms: Vec<DMatrix<f64>> = (0..7)
            .map(|i| DMatrix::from_fn(3, 2, |r, c| (i + r * 2 + c) as f64))
            .collect();
        let mut naive = DMatrix::zeros(3, 2);
        for t in &terms {
            naive += t;
        }
        assert_eq!(pairwise_sum_matrices(&terms), naive);
    }
}
