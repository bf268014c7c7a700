//! Loss models and their derivatives.
//!
//! Objectives need losses twice differentiable in the score — the
//! second-order approximation adds a curvature penalty, and its gradient
//! needs one derivative more. Scalar losses (logistic, squared) act on a
//! signed score with labels in `{-1, +1}`; multinomial cross-entropy acts on
//! a score vector with a class-index label. All expressions are arranged to
//! stay finite for scores far outside the numerically comfortable range.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "kebab-case")]
pub enum LossModel {
    /// `ln(1 + exp(-y x))`.
    Logistic,
    /// `(x - y)^2`.
    Squared,
    /// Cross-entropy after softmax over `classes` scores.
    MultinomialCe { classes: usize },
}

/// Value and first two derivatives of a scalar loss in the score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLossEval {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Value, gradient, and Hessian of a vector loss in the score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorLossEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// `ln(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(-t))` without overflow.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `sech(x / 2)` computed from decaying exponentials only.
fn sech_half(x: f64) -> f64 {
    let u = (x / 2.0).abs();
    let e = (-u).exp();
    2.0 * e / (1.0 + e * e)
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        if let LossModel::MultinomialCe { classes } = self {
            if *classes < 2 {
                return Err(Error::InvalidParameter(format!(
                    "multinomial loss needs at least 2 classes, got {classes}"
                )));
            }
        }
        Ok(())
    }

    /// Number of score components the loss consumes.
    pub fn classes(&self) -> usize {
        match self {
            LossModel::MultinomialCe { classes } => *classes,
            _ => 1,
        }
    }

    pub fn is_vector(&self) -> bool {
        matches!(self, LossModel::MultinomialCe { .. })
    }

    /// Checks a dataset label against what the loss can consume: scalar
    /// losses need signs, the multinomial loss needs class indices.
    pub fn validate_label(&self, label: i32) -> Result<()> {
        match self {
            LossModel::Logistic | LossModel::Squared => {
                if label == -1 || label == 1 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "scalar losses need labels in {{-1, +1}}, got {label}"
                    )))
                }
            }
            LossModel::MultinomialCe { classes } => {
                if label >= 0 && (label as usize) < *classes {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "class label {label} outside 0..{classes}"
                    )))
                }
            }
        }
    }

    /// Value and first two score derivatives of a scalar loss.
    pub fn eval_scalar(&self, x: f64, y: i32) -> Result<ScalarLossEval> {
        self.validate_label(y)?;
        let yf = f64::from(y);
        match self {
            LossModel::Logistic => Ok(ScalarLossEval {
                value: softplus(-yf * x),
                first: -yf * sigmoid(-yf * x),
                second: {
                    let s = sech_half(x);
                    0.25 * s * s
                },
            }),
            LossModel::Squared => Ok(ScalarLossEval {
                value: (x - yf) * (x - yf),
                first: 2.0 * (x - yf),
                second: 2.0,
            }),
            LossModel::MultinomialCe { .. } => Err(Error::InvalidParameter(
                "multinomial loss takes a score vector, not a scalar".into(),
            )),
        }
    }

    /// Third score derivative of a scalar loss; needed for gradients of
    /// curvature penalties.
    pub(crate) fn third_scalar(&self, x: f64, y: i32) -> Result<f64> {
        self.validate_label(y)?;
        match self {
            LossModel::Logistic => {
                let s = sech_half(x);
                Ok(-0.25 * s * s * (x / 2.0).tanh())
            }
            LossModel::Squared => Ok(0.0),
            LossModel::MultinomialCe { .. } => Err(Error::InvalidParameter(
                "multinomial loss takes a score vector, not a scalar".into(),
            )),
        }
    }

    /// Value, gradient, and Hessian of the multinomial loss at a score
    /// vector: with `p = softmax(scores)`, the gradient is `p - e_y` and the
    /// Hessian `diag(p) - p p^T`.
    pub fn eval_vector(&self, scores: &DVector<f64>, y: usize) -> Result<VectorLossEval> {
        let LossModel::MultinomialCe { classes } = self else {
            return Err(Error::InvalidParameter(
                "scalar losses take a single score; use eval_scalar".into(),
            ));
        };
        if scores.len() != *classes {
            return Err(Error::DimensionMismatch(format!(
                "got {} scores for {classes} classes",
                scores.len()
            )));
        }
        if y >= *classes {
            return Err(Error::InvalidParameter(format!(
                "class label {y} outside 0..{classes}"
            )));
        }
        let p = softmax(scores);
        let mut grad = p.clone();
        grad[y] -= 1.0;
        let hessian = DMatrix::from_fn(*classes, *classes, |i, j| {
            if i == j {
                p[i] * (1.0 - p[i])
            } else {
                -p[i] * p[j]
            }
        });
        let m = scores.max();
        let value = m + scores.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - scores[y];
        Ok(VectorLossEval {
            value,
            grad,
            hessian,
        })
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &DVector<f64>) -> DVector<f64> {
    let m = scores.max();
    let mut p = scores.map(|v| (v - m).exp());
    let total: f64 = p.iter().sum();
    p /= total;
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn known_values_at_zero() {
        let l = LossModel::Logistic;
        for y in [-1, 1] {
            let e = l.eval_scalar(0.0, y).unwrap();
            assert_abs_diff_eq!(e.value, std::f64::consts::LN_2, epsilon = 1e-15);
            assert_abs_diff_eq!(e.first, -f64::from(y) / 2.0, epsilon = 1e-15);
            assert_abs_diff_eq!(e.second, 0.25, epsilon = 1e-15);
            assert_abs_diff_eq!(l.third_scalar(0.0, y).unwrap(), 0.0, epsilon = 1e-15);
        }
        let s = LossModel::Squared.eval_scalar(2.0, 1).unwrap();
        assert_abs_diff_eq!(s.value, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.first, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.second, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn scalar_derivatives_match_finite_differences() {
        let h = 1e-5;
        for loss in [LossModel::Logistic, LossModel::Squared] {
            for y in [-1, 1] {
                for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
                    let at = |t: f64| loss.eval_scalar(t, y).unwrap();
                    let e = at(x);
                    let fd1 = (at(x + h).value - at(x - h).value) / (2.0 * h);
                    assert_abs_diff_eq!(e.first, fd1, epsilon = 1e-6);
                    let fd2 = (at(x + h).first - at(x - h).first) / (2.0 * h);
                    assert_abs_diff_eq!(e.second, fd2, epsilon = 1e-6);
                    let fd3 = (at(x + h).second - at(x - h).second) / (2.0 * h);
                    assert_abs_diff_eq!(
                        loss.third_scalar(x, y).unwrap(),
                        fd3,
                        epsilon = 1e-6
                    );
                }
            }
        }
    }

    #[test]
    fn logistic_stays_finite_at_extreme_scores() {
        let l = LossModel::Logistic;
        for x in [-800.0, 800.0] {
            for y in [-1, 1] {
                let e = l.eval_scalar(x, y).unwrap();
                assert!(e.value.is_finite());
                assert!(e.first.is_finite());
                assert!(e.second.is_finite());
                assert!(l.third_scalar(x, y).unwrap().is_finite());
            }
        }
        // Asymptotes: for y = 1 the loss approaches -x on the left and 0 on
        // the right.
        let left = l.eval_scalar(-800.0, 1).unwrap();
        assert_abs_diff_eq!(left.value, 800.0, epsilon = 1e-9);
        assert_abs_diff_eq!(left.first, -1.0, epsilon = 1e-12);
        let right = l.eval_scalar(800.0, 1).unwrap();
        assert_abs_diff_eq!(right.value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(right.second, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn label_validation() {
        assert!(LossModel::Logistic.eval_scalar(0.0, 0).is_err());
        assert!(LossModel::Squared.eval_scalar(0.0, 2).is_err());
        assert!(LossModel::MultinomialCe { classes: 3 }
            .eval_scalar(0.0, 1)
            .is_err());
        assert!(LossModel::MultinomialCe { classes: 1 }.validate().is_err());
        assert!(LossModel::MultinomialCe { classes: 3 }
            .validate_label(2)
            .is_ok());
        assert!(LossModel::MultinomialCe { classes: 3 }
            .validate_label(3)
            .is_err());
    }

    #[test]
    fn multinomial_matches_finite_differences() {
        let loss = LossModel::MultinomialCe { classes: 3 };
        let scores = DVector::from_row_slice(&[0.3, -1.2, 0.8]);
        let y = 2;
        let e = loss.eval_vector(&scores, y).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut up = scores.clone();
            up[i] += h;
            let mut down = scores.clone();
            down[i] -= h;
            let fd = (loss.eval_vector(&up, y).unwrap().value
                - loss.eval_vector(&down, y).unwrap().value)
                / (2.0 * h);
            assert_abs_diff_eq!(e.grad[i], fd, epsilon = 1e-6);
            for j in 0..3 {
                let fd = (loss.eval_vector(&up, y).unwrap().grad[j]
                    - loss.eval_vector(&down, y).unwrap().grad[j])
                    / (2.0 * h);
                assert_abs_diff_eq!(e.hessian[(j, i)], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn multinomial_hessian_structure() {
        let loss = LossModel::MultinomialCe { classes: 4 };
        let scores = DVector::from_row_slice(&[1000.0, 0.0, -1000.0, 3.0]);
        let e = loss.eval_vector(&scores, 0).unwrap();
        assert!(e.value.is_finite() && e.value >= 0.0);
        // Rows of diag(p) - p p^T sum to zero.
        for i in 0..4 {
            let row_sum: f64 = (0..4).map(|j| e.hessian[(i, j)]).sum();
            assert_abs_diff_eq!(row_sum, 0.0, epsilon = 1e-12);
        }
        // Positive semidefinite.
        let min_eig = e
            .hessian
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig > -1e-12);
        // Softmax sums to one even with extreme scores.
        let p = softmax(&scores);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
