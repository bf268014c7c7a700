//! Augmented training objectives and their approximations.
//!
//! Training under random transforms minimizes the expected loss over
//! transformed inputs. That expectation is expensive, so two surrogates are
//! provided alongside it: a first-order one that plugs the averaged features
//! into the loss, and a second-order one that adds a curvature-weighted
//! variance penalty. For quadratic losses the second-order form is exact;
//! for small transform noise it tracks the true objective far closer than
//! the first-order form, while Jensen's inequality keeps the first-order
//! value below the true one.
//!
//! Modes:
//! - `none`       — plain loss on the raw features, no transform;
//! - `true`       — expected loss over the transform distribution;
//! - `first_order` — loss at the averaged features;
//! - `second_order` — first order plus the variance penalty;
//! - `second_order_only` — the penalty alone.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::loss::LossModel;
use crate::rng::{derive_seed, seeded_rng};
use crate::sampler::{Expectation, TransformSampler};
use crate::util::{pairwise_sum, pairwise_sum_matrices};

/// Largest total atom-feature footprint (floats) a prepared objective may
/// materialize.
const MAX_PREPARED_FLOATS: usize = 200_000_000;

/// Divergence guard for training: the objective magnitude may not exceed
/// this multiple of its starting magnitude.
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    None,
    True,
    FirstOrder,
    SecondOrder,
    SecondOrderOnly,
}

impl ObjectiveMode {
    pub const ALL: [ObjectiveMode; 5] = [
        ObjectiveMode::None,
        ObjectiveMode::True,
        ObjectiveMode::FirstOrder,
        ObjectiveMode::SecondOrder,
        ObjectiveMode::SecondOrderOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveMode::None => "none",
            ObjectiveMode::True => "true",
            ObjectiveMode::FirstOrder => "first_order",
            ObjectiveMode::SecondOrder => "second_order",
            ObjectiveMode::SecondOrderOnly => "second_order_only",
        }
    }
}

struct PreparedPoint {
    label: i32,
    /// Raw features of the untransformed input.
    phi_x: DVector<f64>,
    /// Transform-averaged features, consistent with `atoms`.
    psi: DVector<f64>,
    /// Weighted features of the transformed copies: exact support atoms, or
    /// equally weighted Monte-Carlo draws frozen at preparation time.
    atoms: Vec<(f64, DVector<f64>)>,
}

/// A dataset with all per-point features precomputed, ready to evaluate any
/// objective mode at any weight matrix.
pub struct PreparedObjective {
    loss: LossModel,
    points: Vec<PreparedPoint>,
    n_features: usize,
    classes: usize,
    exact: bool,
}

impl PreparedObjective {
    /// Evaluates features of every data point and of its transformed copies.
    /// Monte-Carlo expectations draw the copies once, with point `i` seeded
    /// as `derive_seed(seed, i)`, so the objective is a fixed deterministic
    /// function afterwards.
    pub fn prepare(
        dataset: &Dataset,
        sampler: &TransformSampler,
        map: &FeatureMap,
        loss: &LossModel,
        expectation: &Expectation,
    ) -> Result<PreparedObjective> {
        loss.validate()?;
        sampler.validate()?;
        if dataset.dim() != map.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset inputs have dimension {}, feature map takes {}",
                dataset.dim(),
                map.input_dim()
            )));
        }
        for &y in dataset.labels() {
            loss.validate_label(y)?;
        }
        let atoms_per_point = match expectation {
            Expectation::Exact => sampler.support(dataset.input(0))?.len(),
            Expectation::MonteCarlo { samples, .. } => {
                if *samples == 0 {
                    return Err(Error::InvalidParameter(
                        "Monte Carlo expectation needs at least one sample".into(),
                    ));
                }
                *samples
            }
        };
        if dataset.len() * atoms_per_point * map.output_dim() > MAX_PREPARED_FLOATS {
            return Err(Error::InvalidParameter(format!(
                "prepared objective would hold {} x {atoms_per_point} feature atoms of \
                 dimension {}; reduce the sample count or feature dimension",
                dataset.len(),
                map.output_dim()
            )));
        }

        let points: Vec<PreparedPoint> = (0..dataset.len())
            .into_par_iter()
            .map(|i| -> Result<PreparedPoint> {
                let x = dataset.input(i);
                let phi_x = map.eval(x)?;
                let atoms: Vec<(f64, DVector<f64>)> = match expectation {
                    Expectation::Exact => sampler
                        .support(x)?
                        .into_iter()
                        .map(|atom| Ok((atom.probability, map.eval(&atom.value)?)))
                        .collect::<Result<_>>()?,
                    Expectation::MonteCarlo { samples, seed } => {
                        let mut rng = seeded_rng(derive_seed(*seed, i as u64));
                        let weight = 1.0 / *samples as f64;
                        (0..*samples)
                            .map(|_| {
                                let z = sampler.sample_with(x, &mut rng);
                                Ok((weight, map.eval(&z)?))
                            })
                            .collect::<Result<_>>()?
                    }
                };
                let mut psi = DVector::zeros(map.output_dim());
                for (p, phi) in &atoms {
                    psi += phi * *p;
                }
                Ok(PreparedPoint {
                    label: dataset.label(i),
                    phi_x,
                    psi,
                    atoms,
                })
            })
            .collect::<Result<_>>()?;

        Ok(PreparedObjective {
            loss: *loss,
            points,
            n_features: map.output_dim(),
            classes: loss.classes(),
            exact: matches!(expectation, Expectation::Exact),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Feature dimension; weight matrices are `n_features x classes`.
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Number of score components (1 for scalar losses).
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn loss(&self) -> &LossModel {
        &self.loss
    }

    /// Zero weights of the right shape.
    pub fn zero_weights(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.n_features, self.classes)
    }

    fn check_weights(&self, w: &DMatrix<f64>) -> Result<()> {
        if w.nrows() != self.n_features || w.ncols() != self.classes {
            return Err(Error::DimensionMismatch(format!(
                "weights must be {} x {}, got {} x {}",
                self.n_features,
                self.classes,
                w.nrows(),
                w.ncols()
            )));
        }
        Ok(())
    }

    /// Objective value at `w` (without any ridge term).
    pub fn value(&self, mode: ObjectiveMode, w: &DMatrix<f64>) -> Result<f64> {
        self.check_weights(w)?;
        let values: Vec<f64> = self
            .points
            .par_iter()
            .map(|p| self.point_value(mode, p, w))
            .collect::<Result<_>>()?;
        Ok(pairwise_sum(&values) / self.points.len() as f64)
    }

    /// Objective gradient at `w` (without any ridge term).
    pub fn gradient(&self, mode: ObjectiveMode, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_weights(w)?;
        let grads: Vec<DMatrix<f64>> = self
            .points
            .par_iter()
            .map(|p| self.point_gradient(mode, p, w))
            .collect::<Result<_>>()?;
        Ok(pairwise_sum_matrices(&grads) / self.points.len() as f64)
    }

    fn point_value(&self, mode: ObjectiveMode, p: &PreparedPoint, w: &DMatrix<f64>) -> Result<f64> {
        match mode {
            ObjectiveMode::None => self.plain_value(p, &p.phi_x, w),
            ObjectiveMode::True => {
                let mut acc = 0.0;
                for (prob, phi) in &p.atoms {
                    acc += prob * self.plain_value(p, phi, w)?;
                }
                Ok(acc)
            }
            ObjectiveMode::FirstOrder => self.plain_value(p, &p.psi, w),
            ObjectiveMode::SecondOrder => {
                Ok(self.plain_value(p, &p.psi, w)? + self.penalty_value(p, w)?)
            }
            ObjectiveMode::SecondOrderOnly => self.penalty_value(p, w),
        }
    }

    fn point_gradient(
        &self,
        mode: ObjectiveMode,
        p: &PreparedPoint,
        w: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        match mode {
            ObjectiveMode::None => self.plain_gradient(p, &p.phi_x, w),
            ObjectiveMode::True => {
                let mut acc = DMatrix::zeros(self.n_features, self.classes);
                for (prob, phi) in &p.atoms {
                    acc += self.plain_gradient(p, phi, w)? * *prob;
                }
                Ok(acc)
            }
            ObjectiveMode::FirstOrder => self.plain_gradient(p, &p.psi, w),
            ObjectiveMode::SecondOrder => {
                Ok(self.plain_gradient(p, &p.psi, w)? + self.penalty_gradient(p, w)?)
            }
            ObjectiveMode::SecondOrderOnly => self.penalty_gradient(p, w),
        }
    }

    /// Loss value at one feature vector.
    fn plain_value(&self, p: &PreparedPoint, phi: &DVector<f64>, w: &DMatrix<f64>) -> Result<f64> {
        if self.classes == 1 {
            let s = w.column(0).dot(phi);
            Ok(self.loss.eval_scalar(s, p.label)?.value)
        } else {
            let u = w.tr_mul(phi);
            Ok(self.loss.eval_vector(&u, p.label as usize)?.value)
        }
    }

    /// Loss gradient in `w` at one feature vector.
    fn plain_gradient(
        &self,
        p: &PreparedPoint,
        phi: &DVector<f64>,
        w: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        if self.classes == 1 {
            let s = w.column(0).dot(phi);
            let first = self.loss.eval_scalar(s, p.label)?.first;
            Ok(DMatrix::from_columns(&[phi * first]))
        } else {
            let u = w.tr_mul(phi);
            let grad = self.loss.eval_vector(&u, p.label as usize)?.grad;
            Ok(phi * grad.transpose())
        }
    }

    /// Variance penalty at one point: half the curvature-weighted score
    /// variance over the transformed copies.
    fn penalty_value(&self, p: &PreparedPoint, w: &DMatrix<f64>) -> Result<f64> {
        if self.classes == 1 {
            let s = w.column(0).dot(&p.psi);
            let second = self.loss.eval_scalar(s, p.label)?.second;
            let mut var = 0.0;
            for (prob, phi) in &p.atoms {
                let d = w.column(0).dot(phi) - s;
                var += prob * d * d;
            }
            Ok(0.5 * second * var)
        } else {
            let u = w.tr_mul(&p.psi);
            let h = self.loss.eval_vector(&u, p.label as usize)?.hessian;
            let mut acc = 0.0;
            for (prob, phi) in &p.atoms {
                let v = w.tr_mul(&(phi - &p.psi));
                acc += prob * (v.dot(&(&h * &v)));
            }
            Ok(0.5 * acc)
        }
    }

    fn penalty_gradient(&self, p: &PreparedPoint, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.classes == 1 {
            let s = w.column(0).dot(&p.psi);
            let second = self.loss.eval_scalar(s, p.label)?.second;
            let third = self.loss.third_scalar(s, p.label)?;
            let mut var = 0.0;
            let mut weighted = DVector::zeros(self.n_features);
            for (prob, phi) in &p.atoms {
                let delta = phi - &p.psi;
                let d = w.column(0).dot(&delta);
                var += prob * d * d;
                weighted += delta * (prob * d);
            }
            let grad = &p.psi * (0.5 * third * var) + weighted * second;
            Ok(DMatrix::from_columns(&[grad]))
        } else {
            // With p = softmax(W^T psi), H = diag(p) - p p^T, and
            // v_a = W^T (phi_a - psi), the penalty derivative splits into a
            // direct part through v_a and a curvature part through H:
            //   sum_a p_a [ Delta_a (H v_a)^T
            //             + psi (H(v_a ∘ v_a)/2 - (p.v_a) H v_a)^T ].
            let u = w.tr_mul(&p.psi);
            let eval = self.loss.eval_vector(&u, p.label as usize)?;
            let h = eval.hessian;
            let probs = crate::loss::softmax(&u);
            let mut acc = DMatrix::zeros(self.n_features, self.classes);
            for (prob, phi) in &p.atoms {
                let delta = phi - &p.psi;
                let v = w.tr_mul(&delta);
                let hv = &h * &v;
                let hvv = &h * v.component_mul(&v);
                let inner = hvv * 0.5 - &hv * probs.dot(&v);
                acc += (delta * hv.transpose() + &p.psi * inner.transpose()) * *prob;
            }
            Ok(acc)
        }
    }

    /// Gradient descent on one objective mode with an optional ridge term.
    ///
    /// The trace has `iterations + 1` rows; row `t` records the regularized
    /// objective and full gradient norm at the weights entering step `t`.
    /// Training aborts with [`Error::Diverged`] when the objective leaves
    /// the finite range or blows past a million times its starting size.
    pub fn train(
        &self,
        mode: ObjectiveMode,
        w0: &DMatrix<f64>,
        step: f64,
        iterations: usize,
        ridge: f64,
    ) -> Result<TrainResult> {
        self.check_weights(w0)?;
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step size must be strictly positive, got {step}"
            )));
        }
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ridge must be nonnegative, got {ridge}"
            )));
        }
        let mut w = w0.clone();
        let mut trace = Vec::with_capacity(iterations + 1);
        let mut scale = 1.0_f64;
        for t in 0..=iterations {
            let objective = self.value(mode, &w)? + 0.5 * ridge * w.norm_squared();
            if t == 0 {
                scale = objective.abs().max(1.0);
            }
            if !objective.is_finite() || objective.abs() > DIVERGENCE_FACTOR * scale {
                return Err(Error::Diverged {
                    iteration: t,
                    value: objective,
                });
            }
            let gradient = self.gradient(mode, &w)? + &w * ridge;
            trace.push(TrainRow {
                iteration: t,
                objective,
                grad_norm: gradient.norm(),
            });
            if t < iterations {
                w -= gradient * step;
            }
        }
        Ok(TrainResult { weights: w, trace })
    }

    /// Checks the curvature sandwich between the true and first-order
    /// objectives at `w`, for scalar losses under exact expectations.
    ///
    /// With pooled feature covariance eigenvalues `a <= b`, loss curvature
    /// range `alpha <= beta` over all realized scores, and gap
    /// `g - g_hat`, the sandwich is
    /// `alpha a / 2 |w|^2 <= gap <= beta b / 2 |w|^2` (up to slack
    /// `1e-9 (1 + |w|^2)`), and the minimizer displacement bound is
    /// `beta b / (alpha c) |w|^2` with `c` the smallest eigenvalue of the
    /// averaged-feature second moment.
    pub fn proposition1_check(&self, w: &DMatrix<f64>) -> Result<Prop1Report> {
        self.check_weights(w)?;
        if self.classes != 1 {
            return Err(Error::InvalidParameter(
                "the sandwich check applies to scalar losses only".into(),
            ));
        }
        if !self.exact {
            return Err(Error::InvalidParameter(
                "the sandwich check needs exact transform expectations".into(),
            ));
        }
        let n = self.points.len() as f64;
        let m = self.n_features;

        let mut pooled_cov = DMatrix::zeros(m, m);
        let mut mean_outer = DMatrix::zeros(m, m);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.points {
            let s = w.column(0).dot(&p.psi);
            lo = lo.min(s);
            hi = hi.max(s);
            for (prob, phi) in &p.atoms {
                let delta = phi - &p.psi;
                pooled_cov += &delta * delta.transpose() * *prob;
                let sa = w.column(0).dot(phi);
                lo = lo.min(sa);
                hi = hi.max(sa);
            }
            mean_outer += &p.psi * p.psi.transpose();
        }
        pooled_cov /= n;
        mean_outer /= n;

        let cov_eigs = pooled_cov.symmetric_eigen().eigenvalues;
        let a = cov_eigs.iter().copied().fold(f64::INFINITY, f64::min);
        let b = cov_eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = mean_outer
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);

        let (alpha, beta) = curvature_range(&self.loss, lo, hi)?;

        let gap = self.value(ObjectiveMode::True, w)? - self.value(ObjectiveMode::FirstOrder, w)?;
        let w2 = w.norm_squared();
        let lower = 0.5 * alpha * a * w2;
        let upper = 0.5 * beta * b * w2;
        let slack = 1e-9 * (1.0 + w2);
        let sandwich_holds = gap + slack >= lower && gap <= upper + slack;
        let minimizer_bound = if alpha > 0.0 && c > 0.0 {
            beta * b / (alpha * c) * w2
        } else {
            f64::INFINITY
        };
        Ok(Prop1Report {
            cov_min_eigenvalue: a,
            cov_max_eigenvalue: b,
            mean_outer_min_eigenvalue: c,
            curvature_min: alpha,
            curvature_max: beta,
            weight_norm_sq: w2,
            gap,
            lower,
            upper,
            slack,
            sandwich_holds,
            minimizer_bound,
        })
    }
}

/// Range of the loss's second derivative over scores in `[lo, hi]`.
fn curvature_range(loss: &LossModel, lo: f64, hi: f64) -> Result<(f64, f64)> {
    match loss {
        LossModel::Squared => Ok((2.0, 2.0)),
        LossModel::Logistic => {
            // l'' is even and unimodal with its maximum 1/4 at zero, so the
            // extremes over an interval sit at its endpoints (and at zero if
            // the interval straddles it).
            let at = |x: f64| loss.eval_scalar(x, 1).map(|e| e.second);
            let lo_v = at(lo)?;
            let hi_v = at(hi)?;
            let alpha = lo_v.min(hi_v);
            let beta = if lo <= 0.0 && hi >= 0.0 {
                0.25
            } else {
                lo_v.max(hi_v)
            };
            Ok((alpha, beta))
        }
        LossModel::MultinomialCe { .. } => Err(Error::InvalidParameter(
            "curvature range is defined for scalar losses".into(),
        )),
    }
}

/// One step of a training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub weights: DMatrix<f64>,
    pub trace: Vec<TrainRow>,
}

/// Curvature sandwich diagnostics; see
/// [`PreparedObjective::proposition1_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop1Report {
    pub cov_min_eigenvalue: f64,
    pub cov_max_eigenvalue: f64,
    pub mean_outer_min_eigenvalue: f64,
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub weight_norm_sq: f64,
    pub gap: f64,
    pub lower: f64,
    pub upper: f64,
    pub slack: f64,
    pub sandwich_holds: bool,
    pub minimizer_bound: f64,
}

/// `KL(p || q)` in nats, with `q` floored at `1e-12` per entry. Entries of
/// `p` that are zero contribute nothing.
pub fn prediction_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "distributions must share a positive length, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let sum_p: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v >= 0.0)) || (sum_p - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!(
            "first argument must be a probability vector (sum {sum_p})"
        )));
    }
    if q.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidDistribution(
            "second argument has negative entries".into(),
        ));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            kl += pi * (pi / qi.max(1e-12)).ln();
        }
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::NoiseDiscretization;
    use approx::assert_abs_diff_eq;

    fn two_point_sampler(epsilon: f64) -> TransformSampler {
        TransformSampler::AdditiveNoise {
            sigma: epsilon,
            discretization: Some(NoiseDiscretization::TwoPointPerAxis { epsilon }),
        }
    }

    fn small_dataset() -> Dataset {
        crate::data::gaussian_mixture(12, &[1.5, -1.0], &[-1.5, 1.0], 0.4, 42).unwrap()
    }

    fn probe_weights(m: usize, c: usize, scale: f64, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(seed);
        DMatrix::from_fn(m, c, |_, _| (rng.random::<f64>() - 0.5) * scale)
    }

    fn prepare_scalar(loss: LossModel, epsilon: f64) -> PreparedObjective {
        PreparedObjective::prepare(
            &small_dataset(),
            &two_point_sampler(epsilon),
            &FeatureMap::Identity { dim: 2 },
            &loss,
            &Expectation::Exact,
        )
        .unwrap()
    }

    #[test]
    fn descent_matches_normal_equations() {
        // Ridge least squares has a closed form; gradient descent on the
        // same objective must land on it.
        let data = small_dataset();
        let prepared = PreparedObjective::prepare(
            &data,
            &TransformSampler::Identity,
            &FeatureMap::Identity { dim: 2 },
            &LossModel::Squared,
            &Expectation::Exact,
        )
        .unwrap();
        let ridge = 0.1;
        let result = prepared
            .train(
                ObjectiveMode::None,
                &prepared.zero_weights(),
                0.05,
                4000,
                ridge,
            )
            .unwrap();

        let n = data.len() as f64;
        let mut xtx = DMatrix::zeros(2, 2);
        let mut xty = DVector::zeros(2);
        for i in 0..data.len() {
            let x = DVector::from_row_slice(data.input(i));
            xtx += &x * x.transpose() * (2.0 / n);
            xty += x * (2.0 * f64::from(data.label(i)) / n);
        }
        for i in 0..2 {
            xtx[(i, i)] += ridge;
        }
        let oracle = xtx.lu().solve(&xty).unwrap();
        assert!(
            (result.weights.column(0) - &oracle).norm() < 1e-6,
            "descent ended at {:?}, oracle {:?}",
            result.weights.as_slice(),
            oracle.as_slice()
        );
        assert_eq!(result.trace.len(), 4001);
        assert!(result.trace.last().unwrap().objective < result.trace[0].objective);
        assert!(result.trace.last().unwrap().grad_norm < 1e-9);
    }

    #[test]
    fn first_order_underestimates_true() {
        let prepared = prepare_scalar(LossModel::Logistic, 0.5);
        for seed in [1, 2, 3] {
            let w = probe_weights(2, 1, 3.0, seed);
            let g = prepared.value(ObjectiveMode::True, &w).unwrap();
            let g_hat = prepared.value(ObjectiveMode::FirstOrder, &w).unwrap();
            assert!(
                g_hat <= g + 1e-12,
                "Jensen violated: first order {g_hat} above true {g}"
            );
        }
    }

    #[test]
    fn quadratic_loss_makes_second_order_exact() {
        let prepared = prepare_scalar(LossModel::Squared, 0.7);
        for seed in [4, 5] {
            let w = probe_weights(2, 1, 2.0, seed);
            let g = prepared.value(ObjectiveMode::True, &w).unwrap();
            let g2 = prepared.value(ObjectiveMode::SecondOrder, &w).unwrap();
            assert_abs_diff_eq!(g, g2, epsilon = 1e-12);
            let dg = prepared.gradient(ObjectiveMode::True, &w).unwrap();
            let dg2 = prepared.gradient(ObjectiveMode::SecondOrder, &w).unwrap();
            assert!((dg - dg2).abs().max() < 1e-12);
        }
    }

    #[test]
    fn second_order_beats_first_order_at_small_noise() {
        let prepared = prepare_scalar(LossModel::Logistic, 0.05);
        for seed in [6, 7, 8] {
            let w = probe_weights(2, 1, 4.0, seed);
            let g = prepared.value(ObjectiveMode::True, &w).unwrap();
            let g1 = prepared.value(ObjectiveMode::FirstOrder, &w).unwrap();
            let g2 = prepared.value(ObjectiveMode::SecondOrder, &w).unwrap();
            assert!(
                (g - g2).abs() <= (g - g1).abs(),
                "second order ({g2}) should track {g} at least as well as first order ({g1})"
            );
        }
    }

    #[test]
    fn monte_carlo_tracks_exact_expectation() {
        let data = small_dataset();
        let sampler = two_point_sampler(0.5);
        let map = FeatureMap::Identity { dim: 2 };
        let loss = LossModel::Logistic;
        let exact =
            PreparedObjective::prepare(&data, &sampler, &map, &loss, &Expectation::Exact).unwrap();
        let mc = PreparedObjective::prepare(
            &data,
            &sampler,
            &map,
            &loss,
            &Expectation::MonteCarlo {
                samples: 4000,
                seed: 17,
            },
        )
        .unwrap();
        let w = probe_weights(2, 1, 2.0, 9);
        let g_exact = exact.value(ObjectiveMode::True, &w).unwrap();
        let g_mc = mc.value(ObjectiveMode::True, &w).unwrap();
        assert!(
            (g_exact - g_mc).abs() < 0.05,
            "Monte Carlo value {g_mc} too far from exact {g_exact}"
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        let scalar_losses = [LossModel::Logistic, LossModel::Squared];
        for loss in scalar_losses {
            let prepared = prepare_scalar(loss, 0.3);
            let w = probe_weights(2, 1, 1.5, 11);
            for mode in ObjectiveMode::ALL {
                let grad = prepared.gradient(mode, &w).unwrap();
                for r in 0..2 {
                    let mut up = w.clone();
                    up[(r, 0)] += h;
                    let mut down = w.clone();
                    down[(r, 0)] -= h;
                    let fd = (prepared.value(mode, &up).unwrap()
                        - prepared.value(mode, &down).unwrap())
                        / (2.0 * h);
                    assert_abs_diff_eq!(grad[(r, 0)], fd, epsilon = 1e-5);
                }
            }
        }
    }

    #[test]
    fn multinomial_gradients_match_finite_differences() {
        // Three-class data on a triangle of means.
        let inputs: Vec<Vec<f64>> = (0..9)
            .map(|i| {
                let center = match i % 3 {
                    0 => [1.0, 0.0],
                    1 => [-0.5, 0.9],
                    _ => [-0.5, -0.9],
                };
                vec![
                    center[0] + 0.1 * f64::from(i as i32),
                    center[1] - 0.05 * f64::from(i as i32),
                ]
            })
            .collect();
        let labels: Vec<i32> = (0..9).map(|i| i % 3).collect();
        let data = Dataset::new(inputs, labels).unwrap();
        let prepared = PreparedObjective::prepare(
            &data,
            &two_point_sampler(0.4),
            &FeatureMap::Identity { dim: 2 },
            &LossModel::MultinomialCe { classes: 3 },
            &Expectation::Exact,
        )
        .unwrap();
        let w = probe_weights(2, 3, 1.0, 13);
        let h = 1e-5;
        for mode in ObjectiveMode::ALL {
            let grad = prepared.gradient(mode, &w).unwrap();
            for r in 0..2 {
                for c in 0..3 {
                    let mut up = w.clone();
                    up[(r, c)] += h;
                    let mut down = w.clone();
                    down[(r, c)] -= h;
                    let fd = (prepared.value(mode, &up).unwrap()
                        - prepared.value(mode, &down).unwrap())
                        / (2.0 * h);
                    assert_abs_diff_eq!(grad[(r, c)], fd, epsilon = 1e-5);
                }
            }
        }
    }

    #[test]
    fn divergence_is_detected() {
        let prepared = prepare_scalar(LossModel::Squared, 0.3);
        let err = prepared.train(
            ObjectiveMode::True,
            &prepared.zero_weights(),
            50.0,
            200,
            0.0,
        );
        assert!(matches!(err, Err(Error::Diverged { .. })));
    }

    #[test]
    fn sandwich_is_exact_for_quadratic_loss() {
        let epsilon = 0.5;
        let prepared = prepare_scalar(LossModel::Squared, epsilon);
        let w = probe_weights(2, 1, 2.0, 15);
        let report = prepared.proposition1_check(&w).unwrap();
        let e2 = epsilon * epsilon;
        // Per-axis two-point noise has covariance epsilon^2 I exactly.
        assert_abs_diff_eq!(report.cov_min_eigenvalue, e2, epsilon = 1e-12);
        assert_abs_diff_eq!(report.cov_max_eigenvalue, e2, epsilon = 1e-12);
        assert_abs_diff_eq!(report.curvature_min, 2.0, epsilon = 1e-15);
        // Quadratic losses close the sandwich: gap = epsilon^2 |w|^2.
        assert_abs_diff_eq!(report.gap, e2 * report.weight_norm_sq, epsilon = 1e-12);
        assert_abs_diff_eq!(report.lower, report.upper, epsilon = 1e-12);
        assert!(report.sandwich_holds);
        assert!(report.minimizer_bound.is_finite());
    }

    #[test]
    fn sandwich_holds_for_logistic_loss() {
        let prepared = prepare_scalar(LossModel::Logistic, 0.4);
        for seed in [21, 22, 23] {
            let w = probe_weights(2, 1, 3.0, seed);
            let report = prepared.proposition1_check(&w).unwrap();
            assert!(
                report.sandwich_holds,
                "sandwich failed: gap {} not in [{}, {}]",
                report.gap, report.lower, report.upper
            );
            assert!(report.curvature_max <= 0.25 + 1e-15);
            assert!(report.curvature_min >= 0.0);
            assert!(report.lower <= report.upper);
        }
    }

    #[test]
    fn sandwich_rejects_unsupported_setups() {
        let prepared = prepare_scalar(LossModel::Logistic, 0.4);
        let mc = PreparedObjective::prepare(
            &small_dataset(),
            &two_point_sampler(0.4),
            &FeatureMap::Identity { dim: 2 },
            &LossModel::Logistic,
            &Expectation::MonteCarlo {
                samples: 100,
                seed: 1,
            },
        )
        .unwrap();
        let w = prepared.zero_weights();
        assert!(mc.proposition1_check(&w).is_err());
    }

    #[test]
    fn kl_known_values() {
        assert_abs_diff_eq!(
            prediction_kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            prediction_kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        // A zero in q is floored rather than dividing by zero.
        let kl = prediction_kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(kl.is_finite() && kl > 10.0);
        assert!(prediction_kl(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(prediction_kl(&[1.0], &[0.5, 0.5]).is_err());
    }
}
