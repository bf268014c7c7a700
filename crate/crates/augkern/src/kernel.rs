//! The kernel a chain induces and classifiers built on it.
//!
//! For a reversible chain the stationary distribution factors through a
//! positive-definite kernel: with base distribution `pi_0` (diagonal
//! `P0 = diag(pi_0)`) satisfying detailed balance `pi_0(u) A_i(u, v) =
//! pi_0(v) A_i(v, u)` for every augmentation, define
//!
//! ```text
//! psi = P0 rho,    K = ((beta + 1) P0 - P0 A)^{-1}.
//! ```
//!
//! `K` is symmetric positive definite with nonnegative entries, and when
//! `pi_0` is constant on each label block, `psi^T K` recovers the stationary
//! distribution exactly. Construction always verifies that identity
//! numerically and refuses to return a kernel whose factorization does not
//! reproduce the chain's stationary distribution.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::augmentation::AugmentationMatrix;
use crate::chain::{ChainSpec, DistributionVector};
use crate::error::{Error, Result};
use crate::space::{embedding_key, StateSpace};

/// Maximum asymmetry tolerated when interpreting a matrix as a kernel.
pub const KERNEL_SYM_TOL: f64 = 1e-10;

/// Eigenvalues above this are treated as positive in definiteness checks.
pub const KERNEL_EIG_TOL: f64 = -1e-10;

/// Worst-pair tolerance for the detailed-balance test.
pub const REVERSIBILITY_TOL: f64 = 1e-10;

/// Tolerance for `psi^T K` against the stationary distribution.
pub const FACTORIZATION_TOL: f64 = 1e-9;

/// Per-label kernel blocks must agree to this tolerance for the input-space
/// reduction used by the kernel classifier.
pub const BLOCK_MATCH_TOL: f64 = 1e-9;

/// Scores at most this far from zero are treated as classifier ties.
pub const SCORE_TIE_TOL: f64 = 1e-12;

/// A square matrix validated to be symmetric within [`KERNEL_SYM_TOL`] and
/// stored in exactly symmetric form.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    matrix: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        if raw.nrows() != raw.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "kernel must be square, got {}x{}",
                raw.nrows(),
                raw.ncols()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "kernel contains non-finite entries".into(),
            ));
        }
        let deviation = max_asymmetry(&raw);
        if deviation > KERNEL_SYM_TOL {
            return Err(Error::NotSymmetric { deviation });
        }
        let sym = (&raw + raw.transpose()) * 0.5;
        Ok(KernelMatrix { matrix: sym })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

/// Largest `|K(u, v) - K(v, u)|` over all pairs.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for u in 0..m.nrows() {
        for v in (u + 1)..m.ncols() {
            worst = worst.max((m[(u, v)] - m[(v, u)]).abs());
        }
    }
    worst
}

/// Structural facts about a candidate kernel matrix. Never fails; callers
/// decide which properties they require.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KernelPropertyReport {
    pub symmetric: bool,
    pub max_asymmetry: f64,
    pub positive_definite: bool,
    pub min_eigenvalue: f64,
    pub nonnegative: bool,
    pub min_entry: f64,
}

pub fn verify_kernel_properties(m: &DMatrix<f64>) -> KernelPropertyReport {
    let max_asym = max_asymmetry(m);
    let sym = (m + m.transpose()) * 0.5;
    let min_eigenvalue = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let min_entry = m.iter().copied().fold(f64::INFINITY, f64::min);
    KernelPropertyReport {
        symmetric: max_asym <= KERNEL_SYM_TOL,
        max_asymmetry: max_asym,
        positive_definite: min_eigenvalue > KERNEL_EIG_TOL,
        min_eigenvalue,
        nonnegative: min_entry >= -KERNEL_SYM_TOL,
        min_entry,
    }
}

/// The kernel induced by a chain, together with the weight vector that
/// reproduces the stationary distribution.
#[derive(Debug, Clone)]
pub struct InducedKernel {
    space: Arc<StateSpace>,
    kernel: KernelMatrix,
    psi: DVector<f64>,
    base: DistributionVector,
    stationary: DistributionVector,
    factorization_deviation: f64,
}

impl InducedKernel {
    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    /// Weight vector `psi = P0 rho`; nonzero exactly on dataset states.
    pub fn psi(&self) -> &DVector<f64> {
        &self.psi
    }

    /// Base distribution `pi_0` the kernel was built against.
    pub fn base(&self) -> &DistributionVector {
        &self.base
    }

    /// Stationary distribution of the chain (computed independently of the
    /// kernel and used to validate it).
    pub fn stationary(&self) -> &DistributionVector {
        &self.stationary
    }

    /// Worst-entry deviation of `psi^T K` from the stationary distribution;
    /// at most [`FACTORIZATION_TOL`] by construction.
    pub fn factorization_deviation(&self) -> f64 {
        self.factorization_deviation
    }
}

/// Builds the kernel induced by `spec` against base distribution `base`
/// (uniform when `None`).
///
/// Fails with [`Error::NotReversible`] if any augmentation violates detailed
/// balance under `base`, with definiteness/positivity errors if the inverse
/// is numerically unsound, and with [`Error::FactorizationMismatch`] if
/// `psi^T K` does not reproduce the stationary distribution — which happens
/// when `base` is not constant on label blocks.
pub fn induced_kernel(spec: &ChainSpec, base: Option<&DistributionVector>) -> Result<InducedKernel> {
    let n = spec.space().len();
    let pi0 = match base {
        Some(d) => {
            if d.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "base distribution has {} entries for a space of {n} states",
                    d.len()
                )));
            }
            d.clone()
        }
        None => DistributionVector::uniform(n),
    };
    if let Some(i) = (0..n).find(|&i| pi0.get(i) <= 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "base distribution must be strictly positive; entry {i} is {}",
            pi0.get(i)
        )));
    }

    // Detailed balance for every augmentation separately; the combined
    // matrix inherits it.
    for (index, (aug, _)) in spec.augmentations().iter().enumerate() {
        let a = aug.matrix();
        let mut worst = (0.0_f64, 0usize, 0usize);
        for u in 0..n {
            for v in (u + 1)..n {
                let d = (pi0.get(u) * a[(u, v)] - pi0.get(v) * a[(v, u)]).abs();
                if d > worst.0 {
                    worst = (d, u, v);
                }
            }
        }
        if worst.0 > REVERSIBILITY_TOL {
            return Err(Error::NotReversible {
                index,
                u: worst.1,
                v: worst.2,
                deviation: worst.0,
            });
        }
    }

    // M = (beta + 1) P0 - P0 A; symmetric under detailed balance up to
    // rounding, so symmetrize before inverting.
    let mut m = spec.resolvent_system();
    for u in 0..n {
        for v in 0..n {
            m[(u, v)] *= pi0.get(u);
        }
    }
    let m = (&m + m.transpose()) * 0.5;
    let k = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SolveFailed("kernel system is singular".into()))?;

    let props = verify_kernel_properties(&k);
    if !props.positive_definite {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: props.min_eigenvalue,
        });
    }
    if !props.nonnegative {
        let (mut row, mut col, mut value) = (0, 0, f64::INFINITY);
        for u in 0..n {
            for v in 0..n {
                if k[(u, v)] < value {
                    value = k[(u, v)];
                    row = u;
                    col = v;
                }
            }
        }
        return Err(Error::NegativeEntry { row, col, value });
    }
    let kernel = KernelMatrix::new(k)?;

    let psi = DVector::from_fn(n, |i, _| pi0.get(i) * spec.rho()[i]);
    let stationary = spec.stationary_distribution()?;
    let recovered = kernel.matrix().tr_mul(&psi);
    let deviation = (&recovered - stationary.probabilities()).abs().max();
    if deviation > FACTORIZATION_TOL {
        return Err(Error::FactorizationMismatch { deviation });
    }

    Ok(InducedKernel {
        space: Arc::clone(spec.space()),
        kernel,
        psi,
        base: pi0,
        stationary,
        factorization_deviation: deviation,
    })
}

/// Unweighted resolvent kernel `((beta + 1) I - A)^{-1}` for a chain whose
/// combined matrix is symmetric.
pub fn resolvent_kernel(spec: &ChainSpec) -> Result<KernelMatrix> {
    let deviation = max_asymmetry(spec.combined_matrix());
    if deviation > KERNEL_SYM_TOL {
        return Err(Error::NotSymmetric { deviation });
    }
    let k = spec
        .resolvent_system()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SolveFailed("resolvent system is singular".into()))?;
    KernelMatrix::new(k)
}

/// Result of extending a kernel by one augmentation through the geometric
/// series `K_new = K sum_n rate^n ((A_hat - I) K)^n`.
#[derive(Debug, Clone)]
pub struct KernelUpdateReport {
    pub kernel: DMatrix<f64>,
    pub terms_used: usize,
    pub converged: bool,
    pub spectral_radius: f64,
    pub last_term_norm: f64,
}

/// Series tail cutoff: summation stops once a term's Frobenius norm falls
/// below this.
pub const UPDATE_TERM_TOL: f64 = 1e-10;

/// Extends `kernel` by augmentation `addition` at rate `rate` without
/// re-inverting. Converges if and only if the spectral radius of
/// `rate * (A_hat - I) K` is below 1; a radius at or above 1 is rejected
/// with [`Error::SeriesDiverges`].
pub fn update_kernel(
    kernel: &KernelMatrix,
    addition: &AugmentationMatrix,
    rate: f64,
    max_terms: usize,
) -> Result<KernelUpdateReport> {
    let n = kernel.len();
    if addition.matrix().nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "kernel has {n} states but the added augmentation has {}",
            addition.matrix().nrows()
        )));
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "update rate must be strictly positive, got {rate}"
        )));
    }
    if max_terms == 0 {
        return Err(Error::InvalidParameter(
            "update needs at least one series term".into(),
        ));
    }

    let mut step = addition.matrix().clone();
    for i in 0..n {
        step[(i, i)] -= 1.0;
    }
    let step = step * kernel.matrix() * rate;

    let spectral_radius = step
        .complex_eigenvalues()
        .iter()
        .map(|ev| ev.norm())
        .fold(0.0_f64, f64::max);
    if spectral_radius >= 1.0 {
        return Err(Error::SeriesDiverges { spectral_radius });
    }

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut terms_used = 1;
    let mut converged = false;
    let mut last_term_norm = term.norm();
    for _ in 1..=max_terms {
        term *= &step;
        last_term_norm = term.norm();
        sum += &term;
        terms_used += 1;
        if last_term_norm < UPDATE_TERM_TOL {
            converged = true;
            break;
        }
    }
    Ok(KernelUpdateReport {
        kernel: kernel.matrix() * sum,
        terms_used,
        converged,
        spectral_radius,
        last_term_norm,
    })
}

/// Classifier built from an induced kernel over a two-label space.
///
/// States must form a product of one input grid with the labels `{-1, +1}`.
/// The kernel is reduced to input space by checking that its per-label
/// blocks agree within [`BLOCK_MATCH_TOL`] and that cross-label entries
/// vanish; the prediction is then the sign of
/// `sum_i y_i psi(z_i) K_X(x_i, x)` over dataset states `z_i = (x_i, y_i)`.
#[derive(Debug, Clone)]
pub struct KernelClassifier {
    x_index: HashMap<Vec<u64>, usize>,
    kx: DMatrix<f64>,
    /// Dataset terms: reduced input index, label, weight `psi`.
    terms: Vec<(usize, i32, f64)>,
    /// Dataset anchors for tie-breaking, in ascending state order.
    anchors: Vec<(Vec<f64>, i32)>,
}

impl KernelClassifier {
    pub fn new(induced: &InducedKernel) -> Result<Self> {
        let space = induced.space();
        if space.labels() != [-1, 1] {
            return Err(Error::InvalidParameter(format!(
                "sign classifier needs labels -1 and +1, space has {:?}",
                space.labels()
            )));
        }

        // Require each label block to cover the same input embeddings.
        let minus = space.label_block(-1);
        let plus = space.label_block(1);
        if minus.len() != plus.len() {
            return Err(Error::InvalidParameter(format!(
                "label blocks have different sizes ({} vs {})",
                minus.len(),
                plus.len()
            )));
        }
        let mut x_index: HashMap<Vec<u64>, usize> = HashMap::new();
        for (pos, &s) in minus.iter().enumerate() {
            x_index.insert(embedding_key(&space.state(s).embedding), pos);
        }
        let mut plus_pos = vec![usize::MAX; plus.len()];
        for (p, &s) in plus.iter().enumerate() {
            let key = embedding_key(&space.state(s).embedding);
            match x_index.get(&key) {
                Some(&pos) => plus_pos[pos] = p,
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "state {} has no counterpart in the other label block",
                        space.state(s).id
                    )))
                }
            }
        }

        // Reduce: blocks must agree and cross-label entries must vanish.
        let k = induced.kernel().matrix();
        let nx = minus.len();
        let mut kx = DMatrix::zeros(nx, nx);
        let mut block_dev = 0.0_f64;
        let mut cross_dev = 0.0_f64;
        for i in 0..nx {
            for j in 0..nx {
                let km = k[(minus[i], minus[j])];
                let kp = k[(plus[plus_pos[i]], plus[plus_pos[j]])];
                block_dev = block_dev.max((km - kp).abs());
                cross_dev = cross_dev.max(k[(minus[i], plus[plus_pos[j]])].abs());
                kx[(i, j)] = km;
            }
        }
        let deviation = block_dev.max(cross_dev);
        if deviation > BLOCK_MATCH_TOL {
            return Err(Error::LabelBlocksDiffer { deviation });
        }

        let mut terms = Vec::new();
        let mut anchors = Vec::new();
        for (s, state) in space.states().iter().enumerate() {
            let w = induced.psi()[s];
            if w > 0.0 {
                let pos = x_index[&embedding_key(&state.embedding)];
                terms.push((pos, state.label, w));
                anchors.push((state.embedding.clone(), state.label));
            }
        }
        Ok(KernelClassifier {
            x_index,
            kx,
            terms,
            anchors,
        })
    }

    /// Signed score of an input; the embedding must match a grid point
    /// exactly.
    pub fn score(&self, embedding: &[f64]) -> Result<f64> {
        let col = *self
            .x_index
            .get(&embedding_key(embedding))
            .ok_or_else(|| Error::UnknownState(format!("input {embedding:?} is not a state")))?;
        let mut score = 0.0;
        for &(pos, label, w) in &self.terms {
            score += f64::from(label) * w * self.kx[(pos, col)];
        }
        Ok(score)
    }

    /// Predicted label: the sign of the score, breaking near-zero scores
    /// (within [`SCORE_TIE_TOL`]) toward the label of the nearest dataset
    /// state.
    pub fn classify(&self, embedding: &[f64]) -> Result<i32> {
        let score = self.score(embedding)?;
        if score.abs() <= SCORE_TIE_TOL {
            let mut best = (f64::INFINITY, 0_i32);
            for (anchor, label) in &self.anchors {
                let d: f64 = anchor
                    .iter()
                    .zip(embedding)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, *label);
                }
            }
            return Ok(best.1);
        }
        Ok(if score > 0.0 { 1 } else { -1 })
    }
}

/// Argmax-probability label for an input under a distribution over states.
/// Labels are scanned in ascending order and ties keep the smaller label.
pub fn bayes_classify(
    space: &StateSpace,
    distribution: &DistributionVector,
    embedding: &[f64],
) -> Result<i32> {
    if distribution.len() != space.len() {
        return Err(Error::DimensionMismatch(format!(
            "distribution has {} entries for a space of {} states",
            distribution.len(),
            space.len()
        )));
    }
    let mut best: Option<(f64, i32)> = None;
    for &label in space.labels() {
        if let Some(s) = space.find(label, embedding) {
            let p = distribution.get(s);
            match best {
                Some((bp, _)) if p <= bp => {}
                _ => best = Some((p, label)),
            }
        }
    }
    best.map(|(_, label)| label)
        .ok_or_else(|| Error::UnknownState(format!("input {embedding:?} is not a state")))
}

/// Diagnostic fit of the one-augmentation jitter kernel on a line grid.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct JitterKernelReport {
    pub grid_size: usize,
    pub sigma: f64,
    pub beta: f64,
    /// Bandwidth `s` of the least-squares fit `c exp(-t^2 / (2 s^2))` to the
    /// center row of the kernel (the center itself excluded: it carries a
    /// point mass that is not part of the smooth profile).
    pub fitted_bandwidth: f64,
    /// Fitted amplitude `c`.
    pub amplitude: f64,
    /// Worst relative deviation of the kernel row from the fit over the
    /// fitted offsets.
    pub max_relative_deviation: f64,
}

/// Builds the kernel `((1 + beta) I - beta A)^{-1}` for a discretized jitter
/// of width `sigma` on a line of `grid_size` points and fits a Gaussian to
/// its center row over offsets `1 <= |t| <= grid_size / 4`.
///
/// As `beta` shrinks the kernel's off-diagonal profile approaches the
/// single-step jitter profile, so the fitted bandwidth approaches `sigma`;
/// larger `beta` mixes in multi-step convolutions that broaden the profile
/// and degrade the fit.
pub fn jitter_kernel_check(grid_size: usize, sigma: f64, beta: f64) -> Result<JitterKernelReport> {
    if grid_size < 9 {
        return Err(Error::InvalidParameter(format!(
            "jitter check needs a grid of at least 9 points, got {grid_size}"
        )));
    }
    if !(sigma > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "jitter check needs sigma > 0 and beta > 0, got sigma = {sigma}, beta = {beta}"
        )));
    }
    let space = Arc::new(StateSpace::line_grid(grid_size, &[0])?);
    let jitter = crate::augmentation::build_finite_augmentation(
        &space,
        &crate::augmentation::FiniteAugmentation::DiscretizedJitter { sigma },
    )?;
    let mut m = jitter.matrix() * -beta;
    for i in 0..grid_size {
        m[(i, i)] += 1.0 + beta;
    }
    let k = m
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SolveFailed("jitter system is singular".into()))?;

    let center = grid_size / 2;
    let max_offset = (grid_size / 4) as i64;
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    let mut values = Vec::new();
    for t in -max_offset..=max_offset {
        if t == 0 {
            continue;
        }
        let j = center as i64 + t;
        if j < 0 || j >= grid_size as i64 {
            continue;
        }
        let v = k[(center, j as usize)];
        if v <= 0.0 {
            return Err(Error::DegenerateFit(format!(
                "kernel entry at offset {t} is {v}; cannot fit a log-linear profile"
            )));
        }
        ts.push((t as f64) * (t as f64));
        logs.push(v.ln());
        values.push(v);
    }
    if ts.len() < 3 {
        return Err(Error::DegenerateFit(
            "not enough offsets in the fit window".into(),
        ));
    }

    // Least squares for log k = a + m t^2.
    let n = ts.len() as f64;
    let mean_u = ts.iter().sum::<f64>() / n;
    let mean_l = logs.iter().sum::<f64>() / n;
    let var_u: f64 = ts.iter().map(|u| (u - mean_u) * (u - mean_u)).sum();
    let cov: f64 = ts
        .iter()
        .zip(&logs)
        .map(|(u, l)| (u - mean_u) * (l - mean_l))
        .sum();
    let slope = cov / var_u;
    if !(slope < 0.0) {
        return Err(Error::DegenerateFit(format!(
            "fitted profile does not decay (slope {slope})"
        )));
    }
    let intercept = mean_l - slope * mean_u;
    let fitted_bandwidth = (-0.5 / slope).sqrt();
    let amplitude = intercept.exp();
    let max_relative_deviation = ts
        .iter()
        .zip(&values)
        .map(|(u, v)| {
            let fit = (intercept + slope * u).exp();
            ((v - fit) / fit).abs()
        })
        .fold(0.0_f64, f64::max);

    Ok(JitterKernelReport {
        grid_size,
        sigma,
        beta,
        fitted_bandwidth,
        amplitude,
        max_relative_deviation,
    })
}
