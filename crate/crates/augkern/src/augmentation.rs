//! Row-stochastic augmentation matrices over a finite state space.
//!
//! An augmentation is a Markov matrix on the state space: row `u` gives the
//! distribution of the transformed state when the transform is applied at
//! state `u`. Builders produce the structured families used throughout the
//! crate (cyclic shifts, discretized jitter, lossy collapse to a neighbor),
//! and [`symmetrize`] turns an arbitrary augmentation into a symmetric one by
//! splitting each directed transition with its reverse and keeping the
//! leftover mass as a probability of not transitioning.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::StateSpace;

/// Tolerance for row sums of stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A validated row-stochastic matrix tied to a state space.
#[derive(Debug, Clone)]
pub struct AugmentationMatrix {
    space: Arc<StateSpace>,
    matrix: DMatrix<f64>,
    label_preserving: bool,
}

impl AugmentationMatrix {
    /// Validates and wraps a matrix: square with the space's size, entries
    /// nonnegative (values in `[-1e-12, 0)` are clamped to zero), and each
    /// row summing to 1 within [`ROW_SUM_TOL`].
    pub fn new(space: Arc<StateSpace>, mut matrix: DMatrix<f64>) -> Result<Self> {
        let n = space.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "augmentation matrix is {}x{} but the space has {} states",
                matrix.nrows(),
                matrix.ncols(),
                n
            )));
        }
        for r in 0..n {
            for c in 0..n {
                let v = matrix[(r, c)];
                if !v.is_finite() || v < -ROW_SUM_TOL {
                    return Err(Error::NegativeEntry {
                        row: r,
                        col: c,
                        value: v,
                    });
                }
                if v < 0.0 {
                    matrix[(r, c)] = 0.0;
                }
            }
            let sum: f64 = matrix.row(r).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { row: r, sum });
            }
        }
        let label_preserving = (0..n).all(|r| {
            (0..n).all(|c| {
                space.state(r).label == space.state(c).label || matrix[(r, c)] == 0.0
            })
        });
        Ok(AugmentationMatrix {
            space,
            matrix,
            label_preserving,
        })
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// True when no probability crosses label blocks (entries between states
    /// of different labels are exactly zero).
    pub fn label_preserving(&self) -> bool {
        self.label_preserving
    }

    /// Max absolute asymmetry `|A - A^T|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in (r + 1)..n {
                worst = worst.max((self.matrix[(r, c)] - self.matrix[(c, r)]).abs());
            }
        }
        worst
    }
}

/// Structured augmentation families buildable directly from a state space.
///
/// All of them act within label blocks, so the result is always
/// label-preserving. Shift and jitter require the block embeddings to form a
/// regular 1-D or 2-D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum FiniteAugmentation {
    /// Deterministic cyclic shift by a fixed per-axis cell offset.
    CyclicShift { offsets: Vec<i64> },
    /// Gaussian transition density over the block grid, row-normalized:
    /// `p(u -> v) ∝ exp(-|e_u - e_v|^2 / (2 sigma^2))`.
    DiscretizedJitter { sigma: f64 },
    /// Lossy collapse: each state moves with probability one to the nearest
    /// other state in its block (ties toward the lowest state index);
    /// singleton blocks stay put.
    DropoutToNeighbor,
}

/// Builds the matrix for a structured augmentation kind.
pub fn build_finite_augmentation(
    space: &Arc<StateSpace>,
    kind: &FiniteAugmentation,
) -> Result<AugmentationMatrix> {
    let n = space.len();
    let mut m = DMatrix::zeros(n, n);
    for &label in space.labels() {
        match kind {
            FiniteAugmentation::CyclicShift { offsets } => {
                let grid = space.grid_layout(label)?;
                let rank = if grid.shape.1 == 1 { 1 } else { 2 };
                if offsets.len() != rank {
                    return Err(Error::InvalidParameter(format!(
                        "cyclic shift has {} offsets but the label {} grid is {}-dimensional",
                        offsets.len(),
                        label,
                        rank
                    )));
                }
                let (n0, n1) = grid.shape;
                let o0 = offsets[0].rem_euclid(n0 as i64) as usize;
                let o1 = if rank == 2 {
                    offsets[1].rem_euclid(n1 as i64) as usize
                } else {
                    0
                };
                for i in 0..n0 {
                    for j in 0..n1 {
                        let from = grid.state_at(i, j);
                        let to = grid.state_at((i + o0) % n0, (j + o1) % n1);
                        m[(from, to)] = 1.0;
                    }
                }
            }
            FiniteAugmentation::DiscretizedJitter { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "jitter sigma must be positive, got {sigma}"
                    )));
                }
                let grid = space.grid_layout(label)?;
                let block = &grid.states;
                for &u in block {
                    let eu = &space.state(u).embedding;
                    let mut weights = Vec::with_capacity(block.len());
                    let mut total = 0.0;
                    for &v in block {
                        let ev = &space.state(v).embedding;
                        let d2: f64 = eu
                            .iter()
                            .zip(ev.iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        let w = (-d2 / (2.0 * sigma * sigma)).exp();
                        weights.push((v, w));
                        total += w;
                    }
                    for (v, w) in weights {
                        m[(u, v)] = w / total;
                    }
                }
            }
            FiniteAugmentation::DropoutToNeighbor => {
                let block = space.label_block(label);
                for &u in &block {
                    if block.len() == 1 {
                        m[(u, u)] = 1.0;
                        continue;
                    }
                    let eu = &space.state(u).embedding;
                    let mut best: Option<(f64, usize)> = None;
                    for &v in &block {
                        if v == u {
                            continue;
                        }
                        let ev = &space.state(v).embedding;
                        let d2: f64 = eu
                            .iter()
                            .zip(ev.iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        let better = match best {
                            None => true,
                            Some((bd, bv)) => d2 < bd || (d2 == bd && v < bv),
                        };
                        if better {
                            best = Some((d2, v));
                        }
                    }
                    m[(u, best.expect("block has another state").1)] = 1.0;
                }
            }
        }
    }
    AugmentationMatrix::new(Arc::clone(space), m)
}

/// Makes an augmentation symmetric while keeping it row-stochastic.
///
/// Symmetric inputs are returned unchanged. Otherwise each unordered pair
/// `(u, v)` receives the symmetric share `(A(u,v) + A(v,u)) / n` with
/// `n = |Omega|`, and whatever mass a row then lacks stays on the diagonal as
/// a probability of not transitioning. The off-diagonal part is the symmetric
/// part of `A` rescaled by `2/n`, which is always small enough to leave every
/// diagonal nonnegative, so no further normalization is needed. For the lossy
/// three-state collapse `[[0,0,1],[0,0,1],[0,0,1]]` this yields
/// `[[2/3,0,1/3],[0,2/3,1/3],[1/3,1/3,1/3]]`.
pub fn symmetrize(a: &AugmentationMatrix) -> AugmentationMatrix {
    if a.asymmetry() <= ROW_SUM_TOL {
        return a.clone();
    }
    let n = a.matrix.nrows();
    let scale = n as f64;
    let mut s = DMatrix::zeros(n, n);
    for u in 0..n {
        for v in (u + 1)..n {
            let w = (a.matrix[(u, v)] + a.matrix[(v, u)]) / scale;
            s[(u, v)] = w;
            s[(v, u)] = w;
        }
    }
    for u in 0..n {
        let off: f64 = s.row(u).iter().sum();
        s[(u, u)] = (1.0 - off).max(0.0);
    }
    AugmentationMatrix::new(Arc::clone(&a.space), s)
        .expect("symmetrized matrix is stochastic by construction")
}
