//! Finite state spaces of labeled, embedded points.
//!
//! A [`StateSpace`] is the product of a finite input set and a finite label
//! set: every state carries an embedding vector (its input-level coordinates)
//! and an integer label. Augmentation matrices, chains, and kernels are all
//! indexed by positions in one shared space, so the space owns id lookup,
//! label bookkeeping, and the grid detection used by structured transforms.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported state-space size; everything downstream uses dense
/// linear algebra, so the cap keeps memory and solve times predictable.
pub const MAX_STATES: usize = 5000;

/// One state: a unique id, an embedding vector, and an integer label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub id: String,
    pub embedding: Vec<f64>,
    pub label: i32,
}

/// Immutable collection of states with id and (label, embedding) lookup.
#[derive(Debug)]
pub struct StateSpace {
    states: Vec<State>,
    by_id: HashMap<String, usize>,
    by_key: HashMap<(i32, Vec<u64>), usize>,
    labels: Vec<i32>,
    dim: usize,
}

/// Bitwise lookup key for an embedding; exact match only.
pub(crate) fn embedding_key(embedding: &[f64]) -> Vec<u64> {
    embedding.iter().map(|v| v.to_bits()).collect()
}

impl StateSpace {
    /// Builds a space from a list of states.
    ///
    /// Requires: a non-empty list within [`MAX_STATES`], unique ids that are
    /// safe to use as CSV header fields (no commas, quotes, or newlines), a
    /// common embedding dimension with finite entries, and no two states that
    /// share both a label and an embedding.
    pub fn new(states: Vec<State>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidParameter(
                "state space must contain at least one state".into(),
            ));
        }
        if states.len() > MAX_STATES {
            return Err(Error::SpaceTooLarge {
                size: states.len(),
                cap: MAX_STATES,
            });
        }
        let dim = states[0].embedding.len();
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "state embeddings must have at least one coordinate".into(),
            ));
        }
        let mut by_id = HashMap::with_capacity(states.len());
        let mut by_key = HashMap::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            if s.id.is_empty() || s.id.contains([',', '"', '\n', '\r']) {
                return Err(Error::InvalidParameter(format!(
                    "state id `{}` is empty or contains CSV-breaking characters",
                    s.id
                )));
            }
            if s.embedding.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "state `{}` has embedding dimension {} but the space uses {}",
                    s.id,
                    s.embedding.len(),
                    dim
                )));
            }
            if !s.embedding.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "state `{}` has a non-finite embedding entry",
                    s.id
                )));
            }
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate state id `{}`",
                    s.id
                )));
            }
            if by_key
                .insert((s.label, embedding_key(&s.embedding)), i)
                .is_some()
            {
                return Err(Error::InvalidParameter(format!(
                    "state `{}` duplicates another state's (label, embedding) pair",
                    s.id
                )));
            }
        }
        let mut labels: Vec<i32> = states.iter().map(|s| s.label).collect();
        labels.sort_unstable();
        labels.dedup();
        Ok(StateSpace {
            states,
            by_id,
            by_key,
            labels,
            dim,
        })
    }

    /// Convenience constructor: a regular 1-D grid at integer positions
    /// `0..n_points`, replicated once per label. State ids are `x{i}y{label}`.
    pub fn line_grid(n_points: usize, labels: &[i32]) -> Result<Self> {
        if n_points == 0 || labels.is_empty() {
            return Err(Error::InvalidParameter(
                "line grid needs at least one point and one label".into(),
            ));
        }
        let mut states = Vec::with_capacity(n_points * labels.len());
        for &label in labels {
            for i in 0..n_points {
                states.push(State {
                    id: format!("x{i}y{label}"),
                    embedding: vec![i as f64],
                    label,
                });
            }
        }
        Self::new(states)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Embedding dimension shared by all states.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &State {
        &self.states[index]
    }

    /// Sorted distinct labels present in the space.
    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// Position of a state by id.
    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownState(id.to_string()))
    }

    /// State with the given label whose embedding matches `embedding` exactly
    /// (bitwise), if any.
    pub fn find(&self, label: i32, embedding: &[f64]) -> Option<usize> {
        self.by_key
            .get(&(label, embedding_key(embedding)))
            .copied()
    }

    /// Indices of all states with the given label, ascending.
    pub fn label_block(&self, label: i32) -> Vec<usize> {
        (0..self.states.len())
            .filter(|&i| self.states[i].label == label)
            .collect()
    }

    /// Detects a regular 1-D or 2-D grid over the embeddings of one label
    /// block. Structured transforms (cyclic shift, discretized jitter) are
    /// only defined on such blocks.
    pub fn grid_layout(&self, label: i32) -> Result<GridLayout> {
        let block = self.label_block(label);
        if block.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "no states with label {label}"
            )));
        }
        match self.dim {
            1 => {
                let mut order: Vec<usize> = block.clone();
                order.sort_by(|&a, &b| {
                    self.states[a].embedding[0]
                        .partial_cmp(&self.states[b].embedding[0])
                        .expect("finite embeddings")
                });
                let values: Vec<f64> =
                    order.iter().map(|&i| self.states[i].embedding[0]).collect();
                check_uniform_spacing("grid axis 0", &values)?;
                Ok(GridLayout {
                    shape: (order.len(), 1),
                    states: order,
                })
            }
            2 => {
                let mut xs: Vec<f64> = block.iter().map(|&i| self.states[i].embedding[0]).collect();
                let mut ys: Vec<f64> = block.iter().map(|&i| self.states[i].embedding[1]).collect();
                xs.sort_by(|a, b| a.partial_cmp(b).expect("finite embeddings"));
                xs.dedup_by(|a, b| a.to_bits() == b.to_bits());
                ys.sort_by(|a, b| a.partial_cmp(b).expect("finite embeddings"));
                ys.dedup_by(|a, b| a.to_bits() == b.to_bits());
                if xs.len() * ys.len() != block.len() {
                    return Err(Error::GridRequired {
                        kind: "structured transform",
                        reason: format!(
                            "label {} block has {} states but its axes span a {}x{} product",
                            label,
                            block.len(),
                            xs.len(),
                            ys.len()
                        ),
                    });
                }
                check_uniform_spacing("grid axis 0", &xs)?;
                check_uniform_spacing("grid axis 1", &ys)?;
                let mut cells = Vec::with_capacity(block.len());
                for &x in &xs {
                    for &y in &ys {
                        let idx = self.find(label, &[x, y]).ok_or_else(|| Error::GridRequired {
                            kind: "structured transform",
                            reason: format!(
                                "label {label} block is missing the grid point ({x}, {y})"
                            ),
                        })?;
                        cells.push(idx);
                    }
                }
                Ok(GridLayout {
                    shape: (xs.len(), ys.len()),
                    states: cells,
                })
            }
            d => Err(Error::GridRequired {
                kind: "structured transform",
                reason: format!("embedding dimension is {d}; only 1-D and 2-D grids are supported"),
            }),
        }
    }
}

/// A regular grid over one label block: `states[i * shape.1 + j]` is the
/// state index at cell `(i, j)`; 1-D grids use `shape.1 == 1`.
#[derive(Debug, Clone)]
pub struct GridLayout {
    pub shape: (usize, usize),
    pub states: Vec<usize>,
}

impl GridLayout {
    pub fn cell_count(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn state_at(&self, i: usize, j: usize) -> usize {
        self.states[i * self.shape.1 + j]
    }
}

fn check_uniform_spacing(what: &str, values: &[f64]) -> Result<()> {
    if values.len() < 3 {
        return Ok(());
    }
    let span = values[values.len() - 1] - values[0];
    let step = span / (values.len() - 1) as f64;
    if step <= 0.0 {
        return Err(Error::GridRequired {
            kind: "structured transform",
            reason: format!("{what} has coincident coordinates"),
        });
    }
    let tol = 1e-9 * span.abs().max(1.0);
    for w in values.windows(2) {
        if ((w[1] - w[0]) - step).abs() > tol {
            return Err(Error::GridRequired {
                kind: "structured transform",
                reason: format!(
                    "{what} spacing is irregular ({} vs expected {step})",
                    w[1] - w[0]
                ),
            });
        }
    }
    Ok(())
}
