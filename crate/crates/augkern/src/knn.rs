//! k-nearest-neighbor classification on chain samples and the agreement
//! harness comparing it against the kernel classifier.
//!
//! Labels of a long chain trajectory, read through a k-NN vote, converge to
//! the prediction of the induced-kernel classifier. [`equivalence_experiment`]
//! measures that convergence: it samples trajectories at several lengths,
//! classifies held-out grid points with both predictors, and reports
//! per-length disagreement rates.
//!
//! Two k-NN implementations are provided: [`knn_classify`] is the literal
//! brute-force rule, and [`SampleSet::classify`] aggregates samples by state
//! first, which is orders of magnitude faster on long trajectories over
//! small spaces. They implement the same tie-breaking (equal distances
//! resolved by sample arrival order, vote ties by the smaller label) and are
//! tested to agree exactly.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{burn_in_steps, ChainSpec};
use crate::error::{Error, Result};
use crate::kernel::{induced_kernel, KernelClassifier};
use crate::rng::derive_seed;
use crate::space::StateSpace;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn majority(votes: &BTreeMap<i32, usize>) -> i32 {
    let mut best_label = 0;
    let mut best_count = 0;
    for (&label, &count) in votes {
        if count > best_count {
            best_label = label;
            best_count = count;
        }
    }
    best_label
}

fn check_query(space: &StateSpace, samples: &[usize], query: &[f64], k: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples to classify with".into()));
    }
    if k == 0 || k > samples.len() {
        return Err(Error::BadNeighborCount {
            k,
            n: samples.len(),
        });
    }
    if query.len() != space.dim() {
        return Err(Error::DimensionMismatch(format!(
            "query has dimension {}, states have {}",
            query.len(),
            space.dim()
        )));
    }
    Ok(())
}

/// Literal k-NN vote over samples given as state indices.
///
/// Neighbors are ordered by squared Euclidean distance with ties broken by
/// sample position; vote ties return the smaller label.
pub fn knn_classify(
    space: &StateSpace,
    samples: &[usize],
    query: &[f64],
    k: usize,
) -> Result<i32> {
    check_query(space, samples, query, k)?;
    if let Some(&s) = samples.iter().find(|&&s| s >= space.len()) {
        return Err(Error::InvalidParameter(format!(
            "sample state index {s} is out of range"
        )));
    }
    let mut order: Vec<(f64, usize)> = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| (dist2(&space.state(s).embedding, query), i))
        .collect();
    order.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes = BTreeMap::new();
    for &(_, i) in &order[..k] {
        *votes.entry(space.state(samples[i]).label).or_insert(0) += 1;
    }
    Ok(majority(&votes))
}

/// Chain samples aggregated by state for fast repeated k-NN queries.
///
/// Classification walks states in distance order and consumes whole
/// per-state sample counts at once; only a distance-tied group of
/// differently labeled states that straddles the k-th neighbor forces a
/// rescan of the raw trajectory, reproducing the literal arrival-order rule
/// exactly.
pub struct SampleSet<'a> {
    space: &'a StateSpace,
    samples: &'a [usize],
    counts: Vec<usize>,
    present: Vec<usize>,
}

impl<'a> SampleSet<'a> {
    pub fn new(space: &'a StateSpace, samples: &'a [usize]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("no samples to aggregate".into()));
        }
        let mut counts = vec![0usize; space.len()];
        for &s in samples {
            if s >= space.len() {
                return Err(Error::InvalidParameter(format!(
                    "sample state index {s} is out of range"
                )));
            }
            counts[s] += 1;
        }
        let present = (0..space.len()).filter(|&s| counts[s] > 0).collect();
        Ok(SampleSet {
            space,
            samples,
            counts,
            present,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// k-NN vote; exactly equivalent to [`knn_classify`] on the same samples.
    pub fn classify(&self, query: &[f64], k: usize) -> Result<i32> {
        check_query(self.space, self.samples, query, k)?;
        let mut dists: Vec<(f64, usize)> = self
            .present
            .iter()
            .map(|&s| (dist2(&self.space.state(s).embedding, query), s))
            .collect();
        dists.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut votes: BTreeMap<i32, usize> = BTreeMap::new();
        let mut remaining = k;
        let mut gi = 0;
        while gi < dists.len() && remaining > 0 {
            let d = dists[gi].0;
            let mut gj = gi;
            while gj < dists.len() && dists[gj].0 == d {
                gj += 1;
            }
            let group = &dists[gi..gj];
            let total: usize = group.iter().map(|&(_, s)| self.counts[s]).sum();
            if total <= remaining {
                for &(_, s) in group {
                    *votes.entry(self.space.state(s).label).or_insert(0) += self.counts[s];
                }
                remaining -= total;
            } else {
                let first_label = self.space.state(group[0].1).label;
                if group
                    .iter()
                    .all(|&(_, s)| self.space.state(s).label == first_label)
                {
                    *votes.entry(first_label).or_insert(0) += remaining;
                } else {
                    // Mixed labels at the cut: the literal rule takes the
                    // earliest-arriving samples, so replay arrival order.
                    let mut in_group = vec![false; self.space.len()];
                    for &(_, s) in group {
                        in_group[s] = true;
                    }
                    for &s in self.samples {
                        if in_group[s] {
                            *votes.entry(self.space.state(s).label).or_insert(0) += 1;
                            remaining -= 1;
                            if remaining == 0 {
                                break;
                            }
                        }
                    }
                }
                remaining = 0;
            }
            gi = gj;
        }
        Ok(majority(&votes))
    }
}

/// How the neighbor count scales with the sample count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum KRule {
    /// `k(n) = ceil(sqrt(n))`.
    #[default]
    Sqrt,
    Fixed { k: usize },
}

impl KRule {
    pub fn k_for(&self, n: usize) -> usize {
        match self {
            KRule::Sqrt => (n as f64).sqrt().ceil() as usize,
            KRule::Fixed { k } => *k,
        }
    }
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_k_rule() -> KRule {
    KRule::Sqrt
}

/// Configuration of the agreement experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    /// Trajectory lengths to test, each measured after burn-in.
    pub sample_counts: Vec<usize>,
    /// Independent chains per length.
    pub seeds: Vec<u64>,
    #[serde(default = "default_k_rule")]
    pub k_rule: KRule,
    /// Mixing tolerance that sets the burn-in length.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

/// One (length, seed, test point) comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgreementRow {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub test_state: String,
    pub knn_label: i32,
    pub kernel_label: i32,
    pub agree: bool,
}

/// Disagreement rate at one trajectory length, pooled over seeds and test
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementSummary {
    pub n: usize,
    pub k: usize,
    pub disagreement: f64,
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub rows: Vec<AgreementRow>,
    pub summary: Vec<AgreementSummary>,
    pub burn_in: usize,
}

/// Runs the k-NN / kernel-classifier agreement experiment.
///
/// For every sample count `n` and seed, a fresh trajectory of
/// `burn_in + n` steps is drawn (the burn-in prefix is discarded), each test
/// state's embedding is classified by k-NN over the trajectory and by the
/// induced-kernel classifier, and the two labels are compared. Per-cell
/// chains are seeded as `derive_seed(seed, length_index)` so every cell is
/// reproducible in isolation.
pub fn equivalence_experiment(
    spec: &ChainSpec,
    test_states: &[usize],
    config: &EquivalenceConfig,
) -> Result<EquivalenceReport> {
    if config.sample_counts.is_empty() {
        return Err(Error::InvalidParameter(
            "equivalence experiment needs at least one sample count".into(),
        ));
    }
    if config.seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "equivalence experiment needs at least one seed".into(),
        ));
    }
    if test_states.is_empty() {
        return Err(Error::InvalidParameter(
            "equivalence experiment needs at least one test state".into(),
        ));
    }
    if !(config.epsilon > 0.0 && config.epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mixing tolerance must lie in (0, 1), got {}",
            config.epsilon
        )));
    }
    let space = spec.space();
    for &t in test_states {
        if t >= space.len() {
            return Err(Error::InvalidParameter(format!(
                "test state index {t} is out of range"
            )));
        }
    }
    for &n in &config.sample_counts {
        let k = config.k_rule.k_for(n);
        if n == 0 || k == 0 || k > n {
            return Err(Error::BadNeighborCount { k, n });
        }
    }
    let reach = spec.check_surjectivity();
    if !reach.surjective {
        return Err(Error::NotSurjective {
            unreachable: reach.unreachable.len(),
            total: space.len(),
        });
    }
    spec.check_label_preservation()?;

    let induced = induced_kernel(spec, None)?;
    let classifier = KernelClassifier::new(&induced)?;
    let kernel_labels: Vec<i32> = test_states
        .iter()
        .map(|&t| classifier.classify(&space.state(t).embedding))
        .collect::<Result<_>>()?;
    let burn_in = burn_in_steps(spec.beta(), config.epsilon);

    let cells: Vec<(usize, usize)> = (0..config.sample_counts.len())
        .flat_map(|ni| (0..config.seeds.len()).map(move |si| (ni, si)))
        .collect();
    let blocks: Vec<Vec<AgreementRow>> = cells
        .into_par_iter()
        .map(|(ni, si)| -> Result<Vec<AgreementRow>> {
            let n = config.sample_counts[ni];
            let k = config.k_rule.k_for(n);
            let seed = derive_seed(config.seeds[si], ni as u64);
            let trajectory = spec.sample_trajectory(seed, burn_in + n)?;
            let samples = &trajectory[trajectory.len() - n..];
            let set = SampleSet::new(space, samples)?;
            test_states
                .iter()
                .zip(&kernel_labels)
                .map(|(&t, &kernel_label)| {
                    let knn_label = set.classify(&space.state(t).embedding, k)?;
                    Ok(AgreementRow {
                        n,
                        k,
                        seed: config.seeds[si],
                        test_state: space.state(t).id.clone(),
                        knn_label,
                        kernel_label,
                        agree: knn_label == kernel_label,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let per_length = config.seeds.len();
    let mut summary = Vec::with_capacity(config.sample_counts.len());
    for (ni, &n) in config.sample_counts.iter().enumerate() {
        let mut total = 0usize;
        let mut disagreements = 0usize;
        for block in &blocks[ni * per_length..(ni + 1) * per_length] {
            total += block.len();
            disagreements += block.iter().filter(|r| !r.agree).count();
        }
        summary.push(AgreementSummary {
            n,
            k: config.k_rule.k_for(n),
            disagreement: disagreements as f64 / total as f64,
        });
    }
    Ok(EquivalenceReport {
        rows: blocks.into_iter().flatten().collect(),
        summary,
        burn_in,
    })
}
