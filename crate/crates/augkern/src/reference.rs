//! Bundled demonstration chains used by the CLI examples and the test
//! suite. All of them are small enough to solve exactly yet rich enough to
//! exercise every stage of the pipeline.

use std::sync::Arc;

use crate::augmentation::{build_finite_augmentation, symmetrize, FiniteAugmentation};
use crate::chain::{ChainSpec, DatasetPoint};
use crate::error::{Error, Result};
use crate::space::StateSpace;

/// One anchor point of a reference chain: a labelled grid position carrying
/// retraction mass `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub label: i32,
    pub position: f64,
    pub gamma: f64,
}

/// Two-state chain with a single swap move and all retraction mass on the
/// first state. Small enough to solve by hand: the stationary distribution
/// is `[2/3, 1/3]` at unit rate.
pub fn two_state_swap() -> ChainSpec {
    let space = Arc::new(StateSpace::line_grid(2, &[0]).expect("two-point grid"));
    let swap =
        build_finite_augmentation(&space, &FiniteAugmentation::CyclicShift { offsets: vec![1] })
            .expect("swap on a two-point grid");
    ChainSpec::new(
        Arc::clone(&space),
        vec![(swap, 1.0)],
        vec![DatasetPoint {
            state: 0,
            gamma: 1.0,
        }],
    )
    .expect("two-state swap chain")
}

/// Two-class line chain: `points_per_class` grid positions per label, a
/// symmetrized discretized jitter acting within each label block, and the
/// given anchor points as the dataset.
pub fn two_class_jitter(
    points_per_class: usize,
    sigma: f64,
    beta: f64,
    anchors: &[Anchor],
) -> Result<ChainSpec> {
    let space = Arc::new(StateSpace::line_grid(points_per_class, &[-1, 1])?);
    let jitter = symmetrize(&build_finite_augmentation(
        &space,
        &FiniteAugmentation::DiscretizedJitter { sigma },
    )?);
    let dataset = anchors
        .iter()
        .map(|a| {
            let state = space.find(a.label, &[a.position]).ok_or_else(|| {
                Error::UnknownState(format!("label {} at position {}", a.label, a.position))
            })?;
            Ok(DatasetPoint {
                state,
                gamma: a.gamma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ChainSpec::new(Arc::clone(&space), vec![(jitter, beta)], dataset)
}

/// Bundled 40-state two-class jitter chain (20 grid positions per label,
/// jitter width 2.5, rate 1). Positive anchors sit left of center, negative
/// anchors right, so every grid position has a decisive majority label.
pub fn two_class_jitter_40() -> ChainSpec {
    two_class_jitter(
        20,
        2.5,
        1.0,
        &[
            Anchor {
                label: 1,
                position: 4.0,
                gamma: 0.3,
            },
            Anchor {
                label: 1,
                position: 8.0,
                gamma: 0.3,
            },
            Anchor {
                label: -1,
                position: 12.0,
                gamma: 0.2,
            },
            Anchor {
                label: -1,
                position: 16.0,
                gamma: 0.2,
            },
        ],
    )
    .expect("bundled 40-state chain")
}

/// Bundled 10-state two-class jitter chain (5 grid positions per label,
/// jitter width 1.2, rate 1). The two anchors mirror each other around the
/// grid center but carry different masses, so every position keeps a margin
/// of at least 20% between the label masses.
pub fn two_class_jitter_10() -> ChainSpec {
    two_class_jitter(
        5,
        1.2,
        1.0,
        &[
            Anchor {
                label: 1,
                position: 1.0,
                gamma: 0.6,
            },
            Anchor {
                label: -1,
                position: 3.0,
                gamma: 0.4,
            },
        ],
    )
    .expect("bundled 10-state chain")
}

/// Looks a bundled chain up by its CLI name.
pub fn by_name(name: &str) -> Result<ChainSpec> {
    match name {
        "two-state-swap" => Ok(two_state_swap()),
        "jitter-40" => Ok(two_class_jitter_40()),
        "jitter-10" => Ok(two_class_jitter_10()),
        other => Err(Error::Config {
            field: "chain.reference".into(),
            message: format!(
                "unknown reference chain `{other}` (available: two-state-swap, jitter-40, jitter-10)"
            ),
        }),
    }
}

/// Per-position label decisiveness of a two-class chain: for every grid
/// position, the signed relative gap between the stationary masses of the
/// two labels, `(pi(+1) - pi(-1)) / (pi(+1) + pi(-1))`, along with the
/// total mass at the position. Used to confirm that sampled majority votes
/// are stable at the bundled chains' sample sizes.
pub fn label_margins(spec: &ChainSpec) -> Result<Vec<(f64, f64)>> {
    let space = spec.space();
    let pi = spec.stationary_distribution()?;
    let mut margins = Vec::new();
    let mut position = 0usize;
    loop {
        let embedding = [position as f64];
        let plus = space.find(1, &embedding);
        let minus = space.find(-1, &embedding);
        let (Some(p), Some(m)) = (plus, minus) else {
            break;
        };
        let mass_plus = pi.get(p);
        let mass_minus = pi.get(m);
        let total = mass_plus + mass_minus;
        margins.push(((mass_plus - mass_minus) / total, total));
        position += 1;
    }
    if margins.is_empty() {
        return Err(Error::InvalidParameter(
            "label margins need a two-class line chain".into(),
        ));
    }
    Ok(margins)
}
