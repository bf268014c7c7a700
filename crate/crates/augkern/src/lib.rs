//! Markov-chain models of data augmentation.
//!
//! Composing random label-preserving transforms with occasional retractions
//! to the training set defines a Markov chain over a finite state space of
//! (input, label) pairs. This crate builds those chains, computes their
//! stationary and finite-time distributions, extracts the kernel the chain
//! induces, and compares the resulting kernel classifier against k-NN on
//! chain samples. A second group of modules approximates augmented training
//! objectives (exact, first-order feature averaging, second-order variance
//! correction) and provides training-free diagnostics for choosing between
//! candidate transforms.

pub mod augmentation;
pub mod chain;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod knn;
pub mod loss;
pub mod objective;
pub mod reference;
pub mod rng;
pub mod sampler;
pub mod space;
pub(crate) mod util;

pub use augmentation::{
    build_finite_augmentation, symmetrize, AugmentationMatrix, FiniteAugmentation,
};
pub use chain::{
    burn_in_steps, mixing_bound, ChainSpec, DatasetPoint, DistributionVector, Move,
    SurjectivityReport, Trajectory,
};
pub use data::{gaussian_mixture, Dataset};
pub use diagnostics::{
    alignment_estimate, averaged_alignment, feature_invariance, feature_invariance_ratio,
    kernel_target_alignment, rank_transformations, AlignmentEstimate, RankingReport, RankingRow,
};
pub use error::{Error, Result};
pub use features::{averaged_features, averaged_kernel, FeatureMap, RandomFourierMap};
pub use io::{
    format_float, read_matrix_csv, sha256_hex, write_csv, write_distribution_csv,
    write_matrix_csv, Manifest, MANIFEST_REFERENCE,
};
pub use kernel::{
    bayes_classify, induced_kernel, jitter_kernel_check, resolvent_kernel, update_kernel,
    verify_kernel_properties, InducedKernel, JitterKernelReport, KernelClassifier, KernelMatrix,
    KernelPropertyReport, KernelUpdateReport,
};
pub use knn::{
    equivalence_experiment, knn_classify, AgreementRow, AgreementSummary, EquivalenceConfig,
    EquivalenceReport, KRule, SampleSet,
};
pub use loss::{LossModel, ScalarLossEval, VectorLossEval};
pub use reference::{
    label_margins, two_class_jitter, two_class_jitter_10, two_class_jitter_40, two_state_swap,
    Anchor,
};

pub use objective::{
    prediction_kl, ObjectiveMode, PreparedObjective, Prop1Report, TrainResult, TrainRow,
};
pub use sampler::{Expectation, NoiseDiscretization, SupportAtom, TransformSampler};
pub use space::{State, StateSpace};
