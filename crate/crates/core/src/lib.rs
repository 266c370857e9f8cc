//! Metric-learning toolkit built around the histogram loss.
//!
//! A batch of items is embedded by a small feed-forward encoder whose last
//! step length-normalizes every vector. All pairwise scalar products are
//! split into same-class and different-class sample sets, each estimated as a
//! soft histogram on a fixed grid over `[-1, +1]`, and the loss is the
//! probability that a random negative pair out-scores a random positive pair.
//! That probability is piecewise-differentiable in the similarities, so the
//! whole chain trains by ordinary backpropagation.
//!
//! The crate also ships the baselines the histogram loss is usually compared
//! against (binomial deviance, semi-hard triplet), a class-balanced batch
//! sampler, Recall@K evaluation, and brute-force oracles for verifying the
//! fast paths.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod matrix;
pub mod optim;
pub mod oracle;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{BatchSampler, Dataset};
pub use encoder::{backward, forward, l2_normalize_backward, EncoderParams, ForwardTrace, Gradients};
pub use error::{Error, Result};
pub use eval::{export_histograms, recall_at_k, MetricsReport, RecallResult, RunMeta};
pub use losses::{
    binomial_deviance, histogram_loss, histogram_loss_backward, histogram_loss_margin,
    histogram_margin_backward, pairwise_similarities, similarity_backward, soft_histogram,
    split_similarities, triplet_semihard, BinomialDevianceParams, LossResult, MatchLabels,
    PairSim, SimilaritySets, SoftHistogram,
};
pub use matrix::Matrix;
pub use optim::{adam_step, AdamHyper, AdamState};
pub use train::{train, LossKind, TrainConfig, TrainOutcome};
