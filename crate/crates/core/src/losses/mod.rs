//! Embedding losses and their analytic gradients.
//!
//! All losses operate on similarities of L2-normalized embeddings. A batch is
//! reduced to the two sample sets `S+` (same-class pairs) and `S-`
//! (different-class pairs); the histogram loss estimates the probability that
//! a random negative pair is more similar than a random positive pair, the
//! binomial deviance scores pairs independently, and the semi-hard triplet
//! loss works on anchor/positive/negative triples directly.

mod binomial;
mod histogram;
mod triplet;

pub use binomial::{binomial_deviance, BinomialDevianceParams};
pub use histogram::{
    histogram_loss, histogram_loss_backward, histogram_loss_counted, histogram_loss_margin,
    histogram_margin_backward, node_assignment, soft_histogram, soft_histogram_counted,
    SoftHistogram,
};
pub use triplet::triplet_semihard;

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};

/// Unit-norm tolerance accepted by [`pairwise_similarities`].
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Class labels for a batch; two items match iff their class ids are equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchLabels {
    classes: Vec<u32>,
}

impl MatchLabels {
    pub fn new(classes: Vec<u32>) -> Self {
        MatchLabels { classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class(&self, i: usize) -> u32 {
        self.classes[i]
    }

    /// The match label m_ij, defined for i != j only.
    pub fn matches(&self, i: usize, j: usize) -> bool {
        debug_assert_ne!(i, j, "match labels are defined for distinct items");
        self.classes[i] == self.classes[j]
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }
}

/// One unordered pair `(i, j)` with `i < j` and its similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSim {
    pub i: usize,
    pub j: usize,
    pub sim: f64,
}

/// The positive and negative similarity sample sets of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySets {
    pub positive: Vec<PairSim>,
    pub negative: Vec<PairSim>,
}

impl SimilaritySets {
    pub fn positive_sims(&self) -> Vec<f64> {
        self.positive.iter().map(|p| p.sim).collect()
    }

    pub fn negative_sims(&self) -> Vec<f64> {
        self.negative.iter().map(|p| p.sim).collect()
    }
}

/// Loss value plus whatever gradients the loss computes.
///
/// Pairwise losses fill `pos_grads`/`neg_grads` (aligned with the entries of
/// the [`SimilaritySets`] they were given); the triplet loss differentiates
/// with respect to the embeddings directly and fills `grad_embeddings`.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    pub pos_grads: Vec<f64>,
    pub neg_grads: Vec<f64>,
    pub grad_embeddings: Option<Matrix>,
    /// Triplet loss only: how many semi-hard triplets contributed. Zero means
    /// "no valid triplet in the batch" (loss 0 by convention, not an error).
    pub selected_triplets: Option<usize>,
}

impl LossResult {
    pub(crate) fn pairwise(loss: f64, pos_grads: Vec<f64>, neg_grads: Vec<f64>) -> Self {
        LossResult {
            loss,
            pos_grads,
            neg_grads,
            grad_embeddings: None,
            selected_triplets: None,
        }
    }
}

/// Scalar products of all embedding rows, clamped to `[-1, +1]`.
///
/// Rows must be unit-normalized (within [`NORM_TOLERANCE`]); the matrix is
/// exactly symmetric and the diagonal is set to 1 (ignored downstream).
pub fn pairwise_similarities(y: &Matrix) -> Result<Matrix> {
    let n = y.rows();
    for i in 0..n {
        let norm = l2_norm(y.row(i));
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::ContractViolation(format!(
                "row {} has norm {} (not unit within {})",
                i, norm, NORM_TOLERANCE
            )));
        }
    }
    let mut sims = Matrix::zeros(n, n);
    for i in 0..n {
        sims.set(i, i, 1.0);
        for j in (i + 1)..n {
            let s = dot(y.row(i), y.row(j)).clamp(-1.0, 1.0);
            sims.set(i, j, s);
            sims.set(j, i, s);
        }
    }
    Ok(sims)
}

/// Splits all unordered pairs `i < j` into the positive and negative sample
/// sets according to the match labels.
pub fn split_similarities(sims: &Matrix, labels: &MatchLabels) -> Result<SimilaritySets> {
    let n = labels.len();
    if sims.rows() != n || sims.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "similarity matrix {}x{} does not match {} labels",
            sims.rows(),
            sims.cols(),
            n
        )));
    }
    if n < 2 {
        return Err(Error::BatchComposition(format!(
            "need at least 2 items, got {}",
            n
        )));
    }
    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let pair = PairSim {
                i,
                j,
                sim: sims.get(i, j),
            };
            if labels.matches(i, j) {
                positive.push(pair);
            } else {
                negative.push(pair);
            }
        }
    }
    if positive.is_empty() {
        return Err(Error::BatchComposition(
            "batch has no positive pairs; resample".into(),
        ));
    }
    if negative.is_empty() {
        return Err(Error::BatchComposition(
            "batch has no negative pairs; resample".into(),
        ));
    }
    Ok(SimilaritySets { positive, negative })
}

/// Backpropagates per-pair similarity gradients to the embeddings:
/// `dL/dy_i += g_ij * y_j` and `dL/dy_j += g_ij * y_i` for every pair.
pub fn similarity_backward(
    y: &Matrix,
    sets: &SimilaritySets,
    pos_grads: &[f64],
    neg_grads: &[f64],
) -> Result<Matrix> {
    if pos_grads.len() != sets.positive.len() || neg_grads.len() != sets.negative.len() {
        return Err(Error::ShapeMismatch(format!(
            "pair gradient lengths {}/{} do not match sets {}/{}",
            pos_grads.len(),
            neg_grads.len(),
            sets.positive.len(),
            sets.negative.len()
        )));
    }
    let n = y.rows();
    let mut grad = Matrix::zeros(n, y.cols());
    let mut accumulate = |pairs: &[PairSim], grads: &[f64]| -> Result<()> {
        for (pair, &g) in pairs.iter().zip(grads) {
            if pair.i >= n || pair.j >= n {
                return Err(Error::ShapeMismatch(format!(
                    "pair ({}, {}) out of range for {} rows",
                    pair.i, pair.j, n
                )));
            }
            if g == 0.0 {
                continue;
            }
            for c in 0..y.cols() {
                let gi = grad.get(pair.i, c) + g * y.get(pair.j, c);
                grad.set(pair.i, c, gi);
                let gj = grad.get(pair.j, c) + g * y.get(pair.i, c);
                grad.set(pair.j, c, gj);
            }
        }
        Ok(())
    };
    accumulate(&sets.positive, pos_grads)?;
    accumulate(&sets.negative, neg_grads)?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_similarity_one() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let sims = pairwise_similarities(&y).unwrap();
        assert_eq!(sims.get(0, 1), 1.0);
    }

    #[test]
    fn orthogonal_rows_similarity_zero() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let sims = pairwise_similarities(&y).unwrap();
        assert_eq!(sims.get(0, 1), 0.0);
    }

    #[test]
    fn opposite_rows_similarity_minus_one() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let sims = pairwise_similarities(&y).unwrap();
        assert_eq!(sims.get(0, 1), -1.0);
    }

    #[test]
    fn non_normalized_rows_rejected() {
        let y = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            pairwise_similarities(&y),
            Err(Error::ContractViolation(_))
        ));
    }

    fn toy_sims(n: usize) -> Matrix {
        let mut sims = Matrix::zeros(n, n);
        for i in 0..n {
            sims.set(i, i, 1.0);
            for j in (i + 1)..n {
                let s = ((i + j) as f64 / (2 * n) as f64) - 0.5;
                sims.set(i, j, s);
                sims.set(j, i, s);
            }
        }
        sims
    }

    #[test]
    fn split_counts_small_cases() {
        let labels = MatchLabels::new(vec![0, 0, 1]);
        let sets = split_similarities(&toy_sims(3), &labels).unwrap();
        assert_eq!(sets.positive.len(), 1);
        assert_eq!(sets.negative.len(), 2);

        let labels = MatchLabels::new(vec![0, 0, 1, 1]);
        let sets = split_similarities(&toy_sims(4), &labels).unwrap();
        assert_eq!(sets.positive.len(), 2);
        assert_eq!(sets.negative.len(), 4);
        assert_eq!(sets.positive.len() + sets.negative.len(), 4 * 3 / 2);
    }

    #[test]
    fn split_rejects_all_distinct_labels() {
        let labels = MatchLabels::new(vec![0, 1, 2]);
        assert!(matches!(
            split_similarities(&toy_sims(3), &labels),
            Err(Error::BatchComposition(_))
        ));
    }

    #[test]
    fn split_rejects_single_class() {
        let labels = MatchLabels::new(vec![4, 4, 4]);
        assert!(matches!(
            split_similarities(&toy_sims(3), &labels),
            Err(Error::BatchComposition(_))
        ));
    }

    #[test]
    fn similarity_backward_single_pair() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let sets = SimilaritySets {
            positive: vec![PairSim { i: 0, j: 1, sim: 0.0 }],
            negative: vec![],
        };
        let grad = similarity_backward(&y, &sets, &[1.0], &[]).unwrap();
        assert_eq!(grad.row(0), y.row(1));
        assert_eq!(grad.row(1), y.row(0));
    }

    #[test]
    fn similarity_backward_zero_grads() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let sets = SimilaritySets {
            positive: vec![PairSim { i: 0, j: 1, sim: 0.0 }],
            negative: vec![],
        };
        let grad = similarity_backward(&y, &sets, &[0.0], &[]).unwrap();
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn similarity_backward_rejects_bad_index() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let sets = SimilaritySets {
            positive: vec![PairSim { i: 0, j: 5, sim: 0.0 }],
            negative: vec![],
        };
        assert!(matches!(
            similarity_backward(&y, &sets, &[1.0], &[]),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
