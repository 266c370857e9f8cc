//! Triplet loss with semi-hard negative selection.
//!
//! For every ordered (anchor, positive) pair of same-class items, a negative
//! is *semi-hard* when it is farther than the positive but still violates the
//! margin under Euclidean distance:
//!
//! ```text
//! d(a, p) < d(a, n) < d(a, p) + margin
//! ```
//!
//! The loss averages `margin + d(a,p) - d(a,n)` over all selected triplets
//! and returns subgradients with respect to the embeddings. The selection is
//! treated as constant under differentiation.

use crate::error::{Error, Result};
use crate::losses::{LossResult, MatchLabels};
use crate::matrix::Matrix;

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Semi-hard triplet loss over a batch of embeddings.
///
/// A batch with no valid (anchor, positive, negative) triple is a caller
/// error; a batch where no triplet is semi-hard yields loss 0 with
/// `selected_triplets = Some(0)`.
pub fn triplet_semihard(y: &Matrix, labels: &MatchLabels, margin: f64) -> Result<LossResult> {
    let n = y.rows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            n
        )));
    }
    if margin <= 0.0 || !margin.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "triplet margin must be positive and finite, got {}",
            margin
        )));
    }

    // Pairwise Euclidean distances, computed once.
    let mut dist = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(y.row(i), y.row(j));
            dist.set(i, j, d);
            dist.set(j, i, d);
        }
    }

    let mut any_triple = false;
    let mut selected = 0usize;
    let mut hinge_sum = 0.0;
    // Subgradient accumulators per triplet, merged after the averaging factor
    // is known.
    let mut grad = Matrix::zeros(n, y.cols());
    let mut contributions: Vec<(usize, usize, usize)> = Vec::new();

    for anchor in 0..n {
        for pos in 0..n {
            if pos == anchor || !labels.matches(anchor, pos) {
                continue;
            }
            let d_pos = dist.get(anchor, pos);
            for neg in 0..n {
                if neg == anchor || neg == pos || labels.matches(anchor, neg) {
                    continue;
                }
                any_triple = true;
                let d_neg = dist.get(anchor, neg);
                if d_pos < d_neg && d_neg < d_pos + margin {
                    selected += 1;
                    hinge_sum += margin + d_pos - d_neg;
                    contributions.push((anchor, pos, neg));
                }
            }
        }
    }

    if !any_triple {
        return Err(Error::BatchComposition(
            "batch contains no (anchor, positive, negative) triple".into(),
        ));
    }
    if selected == 0 {
        return Ok(LossResult {
            loss: 0.0,
            pos_grads: vec![],
            neg_grads: vec![],
            grad_embeddings: Some(grad),
            selected_triplets: Some(0),
        });
    }

    let scale = 1.0 / selected as f64;
    for (anchor, pos, neg) in contributions {
        let d_pos = dist.get(anchor, pos);
        let d_neg = dist.get(anchor, neg);
        // d(margin + d_pos - d_neg)/dy, guarding coincident points whose
        // distance subgradient is taken as zero.
        if d_pos > 0.0 {
            for c in 0..y.cols() {
                let dir = (y.get(anchor, c) - y.get(pos, c)) / d_pos;
                grad.set(anchor, c, grad.get(anchor, c) + scale * dir);
                grad.set(pos, c, grad.get(pos, c) - scale * dir);
            }
        }
        if d_neg > 0.0 {
            for c in 0..y.cols() {
                let dir = (y.get(anchor, c) - y.get(neg, c)) / d_neg;
                grad.set(anchor, c, grad.get(anchor, c) - scale * dir);
                grad.set(neg, c, grad.get(neg, c) + scale * dir);
            }
        }
    }

    Ok(LossResult {
        loss: hinge_sum * scale,
        pos_grads: vec![],
        neg_grads: vec![],
        grad_embeddings: Some(grad),
        selected_triplets: Some(selected),
    })
}
