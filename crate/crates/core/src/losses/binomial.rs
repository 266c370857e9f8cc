//! Binomial deviance loss over pairwise similarities.
//!
//! ```text
//! J = sum_ij w_ij * ln(1 + exp(-alpha * (s_ij - beta) * m_ij))
//! ```
//!
//! with `m_ij = 1` for positive pairs and `-C` for negative pairs, and
//! `w_ij = 1/n1` (positives) or `1/n2` (negatives), computed per mini-batch.

use crate::error::{Error, Result};
use crate::losses::{LossResult, SimilaritySets};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialDevianceParams {
    pub alpha: f64,
    pub beta: f64,
    /// Negative cost C; 10 works well for re-identification-style data,
    /// 25 is the documented alternative.
    pub neg_cost: f64,
}

impl Default for BinomialDevianceParams {
    fn default() -> Self {
        BinomialDevianceParams {
            alpha: 2.0,
            beta: 0.2,
            neg_cost: 10.0,
        }
    }
}

/// `ln(1 + e^z)` without overflow for large `z`.
fn ln_one_plus_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic sigmoid, stable on both tails.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss and per-pair similarity gradients for the batch.
pub fn binomial_deviance(
    sets: &SimilaritySets,
    params: &BinomialDevianceParams,
) -> Result<LossResult> {
    if sets.positive.is_empty() || sets.negative.is_empty() {
        return Err(Error::BatchComposition(
            "binomial deviance needs both positive and negative pairs".into(),
        ));
    }
    let w_pos = 1.0 / sets.positive.len() as f64;
    let w_neg = 1.0 / sets.negative.len() as f64;

    let mut loss = 0.0;
    let mut pos_grads = Vec::with_capacity(sets.positive.len());
    for pair in &sets.positive {
        let z = -params.alpha * (pair.sim - params.beta);
        loss += w_pos * ln_one_plus_exp(z);
        pos_grads.push(-w_pos * params.alpha * sigmoid(z));
    }
    let mut neg_grads = Vec::with_capacity(sets.negative.len());
    for pair in &sets.negative {
        let z = params.alpha * params.neg_cost * (pair.sim - params.beta);
        loss += w_neg * ln_one_plus_exp(z);
        neg_grads.push(w_neg * params.alpha * params.neg_cost * sigmoid(z));
    }
    Ok(LossResult::pairwise(loss, pos_grads, neg_grads))
}
