//! Soft similarity histograms and the histogram loss.
//!
//! Similarities live in `[-1, +1]`. A histogram has `R >= 2` nodes
//! `t_r = -1 + r * delta` (`r = 0..R-1`, `delta = 2/(R-1)`); each sample
//! splits its unit weight linearly between the two adjacent nodes, which is
//! triangular-kernel density estimation on a fixed grid. The loss is the
//! estimated probability that a random negative pair is at least as similar
//! as a random positive pair:
//!
//! ```text
//! L = sum_r h_minus[r] * cumsum(h_plus)[r]
//! ```
//!
//! and is piecewise-differentiable in every pairwise similarity.

use crate::error::{Error, Result};
use crate::losses::{LossResult, SimilaritySets};

/// Soft histogram over the uniform node grid on `[-1, +1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftHistogram {
    values: Vec<f64>,
    delta: f64,
}

impl SoftHistogram {
    /// Wraps raw node values. Intended for tests and oracles; `soft_histogram`
    /// is the estimation path.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let delta = node_step(values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numerical(
                "histogram values must be finite and non-negative".into(),
            ));
        }
        Ok(SoftHistogram { values, delta })
    }

    /// Number of nodes R.
    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Node position `t_r = -1 + r * delta`.
    pub fn node(&self, r: usize) -> f64 {
        node_position(r, self.delta)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Overlap with another histogram on the same grid:
    /// `sum_r min(h[r], other[r])`.
    pub fn overlap_mass(&self, other: &SoftHistogram) -> Result<f64> {
        check_same_grid(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.min(*b))
            .sum())
    }
}

fn node_step(r: usize) -> Result<f64> {
    if r < 2 {
        return Err(Error::InvalidConfig(format!(
            "histogram needs at least 2 nodes, got {}",
            r
        )));
    }
    Ok(2.0 / (r - 1) as f64)
}

fn node_position(r: usize, delta: f64) -> f64 {
    -1.0 + r as f64 * delta
}

fn check_same_grid(a: &SoftHistogram, b: &SoftHistogram) -> Result<()> {
    if a.node_count() != b.node_count() {
        return Err(Error::InvalidConfig(format!(
            "histograms have different node counts: {} vs {}",
            a.node_count(),
            b.node_count()
        )));
    }
    Ok(())
}

/// Locates the sample on the node grid: returns the left node index `k`
/// (`0 <= k <= R-2`) and the weights `(w_left, w_right)` the sample assigns
/// to nodes `k` and `k+1`. The weights always sum to exactly 1.
///
/// Samples are clamped to `[-1, +1]` first; a sample exactly at a node gets
/// its full weight there, samples at the boundaries belong entirely to the
/// boundary node.
pub fn node_assignment(sample: f64, r: usize) -> Result<(usize, f64, f64)> {
    let delta = node_step(r)?;
    if !sample.is_finite() {
        return Err(Error::Numerical(format!(
            "similarity sample is not finite: {}",
            sample
        )));
    }
    let s = sample.clamp(-1.0, 1.0);
    if s <= -1.0 {
        return Ok((0, 1.0, 0.0));
    }
    if s >= 1.0 || s == node_position(r - 1, delta) {
        return Ok((r - 2, 0.0, 1.0));
    }
    let mut k = (((s + 1.0) / delta).floor() as usize).min(r - 2);
    // A sample bitwise-equal to a node keeps its full weight on that node.
    if s == node_position(k + 1, delta) {
        k += 1;
    }
    let frac = ((s - node_position(k, delta)) / delta).clamp(0.0, 1.0);
    Ok((k, 1.0 - frac, frac))
}

/// Estimates the soft histogram of a non-empty sample set on `R` nodes.
pub fn soft_histogram(samples: &[f64], r: usize) -> Result<SoftHistogram> {
    soft_histogram_counted(samples, r).map(|(h, _)| h)
}

/// Same as [`soft_histogram`] plus the number of elementary operations
/// performed, for complexity verification.
pub fn soft_histogram_counted(samples: &[f64], r: usize) -> Result<(SoftHistogram, u64)> {
    let delta = node_step(r)?;
    if samples.is_empty() {
        return Err(Error::EmptySampleSet(
            "cannot build a histogram from zero samples".into(),
        ));
    }
    let mut ops: u64 = 0;
    let mut values = vec![0.0; r];
    for &s in samples {
        let (k, w_left, w_right) = node_assignment(s, r)?;
        values[k] += w_left;
        values[k + 1] += w_right;
        ops += 1;
    }
    let n = samples.len() as f64;
    for v in &mut values {
        *v /= n;
        ops += 1;
    }
    Ok((SoftHistogram { values, delta }, ops))
}

/// The histogram loss: probability that a negative-pair similarity is at
/// least a positive-pair similarity, estimated from the two histograms.
pub fn histogram_loss(h_plus: &SoftHistogram, h_minus: &SoftHistogram) -> Result<f64> {
    histogram_loss_margin(h_plus, h_minus, 0)
}

/// [`histogram_loss`] plus an operation count, for complexity verification.
pub fn histogram_loss_counted(
    h_plus: &SoftHistogram,
    h_minus: &SoftHistogram,
) -> Result<(f64, u64)> {
    check_same_grid(h_plus, h_minus)?;
    let mut ops = 0u64;
    let mut cumulative = 0.0;
    let mut loss = 0.0;
    for (hp, hm) in h_plus.values.iter().zip(&h_minus.values) {
        cumulative += hp;
        loss += hm * cumulative;
        ops += 1;
    }
    Ok((loss.clamp(0.0, 1.0), ops))
}

/// Margin variant: the inner cumulative sum is advanced by `mu` nodes
/// (clamped at the top), which enforces a similarity margin of `mu * delta`.
/// `mu = 0` recovers [`histogram_loss`] exactly.
pub fn histogram_loss_margin(
    h_plus: &SoftHistogram,
    h_minus: &SoftHistogram,
    mu: usize,
) -> Result<f64> {
    check_same_grid(h_plus, h_minus)?;
    let r = h_plus.node_count();
    let phi = cumulative(&h_plus.values);
    let mut loss = 0.0;
    for (i, hm) in h_minus.values.iter().enumerate() {
        loss += hm * phi[(i + mu).min(r - 1)];
    }
    Ok(loss.clamp(0.0, 1.0))
}

fn cumulative(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for v in values {
        acc += v;
        out.push(acc);
    }
    out
}

fn reverse_cumulative(values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate().rev() {
        acc += v;
        out[i] = acc;
    }
    out
}

/// Histogram loss value and its analytic gradient with respect to every
/// pairwise similarity in the sets.
pub fn histogram_loss_backward(sets: &SimilaritySets, r: usize) -> Result<LossResult> {
    histogram_margin_backward(sets, r, 0)
}

/// Backward pass of the margin variant; `mu = 0` is the plain loss.
///
/// Each similarity contributes to exactly two adjacent nodes, so its
/// derivative is the difference of the node sensitivities over
/// `delta * |S|`, using the same node-interval convention as the forward
/// assignment (half-open intervals, resolved by [`node_assignment`]).
pub fn histogram_margin_backward(sets: &SimilaritySets, r: usize, mu: usize) -> Result<LossResult> {
    if sets.positive.is_empty() || sets.negative.is_empty() {
        return Err(Error::EmptySampleSet(
            "histogram loss needs non-empty positive and negative sets".into(),
        ));
    }
    let h_plus = soft_histogram(&sets.positive_sims(), r)?;
    let h_minus = soft_histogram(&sets.negative_sims(), r)?;
    let loss = histogram_loss_margin(&h_plus, &h_minus, mu)?;

    let phi_plus = cumulative(&h_plus.values);
    let psi_minus = reverse_cumulative(&h_minus.values);

    // dL/dh_minus[i] = phi_plus[min(i + mu, R-1)]
    // dL/dh_plus[q]  = psi_minus[max(q - mu, 0)]  (every q <= mu sees the full
    // negative mass).
    let dl_dh_minus = |i: usize| phi_plus[(i + mu).min(r - 1)];
    let dl_dh_plus = |q: usize| psi_minus[q.saturating_sub(mu)];

    let delta = h_plus.delta();
    let n_plus = sets.positive.len() as f64;
    let n_minus = sets.negative.len() as f64;

    let mut pos_grads = Vec::with_capacity(sets.positive.len());
    for pair in &sets.positive {
        let (k, _, _) = node_assignment(pair.sim, r)?;
        pos_grads.push((dl_dh_plus(k + 1) - dl_dh_plus(k)) / (delta * n_plus));
    }
    let mut neg_grads = Vec::with_capacity(sets.negative.len());
    for pair in &sets.negative {
        let (k, _, _) = node_assignment(pair.sim, r)?;
        neg_grads.push((dl_dh_minus(k + 1) - dl_dh_minus(k)) / (delta * n_minus));
    }
    Ok(LossResult::pairwise(loss, pos_grads, neg_grads))
}
