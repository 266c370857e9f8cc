//! Independent brute-force references used to verify the main path.
//!
//! Nothing in here is called by training code; these functions exist so
//! tests and the `gradcheck` command can cross-check the fast implementations
//! against naive ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::{backward, forward, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{
    binomial_deviance, histogram_margin_backward, pairwise_similarities, similarity_backward,
    split_similarities, BinomialDevianceParams, MatchLabels,
};
use crate::matrix::Matrix;

/// Brute-force reverse-rate estimate over all (positive, negative) pair
/// combinations:
///
/// ```text
/// (1 / (|S+| |S-|)) * sum over s-,s+ of [1(s- > s+) + tie_weight * 1(s- == s+)]
/// ```
///
/// This is the quartic-in-batch-size enumeration the histogram loss avoids;
/// with `tie_weight = 1` it matches the histogram loss exactly on node-aligned
/// samples.
pub fn quadruplet_reverse_rate(
    s_plus: &[f64],
    s_minus: &[f64],
    tie_weight: f64,
) -> Result<f64> {
    quadruplet_reverse_rate_counted(s_plus, s_minus, tie_weight).map(|(rate, _)| rate)
}

/// Same as [`quadruplet_reverse_rate`] plus the number of comparisons made
/// (always `|S+| * |S-|`).
pub fn quadruplet_reverse_rate_counted(
    s_plus: &[f64],
    s_minus: &[f64],
    tie_weight: f64,
) -> Result<(f64, u64)> {
    if s_plus.is_empty() || s_minus.is_empty() {
        return Err(Error::EmptySampleSet(
            "reverse rate needs non-empty positive and negative sets".into(),
        ));
    }
    if !(0.0..=1.0).contains(&tie_weight) {
        return Err(Error::InvalidConfig(format!(
            "tie weight must be in [0, 1], got {}",
            tie_weight
        )));
    }
    let mut comparisons = 0u64;
    let mut total = 0.0;
    for &sn in s_minus {
        for &sp in s_plus {
            comparisons += 1;
            if sn > sp {
                total += 1.0;
            } else if sn == sp {
                total += tie_weight;
            }
        }
    }
    Ok((total / (s_plus.len() as f64 * s_minus.len() as f64), comparisons))
}

/// Literal re-implementation of the histogram loss: per-node triangular
/// weights evaluated case by case, then the explicit double sum over node
/// pairs, with no cumulative-sum shortcut. Intentionally naive.
pub fn dense_loss_reference(s_plus: &[f64], s_minus: &[f64], r: usize) -> Result<f64> {
    let h_plus = dense_histogram(s_plus, r)?;
    let h_minus = dense_histogram(s_minus, r)?;
    let mut loss = 0.0;
    for ri in 0..r {
        for q in 0..=ri {
            loss += h_minus[ri] * h_plus[q];
        }
    }
    Ok(loss)
}

fn dense_histogram(samples: &[f64], r: usize) -> Result<Vec<f64>> {
    if r < 2 {
        return Err(Error::InvalidConfig(format!(
            "histogram needs at least 2 nodes, got {}",
            r
        )));
    }
    if samples.is_empty() {
        return Err(Error::EmptySampleSet("no samples".into()));
    }
    let delta = 2.0 / (r - 1) as f64;
    let node = |i: usize| -1.0 + i as f64 * delta;
    // The computed top node can land a few ulps off +1; cap samples at it so
    // boundary samples stay inside the covered intervals.
    let top = node(r - 1);
    let mut h = vec![0.0; r];
    for (i, h_i) in h.iter_mut().enumerate() {
        let t = node(i);
        for &raw in samples {
            let s = raw.clamp(-1.0, 1.0).min(top);
            let weight = if i > 0 && s >= node(i - 1) && s <= t {
                (s - node(i - 1)) / delta
            } else if i + 1 < r && s >= t && s <= node(i + 1) {
                (node(i + 1) - s) / delta
            } else {
                0.0
            };
            *h_i += weight;
        }
        *h_i /= samples.len() as f64;
    }
    Ok(h)
}

/// Central finite differences of a scalar function, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {}",
            step
        )));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = f(&x)?;
        x[i] = orig - step;
        let down = f(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "function produced non-finite values near coordinate {}",
                i
            )));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Relative error with the floor the gradient checks use everywhere:
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Outcome of comparing an analytic gradient against finite differences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the worst coordinate.
    pub argmax: String,
    /// Relative error per parameter, in flat parameter order.
    pub per_param: Vec<f64>,
    pub step: f64,
}

impl GradCheckReport {
    pub fn from_comparison<N>(analytic: &[f64], numeric: &[f64], step: f64, name: N) -> Self
    where
        N: Fn(usize) -> String,
    {
        assert_eq!(analytic.len(), numeric.len());
        let per_param: Vec<f64> = analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &b)| relative_error(a, b))
            .collect();
        let (argmax_idx, &max_rel_error) = per_param
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one parameter");
        GradCheckReport {
            max_rel_error,
            argmax: name(argmax_idx),
            per_param,
            step,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Which loss the end-to-end gradient check drives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheckLoss {
    Histogram { bins: usize, margin_nodes: usize },
    BinomialDeviance(BinomialDevianceParams),
}

/// Checks the full chain loss -> similarities -> embeddings -> encoder
/// parameters on a deterministic random batch, comparing the analytic
/// parameter gradient against central finite differences.
///
/// Histogram-loss batches are re-drawn until every pairwise similarity stays
/// clear of the histogram nodes, since finite differences are meaningless
/// across the kinks of a piecewise-linear function.
pub fn encoder_gradcheck(
    loss: GradCheckLoss,
    seed: u64,
    batch: usize,
    input_dim: usize,
    hidden: &[usize],
    embed_dim: usize,
    num_classes: usize,
    step: f64,
) -> Result<GradCheckReport> {
    if batch < 4 || num_classes < 2 || batch < num_classes {
        return Err(Error::InvalidConfig(
            "gradcheck needs batch >= 4 and 2 <= classes <= batch".into(),
        ));
    }
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(embed_dim);

    let labels = MatchLabels::new((0..batch).map(|i| (i % num_classes) as u32).collect());

    // Node clearance required for the piecewise-linear loss: the finite
    // difference step must not push any similarity across a node.
    let clearance = match loss {
        GradCheckLoss::Histogram { bins, .. } => {
            if bins < 2 {
                return Err(Error::InvalidConfig(format!(
                    "gradcheck needs >= 2 histogram nodes, got {}",
                    bins
                )));
            }
            Some(step * 50.0)
        }
        GradCheckLoss::BinomialDeviance(_) => None,
    };

    let mut params = EncoderParams::init(seed ^ 0x9e3779b97f4a7c15, &dims)?;
    let mut inputs = Matrix::zeros(batch, input_dim);
    'attempt: for attempt in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        for v in inputs.data_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        if let Some(clear) = clearance {
            let bins = match loss {
                GradCheckLoss::Histogram { bins, .. } => bins,
                GradCheckLoss::BinomialDeviance(_) => unreachable!(),
            };
            let delta = 2.0 / (bins - 1) as f64;
            let trace = forward(&params, &inputs)?;
            let sims = pairwise_similarities(&trace.embeddings)?;
            let sets = match split_similarities(&sims, &labels) {
                Ok(sets) => sets,
                Err(_) => continue 'attempt,
            };
            for pair in sets.positive.iter().chain(&sets.negative) {
                let offset = (pair.sim + 1.0) / delta;
                let dist = (offset - offset.round()).abs() * delta;
                if dist < clear || pair.sim.abs() > 1.0 - clear {
                    continue 'attempt;
                }
            }
        }
        break;
    }

    let loss_of = |p: &EncoderParams| -> Result<f64> {
        let trace = forward(p, &inputs)?;
        match loss {
            GradCheckLoss::Histogram { bins, margin_nodes } => {
                let sims = pairwise_similarities(&trace.embeddings)?;
                let sets = split_similarities(&sims, &labels)?;
                Ok(histogram_margin_backward(&sets, bins, margin_nodes)?.loss)
            }
            GradCheckLoss::BinomialDeviance(params) => {
                let sims = pairwise_similarities(&trace.embeddings)?;
                let sets = split_similarities(&sims, &labels)?;
                Ok(binomial_deviance(&sets, &params)?.loss)
            }
        }
    };

    // Analytic gradient through the full chain.
    let trace = forward(&params, &inputs)?;
    let sims = pairwise_similarities(&trace.embeddings)?;
    let sets = split_similarities(&sims, &labels)?;
    let result = match loss {
        GradCheckLoss::Histogram { bins, margin_nodes } => {
            histogram_margin_backward(&sets, bins, margin_nodes)?
        }
        GradCheckLoss::BinomialDeviance(p) => binomial_deviance(&sets, &p)?,
    };
    let grad_y = similarity_backward(
        &trace.embeddings,
        &sets,
        &result.pos_grads,
        &result.neg_grads,
    )?;
    let analytic = backward(&params, &trace, &grad_y)?.flat();

    // Numeric gradient, one parameter at a time.
    let n_params = params.num_params();
    let mut numeric = Vec::with_capacity(n_params);
    for idx in 0..n_params {
        let orig = params.param(idx);
        *params.param_mut(idx) = orig + step;
        let up = loss_of(&params)?;
        *params.param_mut(idx) = orig - step;
        let down = loss_of(&params)?;
        *params.param_mut(idx) = orig;
        numeric.push((up - down) / (2.0 * step));
    }

    let names: Vec<String> = (0..n_params).map(|i| params.param_name(i)).collect();
    Ok(GradCheckReport::from_comparison(
        &analytic,
        &numeric,
        step,
        |i| names[i].clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadruplet_separated_is_zero() {
        assert_eq!(quadruplet_reverse_rate(&[1.0], &[-1.0], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn quadruplet_all_ties() {
        assert_eq!(quadruplet_reverse_rate(&[0.0], &[0.0], 1.0).unwrap(), 1.0);
        assert_eq!(quadruplet_reverse_rate(&[0.0], &[0.0], 0.5).unwrap(), 0.5);
    }

    #[test]
    fn quadruplet_counts_all_combinations() {
        let (_, count) =
            quadruplet_reverse_rate_counted(&[0.1, 0.2, 0.3], &[0.0, -0.5], 1.0).unwrap();
        assert_eq!(count, 6);
    }

    #[test]
    fn quadruplet_rejects_empty_and_bad_weight() {
        assert!(quadruplet_reverse_rate(&[], &[0.0], 1.0).is_err());
        assert!(quadruplet_reverse_rate(&[0.0], &[0.0], 1.5).is_err());
    }

    #[test]
    fn dense_reference_known_case() {
        // h+ = [0.5, 0, 0.5], h- = [0, 1, 0] -> 0.5
        let loss = dense_loss_reference(&[-1.0, 1.0], &[0.0], 3).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dense_reference_separated_case() {
        let loss = dense_loss_reference(&[1.0, 0.9], &[-1.0, -0.9], 11).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn finite_diff_quadratic() {
        let grad = finite_diff_grad(|x| Ok(x[0] * x[0]), &[3.0], 1e-5).unwrap();
        assert!((grad[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_constant() {
        let grad = finite_diff_grad(|_| Ok(2.5), &[1.0, -1.0, 0.3], 1e-5).unwrap();
        assert_eq!(grad, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_diff_rejects_non_finite() {
        let err = finite_diff_grad(|x| Ok(1.0 / (x[0] - x[0]).sqrt()), &[1.0], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn report_tracks_argmax() {
        let report = GradCheckReport::from_comparison(
            &[1.0, 2.0, 3.0],
            &[1.0, 2.5, 3.0],
            1e-5,
            |i| format!("p{}", i),
        );
        assert_eq!(report.argmax, "p1");
        assert_eq!(
            report.max_rel_error,
            report
                .per_param
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        );
    }
}
