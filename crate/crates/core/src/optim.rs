//! ADAM optimizer over [`EncoderParams`], with bias correction.

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            ..AdamHyper::default()
        }
    }
}

/// Optimizer state: moment accumulators shaped like the parameters plus the
/// step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
}

impl AdamState {
    pub fn new(params: &EncoderParams, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            step: 0,
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
        }
    }

    pub fn validate_for(&self, params: &EncoderParams) -> Result<()> {
        if !self.first_moment.same_shape(params) || !self.second_moment.same_shape(params) {
            return Err(Error::ShapeMismatch(
                "optimizer accumulators do not match parameter shapes".into(),
            ));
        }
        Ok(())
    }
}

/// One ADAM update in place. Increments the step counter by exactly 1.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<()> {
    state.validate_for(params)?;
    if !grads.same_shape(params) {
        return Err(Error::ShapeMismatch(
            "gradient shapes do not match parameters".into(),
        ));
    }
    if !grads.is_finite() {
        let bad = grads
            .flat()
            .iter()
            .position(|g| !g.is_finite())
            .unwrap_or(0);
        return Err(Error::Numerical(format!(
            "non-finite gradient at {} (step {})",
            params.param_name(bad),
            state.step + 1
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bias1 = 1.0 - h.beta1.powi(t);
    let bias2 = 1.0 - h.beta2.powi(t);

    for (k, layer) in params.layers.iter_mut().enumerate() {
        let g = &grads.layers[k];
        let m = &mut state.first_moment.layers[k];
        let v = &mut state.second_moment.layers[k];
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
        };
        for ((p, &gw), (mw, vw)) in layer
            .weights
            .data_mut()
            .iter_mut()
            .zip(g.weights.data())
            .zip(m.weights.data_mut().iter_mut().zip(v.weights.data_mut()))
        {
            update(p, gw, mw, vw);
        }
        for ((p, &gb), (mb, vb)) in layer
            .bias
            .iter_mut()
            .zip(&g.bias)
            .zip(m.bias.iter_mut().zip(v.bias.iter_mut()))
        {
            update(p, gb, mb, vb);
        }
    }
    Ok(())
}
