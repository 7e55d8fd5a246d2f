use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::{AutodiffError, Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ParamStore<S>, config: AdamConfig) -> Self {
        let m: Vec<Vec<S>> = params.ids().map(|id| vec![S::zero(); params.get(id).len()]).collect();
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    /// Rebuilds optimizer state from serialized moments.
    pub fn from_state(
        params: &ParamStore<S>,
        config: AdamConfig,
        step: u64,
        m: Vec<Vec<S>>,
        v: Vec<Vec<S>>,
    ) -> Result<Self, AutodiffError> {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(AutodiffError::StateMismatch(format!(
                "{} parameters, {} first moments, {} second moments",
                params.len(),
                m.len(),
                v.len()
            )));
        }
        for id in params.ids() {
            let n = params.get(id).len();
            if m[id.index()].len() != n || v[id.index()].len() != n {
                return Err(AutodiffError::StateMismatch(format!("moment size for `{}`", params.name(id))));
            }
        }
        Ok(Self { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<S>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<S>] {
        &self.v
    }

    /// Applies one update to every parameter. All gradients must be present;
    /// on error nothing is modified.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<(), AutodiffError> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(AutodiffError::StateMismatch(format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for id in params.ids() {
            match grads.get(id) {
                Some(g) if g.len() == params.get(id).len() => {}
                Some(_) => return Err(AutodiffError::StateMismatch(format!("gradient size for `{}`", params.name(id)))),
                None => return Err(AutodiffError::MissingGradient(params.name(id).to_string())),
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (lr, eps) = (S::lit(c.lr), S::lit(c.eps));
        let one = S::one();
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for id in params.ids() {
            let g = grads.get(id).expect("checked above");
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((p, &gi), mi), vi) in params.get_mut(id).data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
