use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam moments for every parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        AdamState { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (&Tensor, &Tensor) {
        (&self.m[index], &self.v[index])
    }

    /// Applies one update to every parameter in place using its stored
    /// gradient. Fails before touching anything if a gradient is missing.
    pub fn update(&mut self, store: &mut ParamStore) -> Result<()> {
        self.update_with_lr(store, self.config.learning_rate)
    }

    pub fn update_with_lr(&mut self, store: &mut ParamStore, learning_rate: f64) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.tensor.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        self.step += 1;
        let config = AdamConfig { learning_rate, ..self.config };
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let param = store.get_mut(id);
            let grad = param.grad.take().expect("checked above");
            apply(param.data_mut(), &grad, self.m[i].data_mut(), self.v[i].data_mut(), self.step, &config);
            param.grad = Some(grad);
        }
        Ok(())
    }
}

/// Single-tensor form of the update: advances `step` and applies the
/// bias-corrected step to `param` using `m`/`v` of the same shape.
pub fn adam_step(param: &mut Tensor, m: &mut Tensor, v: &mut Tensor, step: &mut u64, config: &AdamConfig) -> Result<()> {
    let grad = param.grad.clone().ok_or_else(|| Error::MissingGrad("tensor".into()))?;
    if m.shape() != param.shape() || v.shape() != param.shape() {
        return Err(Error::ShapeMismatch { op: "adam_step", lhs: param.shape().to_vec(), rhs: m.shape().to_vec() });
    }
    *step += 1;
    apply(param.data_mut(), &grad, m.data_mut(), v.data_mut(), *step, config);
    Ok(())
}

fn apply(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, config: &AdamConfig) {
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = *config;
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for j in 0..w.len() {
        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
        w[j] -= learning_rate * (m[j] / bc1) / ((v[j] / bc2).sqrt() + epsilon);
    }
}
