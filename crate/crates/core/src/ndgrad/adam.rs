use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NdError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Adam accumulators for a set of parameters.
#[derive(Clone, Debug, Default)]
pub struct OptimState {
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter named in `grads`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
    cfg: &AdamConfig,
) -> Result<(), NdError> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| NdError::UnknownName(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(NdError::Shape {
                node: 0,
                op: "adam_step",
                detail: format!("'{name}': param {:?}, grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let mo = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: Tensor::zeros(g.shape()),
            v: Tensor::zeros(g.shape()),
        });
        let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
        for (((x, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(g: &[f64]) -> (ParamStore, BTreeMap<String, Tensor>) {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![1.0; g.len()]));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::vector(g.to_vec()));
        (p, grads)
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let (mut p, grads) = setup(&[0.3, -2.0]);
        let before = p.clone();
        let mut st = OptimState::new();
        adam_step(&mut p, &grads, &mut st, &AdamConfig { lr: 0.0, ..Default::default() }).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, grads) = setup(&[0.0, 0.0]);
        let before = p.clone();
        let mut st = OptimState::new();
        adam_step(&mut p, &grads, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps) ≈ lr·sign(g).
        let (mut p, grads) = setup(&[5.0, -0.5]);
        let mut st = OptimState::new();
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        adam_step(&mut p, &grads, &mut st, &cfg).unwrap();
        let w = p.tensor("w").data();
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((w[1] - (1.0 + 0.01)).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let (mut p, mut grads) = setup(&[1.0, 1.0]);
        grads.insert("w".into(), Tensor::vector(vec![1.0]));
        assert!(adam_step(&mut p, &grads, &mut OptimState::new(), &AdamConfig::default()).is_err());
    }
}
