use indexmap::IndexMap;

use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters other than the learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single buffer. `t` is the step
/// number after incrementing (first step is 1).
pub fn adam_update<S: Scalar>(
    value: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if value.len() != grad.len() || value.len() != m.len() || value.len() != v.len() {
        return Err(Error::shape(format!(
            "adam: value {}, grad {}, m {}, v {} lengths differ",
            value.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(Error::invalid("adam: step count must be >= 1"));
    }
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let one = S::one();
    let c1 = one - S::lit(cfg.beta1.powf(t as f64));
    let c2 = one - S::lit(cfg.beta2.powf(t as f64));
    let (lr, eps) = (S::lit(lr), S::lit(cfg.eps));
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Per-parameter moments plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub moments: IndexMap<String, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            moments: IndexMap::new(),
        }
    }

    /// Applies one update to every parameter holding a gradient, then
    /// replaces each updated value with a fresh tracked leaf.
    pub fn step(&mut self, params: &mut ParamSet<S>, lr: f64) -> Result<()> {
        self.t += 1;
        let mut updates = Vec::new();
        for p in params.iter() {
            let Some(grad) = p.value.grad() else { continue };
            let n = p.value.len();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![S::zero(); n], vec![S::zero(); n]));
            if m.len() != n {
                return Err(Error::shape(format!(
                    "adam: state for {} has {} entries, parameter has {n}",
                    p.name,
                    m.len()
                )));
            }
            let mut value = p.value.to_vec();
            adam_update(&mut value, &grad, m, v, self.t, lr, &self.config)?;
            updates.push((p.name.clone(), Tensor::leaf(p.value.shape(), value, true)?));
        }
        for (name, value) in updates {
            params.set(&name, value)?;
        }
        Ok(())
    }
}
