use super::network::Network;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based), in place.
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    cfg: &AdamConfig,
    t: u64,
) {
    let (b1, b2) = (T::cast(cfg.beta1), T::cast(cfg.beta2));
    let (one_b1, one_b2) = (T::cast(1.0 - cfg.beta1), T::cast(1.0 - cfg.beta2));
    let c1 = T::cast(1.0 - cfg.beta1.powi(t as i32));
    let c2 = T::cast(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::cast(cfg.lr), T::cast(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// First/second moment buffers for one named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Scalar = f32> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adam state for every parameter of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    t: u64,
    moments: Vec<Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, network: &Network<T>) -> Self {
        let moments = network
            .parameters()
            .entries
            .into_iter()
            .map(|(name, t)| Moments {
                name,
                m: vec![T::zero(); t.numel()],
                v: vec![T::zero(); t.numel()],
            })
            .collect();
        Self {
            config,
            t: 0,
            moments,
        }
    }

    /// Number of updates applied so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> &[Moments<T>] {
        &self.moments
    }

    /// Restores step count and moments (from a checkpoint).
    pub fn restore(&mut self, t: u64, moments: Vec<Moments<T>>) -> Result<()> {
        if moments.len() != self.moments.len() {
            return Err(Error::Format(format!(
                "optimizer state has {} entries, expected {}",
                moments.len(),
                self.moments.len()
            )));
        }
        for (cur, new) in self.moments.iter().zip(&moments) {
            if cur.name != new.name || cur.m.len() != new.m.len() || cur.v.len() != new.v.len() {
                return Err(Error::Format(format!(
                    "optimizer state for `{}` does not match `{}`",
                    new.name, cur.name
                )));
            }
        }
        self.t = t;
        self.moments = moments;
        Ok(())
    }

    /// Applies one update to every parameter using its accumulated gradient.
    /// Fails without touching anything if any parameter lacks a gradient.
    pub fn step(&mut self, network: &mut Network<T>) -> Result<()> {
        let mut params = network.params_mut();
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad().is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        self.t += 1;
        for ((name, param), mom) in params.iter_mut().zip(&mut self.moments) {
            debug_assert_eq!(name, &mom.name);
            let (data, grad) = param.data_and_grad_mut();
            let grad = grad.expect("checked above");
            adam_update(data, grad, &mut mom.m, &mut mom.v, &self.config, self.t);
        }
        Ok(())
    }
}
