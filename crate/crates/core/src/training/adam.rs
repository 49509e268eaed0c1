use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over one [`Params`] set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Params) -> Self {
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Applies one update. A non-finite gradient aborts before any
    /// parameter changes and names the offending parameter.
    pub fn step(&mut self, params: &mut Params, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, {} moments",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{name}: parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {name}")));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales `groups` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(groups: &mut [&mut Vec<Tensor>], max_norm: Real) -> Real {
    let norm = groups
        .iter()
        .flat_map(|g| g.iter())
        .flat_map(|t| t.data())
        .map(|v| v * v)
        .sum::<Real>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = max_norm / norm;
        for g in groups.iter_mut() {
            for t in g.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: Real) -> Params {
        let mut p = Params::new();
        p.insert("w", Tensor::full([1], v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(0.5);
        let mut a = Adam::new(AdamConfig::default(), &p);
        a.step(&mut p, &[Tensor::zeros([1])]).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.5);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = one(0.5);
        let mut a = Adam::new(AdamConfig::default(), &p);
        let err = a.step(&mut p, &[Tensor::full([1], Real::NAN)]).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(p.get("w").unwrap().item(), 0.5);
        assert_eq!(a.t, 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::full([2], 3.0)];
        let mut h = vec![Tensor::full([1], 4.0)];
        let n = clip_global_norm(&mut [&mut g, &mut h], 5.0 / 2.0);
        assert!((n - (34.0 as Real).sqrt()).abs() < 1e-12);
        let after: Real = g[0].data().iter().chain(h[0].data()).map(|v| v * v).sum();
        assert!((after.sqrt() - 2.5).abs() < 1e-12);
    }
}
