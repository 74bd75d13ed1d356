use serde::{Deserialize, Serialize};

use crate::{AutodiffError, Result, Tensor};

fn check_shapes(params: &[&mut Tensor], grads: &[Tensor], buffers: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(AutodiffError::CountMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch {
                expected: p.shape(),
                actual: g.shape(),
            });
        }
    }
    if !buffers.is_empty() {
        if buffers.len() != params.len() {
            return Err(AutodiffError::CountMismatch {
                expected: buffers.len(),
                actual: params.len(),
            });
        }
        for (b, p) in buffers.iter().zip(params) {
            if b.shape() != p.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    expected: b.shape(),
                    actual: p.shape(),
                });
            }
        }
    }
    Ok(())
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v <- mu * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        check_shapes(params, grads, &self.velocity)?;
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pi, &gi), vi) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(v.values_mut())
            {
                *vi = self.momentum * *vi + gi;
                *pi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}

/// Adam with bias-corrected first and second moment estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        check_shapes(params, grads, &self.first)?;
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[k].values_mut();
            let v = self.second[k].values_mut();
            for (i, (pi, &gi)) in p.values_mut().iter_mut().zip(g.values()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn sgd_momentum(lr: f64) -> Self {
        Optimizer::Sgd(Sgd::new(lr, 0.9))
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam(Adam::new(lr))
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(AutodiffError::NonFinite {
                node: bad,
                op: "gradient",
            });
        }
        match self {
            Optimizer::Sgd(s) => s.step(params, grads),
            Optimizer::Adam(a) => a.step(params, grads),
        }
    }
}

/// Exponential moving average of a parameter set:
/// `smoothed <- gamma * smoothed + (1 - gamma) * fresh`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ema {
    gamma: f64,
    smoothed: Vec<Tensor>,
}

impl Ema {
    pub fn new(gamma: f64, init: Vec<Tensor>) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(AutodiffError::InvalidHyperparameter(format!(
                "EMA smoothing {gamma} outside [0, 1]"
            )));
        }
        Ok(Self {
            gamma,
            smoothed: init,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn smoothed(&self) -> &[Tensor] {
        &self.smoothed
    }

    pub fn into_smoothed(self) -> Vec<Tensor> {
        self.smoothed
    }

    pub fn update(&mut self, fresh: &[&Tensor]) -> Result<()> {
        if fresh.len() != self.smoothed.len() {
            return Err(AutodiffError::CountMismatch {
                expected: self.smoothed.len(),
                actual: fresh.len(),
            });
        }
        for (s, f) in self.smoothed.iter().zip(fresh) {
            if s.shape() != f.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    expected: s.shape(),
                    actual: f.shape(),
                });
            }
        }
        let gamma = self.gamma;
        for (s, f) in self.smoothed.iter_mut().zip(fresh) {
            for (si, &fi) in s.values_mut().iter_mut().zip(f.values()) {
                *si = gamma * *si + (1.0 - gamma) * fi;
            }
        }
        Ok(())
    }
}
