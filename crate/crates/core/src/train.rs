//! Minibatch gradient loop shared by every neural model.

use idens_autodiff::{AutodiffError, Graph, Optimizer, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// SGD with momentum 0.9.
    SgdMomentum,
    /// Adam with betas (0.9, 0.999).
    Adam,
}

impl OptimizerKind {
    pub(crate) fn build(self, lr: f64) -> Optimizer {
        match self {
            OptimizerKind::SgdMomentum => Optimizer::sgd_momentum(lr),
            OptimizerKind::Adam => Optimizer::adam(lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub n_iter: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl LoopConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid(format!(
                "training needs a positive batch size and learning rate (got {} and {})",
                self.batch_size, self.lr
            )));
        }
        Ok(())
    }
}

/// Uniform draws with replacement.
pub fn sample_batch(n: usize, size: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

fn diverged(stage: &str, iteration: usize) -> CoreError {
    CoreError::Diverged {
        stage: stage.to_string(),
        iteration,
    }
}

/// Runs `cfg.n_iter` optimizer steps on `params`. `loss` records one
/// minibatch objective on a fresh graph; `after_step` sees the updated
/// parameters (used for EMA tracking). Returns the loss trace.
pub(crate) fn run_loop<L, A>(
    stage: &str,
    params: &mut [Tensor],
    cfg: &LoopConfig,
    seed: u64,
    mut loss: L,
    mut after_step: A,
) -> Result<Vec<f64>>
where
    L: FnMut(&mut Graph, &[Var], &mut ChaCha8Rng) -> Result<Var>,
    A: FnMut(&[Tensor]) -> Result<()>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = cfg.optimizer.build(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.n_iter);
    for it in 0..cfg.n_iter {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
        let l = loss(&mut g, &vars, &mut rng)?;
        let value = g.value(l).item();
        if !value.is_finite() {
            return Err(diverged(stage, it));
        }
        let grads = match g.backward(l) {
            Ok(gr) => gr.collect(&vars),
            Err(AutodiffError::NonFinite { .. }) => return Err(diverged(stage, it)),
            Err(e) => return Err(e.into()),
        };
        let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
        match opt.step(&mut refs, &grads) {
            Ok(()) => {}
            Err(AutodiffError::NonFinite { .. }) => return Err(diverged(stage, it)),
            Err(e) => return Err(e.into()),
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(diverged(stage, it));
        }
        trace.push(value);
        after_step(params)?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges_and_reports_trace() {
        let mut p = vec![Tensor::scalar(3.0)];
        let cfg = LoopConfig {
            n_iter: 200,
            batch_size: 1,
            lr: 0.1,
            optimizer: OptimizerKind::Adam,
        };
        let trace = run_loop(
            "test",
            &mut p,
            &cfg,
            0,
            |g, v, _| {
                let d = g.add_scalar(v[0], -1.0);
                let sq = g.square(d);
                Ok(g.sum(sq))
            },
            |_| Ok(()),
        )
        .unwrap();
        assert_eq!(trace.len(), 200);
        assert!((p[0].item() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn nan_loss_names_iteration() {
        let mut p = vec![Tensor::scalar(1.0)];
        let cfg = LoopConfig {
            n_iter: 10,
            batch_size: 1,
            lr: 0.6,
            optimizer: OptimizerKind::SgdMomentum,
        };
        // log(p) with steps pushing p below zero
        let err = run_loop(
            "toy",
            &mut p,
            &cfg,
            0,
            |g, v, _| {
                let l = g.log(v[0]);
                Ok(g.scale(l, 3.0))
            },
            |_| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Diverged { iteration, .. } if iteration > 0));
    }
}
