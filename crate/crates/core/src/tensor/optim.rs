use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }
}

/// Per-parameter auxiliary buffers for one optimizer instance.
///
/// Weight decay is applied as decoupled shrinkage `p *= 1 - lr * weight_decay`,
/// never folded into the moment estimates.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears their gradients.
    pub fn step(&mut self, params: &mut [Tensor], lr: f64) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::usage(format!("parameter {i} has no gradient")));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
            }
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(b, p)| b.len() != p.len())
        {
            return Err(Error::usage(
                "optimizer buffers do not match the parameter set",
            ));
        }
        self.step += 1;
        let shrink = 1.0 - lr * self.weight_decay;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for (p, buf) in params.iter_mut().zip(&mut self.first) {
                    let g = p.grad.take().expect("checked above");
                    for ((v, b), gi) in p.data.iter_mut().zip(buf.iter_mut()).zip(&g) {
                        *b = momentum * *b + gi;
                        *v = *v * shrink - lr * *b;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, m), s) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let g = p.grad.take().expect("checked above");
                    for (((v, m), s), gi) in p
                        .data
                        .iter_mut()
                        .zip(m.iter_mut())
                        .zip(s.iter_mut())
                        .zip(&g)
                    {
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *s = beta2 * *s + (1.0 - beta2) * gi * gi;
                        let update = (*m / c1) / ((*s / c2).sqrt() + eps);
                        *v = *v * shrink - lr * update;
                    }
                }
            }
        }
        Ok(())
    }
}

/// `base_lr * (1 - iter / max_iter)^power`.
pub fn poly_lr(base_lr: f64, iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::usage("poly_lr needs max_iter > 0"));
    }
    if iter > max_iter {
        return Err(Error::usage(format!(
            "poly_lr iteration {iter} exceeds max_iter {max_iter}"
        )));
    }
    Ok(base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// Global L2 norm of all present gradients.
pub fn global_grad_norm(params: &[Tensor]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_gradients(params: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm && max_norm > 0.0 {
        let s = max_norm / norm;
        for g in params.iter_mut().filter_map(|p| p.grad_mut()) {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn param(value: f64, grad: f64) -> Tensor {
        let mut p = Tensor::scalar(value);
        p.accumulate_grad(&[grad]).unwrap();
        p
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut ps = vec![param(1.0, 2.0)];
        let mut opt = OptimizerState::new(OptimizerKind::sgd(0.0), 0.0);
        opt.step(&mut ps, 0.1).unwrap();
        assert!((ps[0].data()[0] - 0.8).abs() < 1e-15);
        assert!(ps[0].grad().is_none());
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [3.0, -0.25, 1e-3] {
            let mut ps = vec![param(0.5, g)];
            let mut opt = OptimizerState::new(OptimizerKind::adam(), 0.0);
            opt.step(&mut ps, 0.01).unwrap();
            let moved = 0.5 - ps[0].data()[0];
            assert!(
                (moved - 0.01 * g.signum()).abs() < 1e-6,
                "g={g}: moved {moved}"
            );
        }
    }

    #[test]
    fn decay_only_step_shrinks() {
        for kind in [OptimizerKind::sgd(0.9), OptimizerKind::adam()] {
            let mut ps = vec![param(2.0, 0.0)];
            let mut opt = OptimizerState::new(kind, 0.01);
            opt.step(&mut ps, 0.5).unwrap();
            assert!((ps[0].data()[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut ps = vec![Tensor::scalar(1.0)];
        let mut opt = OptimizerState::new(OptimizerKind::adam(), 0.0);
        assert!(matches!(opt.step(&mut ps, 0.1), Err(Error::Usage(_))));
    }

    #[test]
    fn poly_lr_values() {
        assert_eq!(poly_lr(0.001, 0, 100, 0.9).unwrap(), 0.001);
        assert_eq!(poly_lr(0.001, 100, 100, 0.9).unwrap(), 0.0);
        // 0.5^0.9 = exp(0.9 * ln 0.5) = 0.535886731268146...
        let half = poly_lr(0.001, 50, 100, 0.9).unwrap();
        assert!((half - 0.001 * 0.535_886_731_268_146).abs() < 1e-15);
        assert!(poly_lr(0.001, 101, 100, 0.9).is_err());
    }

    #[test]
    fn clipping_examples() {
        let mut ps = vec![Tensor::zeros(vec![2])];
        ps[0].accumulate_grad(&[3.0, 4.0]).unwrap();
        assert_eq!(clip_gradients(&mut ps, 10.0), 5.0);
        assert_eq!(ps[0].grad().unwrap(), &[3.0, 4.0]);
        assert_eq!(clip_gradients(&mut ps, 1.0), 5.0);
        let g = ps[0].grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);

        let mut two = vec![Tensor::zeros(vec![2]), Tensor::zeros(vec![2])];
        two[0].accumulate_grad(&[1.0, 0.0]).unwrap();
        two[1].accumulate_grad(&[0.0, 1.0]).unwrap();
        let pre = clip_gradients(&mut two, 1.0);
        assert!((pre - 2f64.sqrt()).abs() < 1e-15);
        let s = 1.0 / 2f64.sqrt();
        assert!((two[0].grad().unwrap()[0] - s).abs() < 1e-15);
        assert!((two[1].grad().unwrap()[1] - s).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clip_never_increases_norm(g in prop::collection::vec(-1e3f64..1e3, 1..40), max in 1e-3f64..50.0) {
            let mut ps = vec![Tensor::zeros(vec![g.len()])];
            ps[0].accumulate_grad(&g).unwrap();
            let pre = clip_gradients(&mut ps, max);
            let post = global_grad_norm(&ps);
            prop_assert!(post <= pre + 1e-12);
            prop_assert!(post <= max + 1e-12);
        }

        #[test]
        fn poly_lr_non_increasing(max_iter in 1usize..500, power in 0.01f64..3.0) {
            let mut prev = f64::INFINITY;
            for it in 0..=max_iter {
                let lr = poly_lr(0.01, it, max_iter, power).unwrap();
                prop_assert!(lr <= prev);
                prev = lr;
            }
        }
    }
}
