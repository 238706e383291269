use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper<F: Scalar> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> Default for AdamHyper<F> {
    fn default() -> Self {
        AdamHyper {
            lr: F::from_f64(1e-3),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub hyper: AdamHyper<F>,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(hyper: AdamHyper<F>, params: &[&Tensor<F>]) -> Self {
        AdamState {
            hyper,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update. `grads[i]` may be `None` for a
    /// parameter untouched by the last backward pass.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<F>],
        grads: &[Option<Tensor<F>>],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} params, {} grads, state has {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = F::from_f64(self.step as f64);
        let h = self.hyper;
        let bc1 = F::one() - h.beta1.powf(t);
        let bc2 = F::one() - h.beta2.powf(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = match &grads[i] {
                Some(g) => g,
                None => continue,
            };
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                let gj = g.data()[j];
                let mj = h.beta1 * m.data()[j] + (F::one() - h.beta1) * gj;
                let vj = h.beta2 * v.data()[j] + (F::one() - h.beta2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                p.data_mut()[j] = p.data()[j] - h.lr * m_hat / (v_hat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::vector(vec![1.0f64, -2.0]);
        let mut state = AdamState::new(AdamHyper::default(), &[&p]);
        let g = Tensor::zeros(&[2]);
        state.step(&mut [&mut p], &[Some(g)]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn single_step_moves_by_almost_lr() {
        // g=1, lr=0.1: bias-corrected update is lr * g / (|g| + eps') ≈ lr
        let mut p = Tensor::scalar(0.0f64);
        let hyper = AdamHyper {
            lr: 0.1,
            ..AdamHyper::default()
        };
        let mut state = AdamState::new(hyper, &[&p]);
        state
            .step(&mut [&mut p], &[Some(Tensor::scalar(1.0))])
            .unwrap();
        assert!((p.item() + 0.1).abs() < 1e-6, "got {}", p.item());
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = Tensor::scalar(0.0f64);
        let mut state = AdamState::new(AdamHyper::default(), &[&p]);
        for _ in 0..100 {
            state
                .step(&mut [&mut p], &[Some(Tensor::scalar(2.5))])
                .unwrap();
        }
        assert!(p.item() < 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::vector(vec![0.0f64; 3]);
        let mut state = AdamState::new(AdamHyper::default(), &[&p]);
        let g = Tensor::zeros(&[2]);
        assert!(state.step(&mut [&mut p], &[Some(g)]).is_err());
    }
}
