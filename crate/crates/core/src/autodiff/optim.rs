use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

fn check_shapes(params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len()
        || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::dim("parameter and gradient shapes disagree"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { beta1, beta2, eps, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        check_shapes(params, grads)?;
        if self.m.len() != params.len() {
            return Err(Error::dim("optimizer state does not match parameters"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain stochastic gradient descent.
#[derive(Debug, Clone, Default)]
pub struct Sgd;

impl Sgd {
    pub fn step(&self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        check_shapes(params, grads)?;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
                *pi -= lr * gi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.5, -2.0])];
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn one_step_descends_quadratic() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(&p);
        let g = Tensor::scalar(2.0 * p[0].data()[0]);
        adam.step(&mut p, &[g], 0.1).unwrap();
        let x = p[0].data()[0];
        assert!(x * x < 1.0);
    }

    #[test]
    fn converges_on_2d_quadratic() {
        // f(x) = x0² + 3 x1²
        let mut p = vec![Tensor::vector(vec![1.0, -1.0])];
        let mut adam = Adam::new(&p);
        for _ in 0..200 {
            let d = p[0].data().to_vec();
            let g = Tensor::vector(vec![2.0 * d[0], 6.0 * d[1]]);
            adam.step(&mut p, &[g], 0.05).unwrap();
        }
        let d = p[0].data();
        assert!((d[0] * d[0] + d[1] * d[1]).sqrt() < 1e-2, "{d:?}");
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::vector(vec![30.0, 40.0])];
        let n = clip_global_norm(&mut g, 10.0);
        assert_eq!(n, 50.0);
        assert!((g[0].sq_norm().sqrt() - 10.0).abs() < 1e-12);
    }
}
