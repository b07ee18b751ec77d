use rand::Rng as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::Rng;

/// Fully connected network with ReLU between layers and a linear output.
/// Weights are `[in, out]`, biases `[1, out]`, stored in one flat list.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_tensors(&self) -> usize {
        2 * (self.sizes.len() - 1)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init(&self, rng: &mut Rng) -> Vec<Tensor> {
        let mut out = Vec::with_capacity(self.num_tensors());
        for w in self.sizes.windows(2) {
            let (i, o) = (w[0], w[1]);
            let bound = 1.0 / (i as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
            out.push(Tensor::new(vec![i, o], draw(i * o)).expect("shape"));
            out.push(Tensor::new(vec![1, o], draw(o)).expect("shape"));
        }
        out
    }

    pub fn check_params(&self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.num_tensors() {
            return Err(Error::dim("wrong number of network tensors"));
        }
        for (l, w) in self.sizes.windows(2).enumerate() {
            if params[2 * l].shape() != [w[0], w[1]] || params[2 * l + 1].shape() != [1, w[1]] {
                return Err(Error::dim(format!("layer {l} has the wrong shape")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, params: &[Var], x: Var) -> Result<Var> {
        let layers = self.sizes.len() - 1;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, params[2 * l])?;
            h = tape.add(z, params[2 * l + 1])?;
            if l + 1 < layers {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
