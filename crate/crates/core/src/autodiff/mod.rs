//! A compact reverse-mode autodiff engine over dense `f64` tensors.

mod optim;
mod tape;
mod tensor;

pub use optim::{clip_global_norm, Adam, Sgd};
pub use tape::{Gradients, Tape, UnaryOp, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Per input: `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖, floor)`.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares the gradient of the scalar function `f` at `inputs` with central
/// finite differences of step `step`. The finite-difference side only ever
/// evaluates forward passes on fresh tapes.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], step: f64, floor: f64) -> Result<GradcheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&t, &vs)?;
        t.item(o)
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let mut fd = Tensor::zeros(input.shape());
        for i in 0..input.numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] = input.data()[i] + step;
            let fp = eval(&xs)?;
            xs[k].data_mut()[i] = input.data()[i] - step;
            let fm = eval(&xs)?;
            fd.data_mut()[i] = (fp - fm) / (2.0 * step);
        }
        let diff: f64 = analytic[k]
            .data()
            .iter()
            .zip(fd.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = analytic[k].sq_norm().sqrt().max(fd.sq_norm().sqrt()).max(floor);
        rel_errors.push(diff / scale);
        numeric.push(fd);
    }
    Ok(GradcheckReport { rel_errors, analytic, numeric })
}
