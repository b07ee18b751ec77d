//! Differentiable, batched versions of the Lorentz-model maps.
//!
//! Every function takes row-batched tensors: points are `[B, n+1]`, Euclidean
//! tangent coordinates at the origin are `[B, n]`, and per-row scalars are
//! `[B, 1]`. They are written in terms of the `√s`-parameterized primitives
//! (`cosh_sqrt`, `sinhc_sqrt`, `acosh_ratio`) so gradients stay finite at the
//! zero tangent.

use crate::autodiff::{Tape, Tensor, UnaryOp, Var};
use crate::error::{Error, Result};

fn width(tape: &Tape, v: Var) -> usize {
    *tape.shape(v).last().unwrap_or(&0)
}

/// Splits `[B, n+1]` into the time column `[B,1]` and spatial part `[B,n]`.
pub fn split_time(tape: &Tape, z: Var) -> Result<(Var, Var)> {
    let k = width(tape, z);
    Ok((tape.cols(z, 0, 1)?, tape.cols(z, 1, k)?))
}

/// Rebuilds a point from its spatial part with `z₀ = √(1 + ‖z₁:‖²)`.
pub fn from_spatial(tape: &Tape, spatial: Var) -> Result<Var> {
    let sq = tape.dot_last(spatial, spatial)?;
    let t = tape.shift(sq, 1.0)?;
    let t = tape.sqrt(t)?;
    tape.concat(&[t, spatial], 1)
}

/// `exp_𝟎([0, m])`.
pub fn lift(tape: &Tape, m: Var) -> Result<Var> {
    let s = tape.dot_last(m, m)?;
    let c = tape.unary(UnaryOp::CoshSqrt, s)?;
    let k = tape.unary(UnaryOp::SinhcSqrt, s)?;
    let spatial = tape.mul(k, m)?;
    tape.concat(&[c, spatial], 1)
}

/// `exp_x(u)` followed by re-projection onto the hyperboloid.
pub fn exp_map(tape: &Tape, x: Var, u: Var) -> Result<Var> {
    let s = tape.lorentz_inner(u, u)?;
    let c = tape.unary(UnaryOp::CoshSqrt, s)?;
    let k = tape.unary(UnaryOp::SinhcSqrt, s)?;
    let a = tape.mul(c, x)?;
    let b = tape.mul(k, u)?;
    let z = tape.add(a, b)?;
    let (_, spatial) = split_time(tape, z)?;
    from_spatial(tape, spatial)
}

/// `log_x(y) = arcosh(α)/√(α²−1) · (y − αx)`, `α = −⟨x,y⟩_L`.
pub fn log_map(tape: &Tape, x: Var, y: Var) -> Result<Var> {
    let ip = tape.lorentz_inner(x, y)?;
    let alpha = tape.neg(ip)?;
    let g = tape.unary(UnaryOp::AcoshRatio, alpha)?;
    let ax = tape.mul(alpha, x)?;
    let d = tape.sub(y, ax)?;
    tape.mul(g, d)
}

/// `PT_{x→y}(v)` for batched `x`, `y`, `v`.
pub fn transport(tape: &Tape, x: Var, y: Var, v: Var) -> Result<Var> {
    let ip = tape.lorentz_inner(x, y)?;
    let alpha = tape.neg(ip)?;
    let min = tape.value(alpha).data().iter().copied().fold(f64::INFINITY, f64::min);
    if min + 1.0 <= 1e-12 {
        return Err(Error::DegenerateTransport(min + 1.0));
    }
    let ax = tape.mul(alpha, x)?;
    let ymax = tape.sub(y, ax)?;
    let num = tape.lorentz_inner(ymax, v)?;
    let den = tape.shift(alpha, 1.0)?;
    let coef = tape.div(num, den)?;
    let xy = tape.add(x, y)?;
    let corr = tape.mul(coef, xy)?;
    tape.add(v, corr)
}

/// `PT_{𝟎→μ}([0, v])`, with the origin terms simplified away.
pub fn transport_from_origin(tape: &Tape, mu: Var, v: Var) -> Result<Var> {
    let (mu0, mus) = split_time(tape, mu)?;
    let u0 = tape.dot_last(mus, v)?;
    let den = tape.shift(mu0, 1.0)?;
    let coef = tape.div(u0, den)?;
    let corr = tape.mul(coef, mus)?;
    let us = tape.add(v, corr)?;
    tape.concat(&[u0, us], 1)
}

/// Spatial part of `PT_{μ→𝟎}(u)`.
pub fn transport_to_origin(tape: &Tape, mu: Var, u: Var) -> Result<Var> {
    let (mu0, mus) = split_time(tape, mu)?;
    let (u0, us) = split_time(tape, u)?;
    // ⟨𝟎 − μ₀μ, u⟩_L = −u₀ − μ₀⟨μ,u⟩_L
    let ip = tape.lorentz_inner(mu, u)?;
    let t = tape.mul(mu0, ip)?;
    let t = tape.add(u0, t)?;
    let num = tape.neg(t)?;
    let den = tape.shift(mu0, 1.0)?;
    let coef = tape.div(num, den)?;
    let corr = tape.mul(coef, mus)?;
    tape.add(us, corr)
}

/// `f_μ(v) = exp_μ(PT_{𝟎→μ}([0, v]))`.
pub fn wrap(tape: &Tape, mu: Var, v: Var) -> Result<Var> {
    let u = transport_from_origin(tape, mu, v)?;
    exp_map(tape, mu, u)
}

/// `f_μ⁻¹(z)`, also returning `⟨u,u⟩_L` for `u = log_μ(z)`.
pub fn unwrap_with_sq_norm(tape: &Tape, mu: Var, z: Var) -> Result<(Var, Var)> {
    let u = log_map(tape, mu, z)?;
    let s = tape.lorentz_inner(u, u)?;
    Ok((transport_to_origin(tape, mu, u)?, s))
}

pub fn unwrap(tape: &Tape, mu: Var, z: Var) -> Result<Var> {
    Ok(unwrap_with_sq_norm(tape, mu, z)?.0)
}

/// Rowwise `arcosh(−⟨x,y⟩_L)`.
pub fn distance(tape: &Tape, x: Var, y: Var) -> Result<Var> {
    let ip = tape.lorentz_inner(x, y)?;
    let a = tape.neg(ip)?;
    tape.acosh(a)
}

/// `z₁:/(z₀ + 1)`.
pub fn to_poincare(tape: &Tape, z: Var) -> Result<Var> {
    let (z0, zs) = split_time(tape, z)?;
    let den = tape.shift(z0, 1.0)?;
    tape.div(zs, den)
}

/// Constant `[B, n+1]` batch of origins.
pub fn origin(tape: &Tape, batch: usize, n: usize) -> Var {
    let mut t = Tensor::zeros(&[batch, n + 1]);
    for b in 0..batch {
        t.data_mut()[b * (n + 1)] = 1.0;
    }
    tape.constant(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{self, LorentzPoint};

    fn row(tape: &Tape, v: Var) -> Vec<f64> {
        tape.value(v).data().to_vec()
    }

    #[test]
    fn batched_maps_agree_with_scalar_geometry() {
        let mu = LorentzPoint::lift(&[0.4, -0.9, 0.2]);
        let v = [0.3, 0.1, -0.7];
        let z = geometry::wrap(&mu, &v).unwrap();

        let tape = Tape::new();
        let m = tape.constant(Tensor::from_rows(&[mu.coords().to_vec()]).unwrap());
        let vv = tape.constant(Tensor::from_rows(&[v.to_vec()]).unwrap());
        let zz = wrap(&tape, m, vv).unwrap();
        for (a, b) in row(&tape, zz).iter().zip(z.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = unwrap(&tape, m, zz).unwrap();
        for (a, b) in row(&tape, back).iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
        let d = distance(&tape, m, zz).unwrap();
        assert!((tape.item(d).unwrap() - geometry::distance(&mu, &z).unwrap()).abs() < 1e-12);
        let lifted = lift(&tape, tape.constant(Tensor::from_rows(&[vec![0.4, -0.9, 0.2]]).unwrap()))
            .unwrap();
        for (a, b) in row(&tape, lifted).iter().zip(mu.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_tangent_has_finite_gradient() {
        let tape = Tape::new();
        let o = origin(&tape, 1, 2);
        let v = tape.leaf(Tensor::zeros(&[1, 2]));
        let z = wrap(&tape, o, v).unwrap();
        let loss = tape.sum(z).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(v).is_finite());
    }
}
