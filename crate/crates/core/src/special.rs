//! Scalar functions that appear in the hyperboloid maps, written so that they
//! stay finite and smooth through their removable singularities.
//!
//! Several of them take the *squared* radius `s = r²` rather than `r`: the
//! Lorentz norm of a tangent vector is naturally available as `⟨u,u⟩_L`, and
//! working in `s` avoids the infinite derivative of `√s` at zero.

const SERIES_R: f64 = 1e-4;
const SERIES_S: f64 = 1e-4;

/// `sinh(r) / r`.
pub fn sinhc(r: f64) -> f64 {
    if r.abs() < SERIES_R {
        let r2 = r * r;
        1.0 + r2 / 6.0 + r2 * r2 / 120.0 + r2 * r2 * r2 / 5040.0
    } else {
        r.sinh() / r
    }
}

/// `(cosh(r) - 1) / r²`.
pub fn coshm1_sq(r: f64) -> f64 {
    if r.abs() < SERIES_R {
        let r2 = r * r;
        0.5 + r2 / 24.0 + r2 * r2 / 720.0 + r2 * r2 * r2 / 40320.0
    } else {
        (r.cosh() - 1.0) / (r * r)
    }
}

/// `cosh(√s)`.
pub fn cosh_sqrt(s: f64) -> f64 {
    s.max(0.0).sqrt().cosh()
}

/// `d/ds cosh(√s) = sinhc(√s) / 2`.
pub fn cosh_sqrt_grad(s: f64) -> f64 {
    0.5 * sinhc(s.max(0.0).sqrt())
}

/// `sinh(√s) / √s`.
pub fn sinhc_sqrt(s: f64) -> f64 {
    sinhc(s.max(0.0).sqrt())
}

/// `d/ds sinhc(√s) = (cosh r - sinhc r) / (2 r²)`.
pub fn sinhc_sqrt_grad(s: f64) -> f64 {
    let s = s.max(0.0);
    if s < SERIES_S {
        0.5 * (1.0 / 3.0 + s / 30.0 + s * s / 840.0 + s * s * s / 45360.0)
    } else {
        let r = s.sqrt();
        (r.cosh() - sinhc(r)) / (2.0 * s)
    }
}

/// `log(sinh(r) / r)` for `r ≥ 0`, overflow-free for large `r`.
pub fn log_sinhc(r: f64) -> f64 {
    let r = r.abs();
    if r > SERIES_R {
        r + (-(-2.0 * r).exp()).ln_1p() - (2.0 * r).ln()
    } else {
        let r2 = r * r;
        r2 / 6.0 - r2 * r2 / 180.0
    }
}

/// `log(sinh(√s) / √s)`.
pub fn log_sinhc_sqrt(s: f64) -> f64 {
    let s = s.max(0.0);
    if s < SERIES_R * SERIES_R {
        s / 6.0 - s * s / 180.0 + s * s * s / 2835.0
    } else {
        log_sinhc(s.sqrt())
    }
}

/// `d/ds log(sinhc(√s)) = (coth r - 1/r) / (2r)`.
pub fn log_sinhc_sqrt_grad(s: f64) -> f64 {
    let s = s.max(0.0);
    if s < SERIES_S {
        1.0 / 6.0 - s / 90.0 + s * s / 945.0
    } else {
        let r = s.sqrt();
        (1.0 / r.tanh() - 1.0 / r) / (2.0 * r)
    }
}

/// `arcosh(x)` with the argument clamped to `[1, ∞)`.
pub fn acosh_clamped(x: f64) -> f64 {
    x.max(1.0).acosh()
}

/// `arcosh(a) / √(a² - 1)`, the log-map coefficient. Equals `r / sinh r`
/// for `a = cosh r`; tends to 1 as `a → 1`.
pub fn acosh_ratio(a: f64) -> f64 {
    let d = (a - 1.0).max(0.0);
    if d < SERIES_R {
        1.0 - d / 3.0 + 2.0 * d * d / 15.0 - 2.0 * d * d * d / 35.0
    } else {
        a.acosh() / (d * (a + 1.0)).sqrt()
    }
}

pub fn acosh_ratio_grad(a: f64) -> f64 {
    let d = (a - 1.0).max(0.0);
    if d < SERIES_R {
        -1.0 / 3.0 + 4.0 * d / 15.0 - 6.0 * d * d / 35.0
    } else {
        (1.0 - a * acosh_ratio(a)) / (d * (a + 1.0))
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}
