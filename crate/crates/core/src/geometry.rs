//! The Lorentz (hyperboloid) model of hyperbolic space with curvature −1.
//!
//! Points live on the upper sheet `{z ∈ ℝⁿ⁺¹ : ⟨z,z⟩_L = −1, z₀ > 0}` where
//! `⟨x,y⟩_L = −x₀y₀ + Σᵢ xᵢyᵢ`. Everything here is plain `f64` code; the
//! differentiable counterparts used for training live in [`crate::hyper`].

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::special;

/// Tolerance for accepting a vector as lying on the hyperboloid.
pub const MANIFOLD_TOL: f64 = 1e-6;
/// Tolerance for accepting a vector as tangent at a base point.
pub const TANGENT_TOL: f64 = 1e-6;

/// `−a₀b₀ + Σ_{i≥1} aᵢbᵢ`.
pub fn lorentz_inner(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "lorentz_inner of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::dim("lorentz_inner needs at least 2 coordinates"));
    }
    Ok(lorentz_inner_unchecked(a, b))
}

#[inline]
pub(crate) fn lorentz_inner_unchecked(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + linalg::dot(&a[1..], &b[1..])
}

fn scale_for(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mb = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (ma * mb).max(1.0)
}

/// A point of 𝕃ⁿ, stored with its `n + 1` ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
}

impl LorentzPoint {
    /// Validates `⟨z,z⟩_L = −1` (relative tolerance) and `z₀ > 0`.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::dim("a Lorentz point needs at least 2 coordinates"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract("non-finite Lorentz coordinates"));
        }
        let q = lorentz_inner_unchecked(&coords, &coords);
        if (q + 1.0).abs() > MANIFOLD_TOL * scale_for(&coords, &coords) || coords[0] <= 0.0 {
            return Err(Error::contract(format!(
                "point is off the hyperboloid: <z,z>_L = {q}, z0 = {}",
                coords[0]
            )));
        }
        Ok(Self { coords })
    }

    /// Builds the point whose spatial part is `spatial`, recomputing
    /// `z₀ = √(1 + ‖z₁:‖²)`. Always lands exactly on the upper sheet.
    pub fn from_spatial(spatial: &[f64]) -> Self {
        let mut coords = Vec::with_capacity(spatial.len() + 1);
        coords.push((1.0 + linalg::dot(spatial, spatial)).sqrt());
        coords.extend_from_slice(spatial);
        Self { coords }
    }

    /// The origin `[1, 0, …, 0]` of 𝕃ⁿ.
    pub fn origin(n: usize) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[0] = 1.0;
        Self { coords }
    }

    /// `exp_𝟎([0, m])`: the mean parameterization used by the distributions.
    pub fn lift(m: &[f64]) -> Self {
        let r = linalg::norm(m);
        let c = special::sinhc(r);
        let spatial: Vec<f64> = m.iter().map(|x| c * x).collect();
        Self::from_spatial(&spatial)
    }

    /// Manifold dimension `n`.
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.coords[1..]
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// `⟨z,z⟩_L + 1`; zero on the manifold.
    pub fn constraint_residual(&self) -> f64 {
        lorentz_inner_unchecked(&self.coords, &self.coords) + 1.0
    }
}

/// A vector in the tangent space `T_x𝕃ⁿ = {u : ⟨u,x⟩_L = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: LorentzPoint,
    vec: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: LorentzPoint, vec: Vec<f64>) -> Result<Self> {
        if vec.len() != base.coords.len() {
            return Err(Error::dim(format!(
                "tangent vector of length {} at a point of length {}",
                vec.len(),
                base.coords.len()
            )));
        }
        let ip = lorentz_inner_unchecked(&vec, &base.coords);
        if ip.abs() > TANGENT_TOL * scale_for(&vec, &base.coords) {
            return Err(Error::contract(format!(
                "vector is not tangent at its base: <u,x>_L = {ip:e}"
            )));
        }
        Ok(Self { base, vec })
    }

    /// Orthogonal projection of an ambient vector onto `T_x𝕃ⁿ`:
    /// `v + ⟨v,x⟩_L x`.
    pub fn project(base: LorentzPoint, ambient: &[f64]) -> Result<Self> {
        if ambient.len() != base.coords.len() {
            return Err(Error::dim("projected vector has the wrong length"));
        }
        let ip = lorentz_inner_unchecked(ambient, &base.coords);
        let vec = ambient.iter().zip(&base.coords).map(|(v, x)| v + ip * x).collect();
        Ok(Self { base, vec })
    }

    /// `[0, v]` at the origin.
    pub fn at_origin(v: &[f64]) -> Self {
        let mut vec = Vec::with_capacity(v.len() + 1);
        vec.push(0.0);
        vec.extend_from_slice(v);
        Self { base: LorentzPoint::origin(v.len()), vec }
    }

    pub fn zero(base: LorentzPoint) -> Self {
        let vec = vec![0.0; base.coords.len()];
        Self { base, vec }
    }

    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    pub fn vec(&self) -> &[f64] {
        &self.vec
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.vec
    }

    /// `√⟨u,u⟩_L`, clamping roundoff negatives to zero.
    pub fn norm(&self) -> f64 {
        lorentz_inner_unchecked(&self.vec, &self.vec).max(0.0).sqrt()
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { base: self.base.clone(), vec: self.vec.iter().map(|v| v * t).collect() }
    }

    /// `⟨u,x⟩_L`; zero for a tangent vector.
    pub fn tangency_residual(&self) -> f64 {
        lorentz_inner_unchecked(&self.vec, &self.base.coords)
    }
}

/// A point of the open Poincaré ball.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    coords: Vec<f64>,
}

impl PoincarePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if linalg::norm(&coords) >= 1.0 {
            return Err(Error::contract("Poincaré point outside the open unit ball"));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.coords)
    }
}

/// An element of SO(n).
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    mat: Matrix,
}

impl RotationMatrix {
    pub fn identity(n: usize) -> Self {
        Self { mat: Matrix::identity(n) }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.mat.matvec(v)
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.mat.transpose().matvec(v)
    }

    /// `max |R Rᵀ − I|`.
    pub fn orthogonality_residual(&self) -> f64 {
        let n = self.dim();
        self.mat
            .matmul(&self.mat.transpose())
            .map(|p| p.max_abs_diff(&Matrix::identity(n)))
            .unwrap_or(f64::INFINITY)
    }

    pub fn determinant(&self) -> f64 {
        self.mat.determinant().unwrap_or(f64::NAN)
    }

    /// `R Σ Rᵀ` for a diagonal `Σ`.
    pub fn conjugate_diag(&self, diag: &[f64]) -> Result<Matrix> {
        if diag.len() != self.dim() {
            return Err(Error::dim("diagonal length does not match rotation size"));
        }
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (0..n).map(|k| self.mat[(i, k)] * diag[k] * self.mat[(j, k)]).sum();
            }
        }
        Ok(out)
    }
}

/// `exp_x(u) = cosh(‖u‖_L) x + sinh(‖u‖_L) u / ‖u‖_L`, re-projected so that
/// `z₀ = √(1 + ‖z₁:‖²)`.
pub fn exp_map(x: &LorentzPoint, u: &TangentVector) -> Result<LorentzPoint> {
    check_same_base(x, u)?;
    Ok(exp_map_raw(&x.coords, &u.vec))
}

fn check_same_base(x: &LorentzPoint, u: &TangentVector) -> Result<()> {
    if u.vec.len() != x.coords.len() {
        return Err(Error::dim("tangent vector and point have different lengths"));
    }
    let ip = lorentz_inner_unchecked(&u.vec, &x.coords);
    if ip.abs() > TANGENT_TOL * scale_for(&u.vec, &x.coords) {
        return Err(Error::contract(format!("vector is not tangent at x: <u,x>_L = {ip:e}")));
    }
    Ok(())
}

fn exp_map_raw(x: &[f64], u: &[f64]) -> LorentzPoint {
    let r = lorentz_inner_unchecked(u, u).max(0.0).sqrt();
    let (c, s) = (r.cosh(), special::sinhc(r));
    let spatial: Vec<f64> = x[1..].iter().zip(&u[1..]).map(|(xi, ui)| c * xi + s * ui).collect();
    LorentzPoint::from_spatial(&spatial)
}

/// Inverse of [`exp_map`]; returns the zero tangent when `y = x`.
pub fn log_map(x: &LorentzPoint, y: &LorentzPoint) -> Result<TangentVector> {
    if x.coords.len() != y.coords.len() {
        return Err(Error::dim("log_map between points of different dimension"));
    }
    let vec = log_map_raw(&x.coords, &y.coords);
    Ok(TangentVector { base: x.clone(), vec })
}

fn log_map_raw(x: &[f64], y: &[f64]) -> Vec<f64> {
    let alpha = (-lorentz_inner_unchecked(x, y)).max(1.0);
    let g = special::acosh_ratio(alpha);
    let mut u: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| g * (yi - alpha * xi)).collect();
    // remove the roundoff component along x
    let ip = lorentz_inner_unchecked(&u, x);
    for (ui, xi) in u.iter_mut().zip(x) {
        *ui += ip * xi;
    }
    u
}

/// `PT_{x→y}(v) = v + ⟨y − αx, v⟩_L / (α + 1) · (x + y)`, `α = −⟨x,y⟩_L`.
pub fn parallel_transport(
    x: &LorentzPoint,
    y: &LorentzPoint,
    v: &TangentVector,
) -> Result<TangentVector> {
    if x.coords.len() != y.coords.len() {
        return Err(Error::dim("parallel transport between points of different dimension"));
    }
    check_same_base(x, v)?;
    let vec = transport_raw(&x.coords, &y.coords, &v.vec)?;
    Ok(TangentVector { base: y.clone(), vec })
}

fn transport_raw(x: &[f64], y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let alpha = -lorentz_inner_unchecked(x, y);
    if alpha + 1.0 <= 1e-12 {
        return Err(Error::DegenerateTransport(alpha + 1.0));
    }
    let ymax: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| yi - alpha * xi).collect();
    let coef = lorentz_inner_unchecked(&ymax, v) / (alpha + 1.0);
    Ok(v.iter().zip(x.iter().zip(y)).map(|(vi, (xi, yi))| vi + coef * (xi + yi)).collect())
}

/// `f_μ(v) = exp_μ(PT_{𝟎→μ}([0, v]))`.
pub fn wrap(mu: &LorentzPoint, v: &[f64]) -> Result<LorentzPoint> {
    if v.len() != mu.dim() {
        return Err(Error::dim(format!(
            "wrap of a {}-vector at a point of 𝕃^{}",
            v.len(),
            mu.dim()
        )));
    }
    let origin = LorentzPoint::origin(mu.dim());
    let lifted = TangentVector::at_origin(v);
    let u = transport_raw(&origin.coords, &mu.coords, &lifted.vec)?;
    Ok(exp_map_raw(&mu.coords, &u))
}

/// `f_μ⁻¹(z)`: the last `n` coordinates of `PT_{μ→𝟎}(log_μ(z))`.
pub fn unwrap(mu: &LorentzPoint, z: &LorentzPoint) -> Result<Vec<f64>> {
    Ok(unwrap_full(mu, z)?.split_off(1))
}

/// Like [`unwrap`] but keeps the (ideally zero) time coordinate.
pub fn unwrap_full(mu: &LorentzPoint, z: &LorentzPoint) -> Result<Vec<f64>> {
    if mu.coords.len() != z.coords.len() {
        return Err(Error::dim("unwrap between points of different dimension"));
    }
    let u = log_map_raw(&mu.coords, &z.coords);
    let origin = LorentzPoint::origin(mu.dim());
    transport_raw(&mu.coords, &origin.coords, &u)
}

/// `arcosh(−⟨x,y⟩_L)` with the argument clamped to `[1, ∞)`.
pub fn distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    if x.coords.len() != y.coords.len() {
        return Err(Error::dim("distance between points of different dimension"));
    }
    Ok(special::acosh_clamped(-lorentz_inner_unchecked(&x.coords, &y.coords)))
}

/// `z₁: / (z₀ + 1)`.
pub fn to_poincare(z: &LorentzPoint) -> PoincarePoint {
    let d = z.coords[0] + 1.0;
    PoincarePoint { coords: z.coords[1..].iter().map(|c| c / d).collect() }
}

/// Inverse of [`to_poincare`].
pub fn from_poincare(p: &PoincarePoint) -> LorentzPoint {
    let sq = linalg::dot(&p.coords, &p.coords);
    let spatial: Vec<f64> = p.coords.iter().map(|c| 2.0 * c / (1.0 - sq)).collect();
    LorentzPoint::from_spatial(&spatial)
}

/// Poincaré-ball norm of a Lorentz point, `‖z₁:‖ / (z₀ + 1)`.
pub fn poincare_norm(z: &LorentzPoint) -> f64 {
    linalg::norm(z.spatial()) / (z.time() + 1.0)
}

/// The rotation `R = I + K + K² / (1 + ⟨x,y⟩)` with `K = y xᵀ − x yᵀ`, which
/// maps the unit vector `x` onto the unit vector `y` and fixes the orthogonal
/// complement of `span{x, y}`.
///
/// For `⟨x,y⟩ < 0` the same matrix is assembled in the plane basis
/// `a = x`, `b = (y − c x) / ‖y − c x‖` as `I + (c − 1)(a aᵀ + b bᵀ) + s (b aᵀ − a bᵀ)`,
/// since dividing by `1 + c` loses orthogonality near the antipode.
///
/// When `⟨x,y⟩ ≈ −1` the formula is singular; the result is then the 180°
/// rotation in the plane of `x` and the standard basis vector least aligned
/// with `x`, built as a product of two Householder reflections. For `n = 1`
/// there is no rotation taking `x` to `−x` and an error is returned.
pub fn rotation_matrix(x: &[f64], y: &[f64]) -> Result<RotationMatrix> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::dim("rotation_matrix needs two unit vectors of equal length"));
    }
    for (name, v) in [("x", x), ("y", y)] {
        let nv = linalg::norm(v);
        if (nv - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("rotation_matrix: ‖{name}‖ = {nv}, expected 1")));
        }
    }
    let n = x.len();
    let c = linalg::dot(x, y);
    if c <= -1.0 + 1e-9 {
        return half_turn(x);
    }
    if c < 0.0 {
        return Ok(RotationMatrix { mat: plane_rotation(x, y, c)? });
    }
    let k = Matrix::outer(y, x).sub(&Matrix::outer(x, y))?;
    let k2 = k.matmul(&k)?;
    let r = Matrix::identity(n).add(&k)?.add(&k2.scale(1.0 / (1.0 + c)))?;
    Ok(RotationMatrix { mat: r })
}

fn plane_rotation(x: &[f64], y: &[f64], c: f64) -> Result<Matrix> {
    let mut b: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| yi - c * xi).collect();
    let s = linalg::norm(&b);
    b.iter_mut().for_each(|bi| *bi /= s);
    let h = c.hypot(s);
    let (c, s) = (c / h, s / h);
    let plane = Matrix::outer(x, x).add(&Matrix::outer(&b, &b))?;
    let turn = Matrix::outer(&b, x).sub(&Matrix::outer(x, &b))?;
    Matrix::identity(x.len()).add(&plane.scale(c - 1.0))?.add(&turn.scale(s))
}

fn half_turn(x: &[f64]) -> Result<RotationMatrix> {
    let n = x.len();
    if n < 2 {
        return Err(Error::contract("no rotation maps x to -x in one dimension"));
    }
    let k = least_aligned_axis(x);
    let mut w = vec![0.0; n];
    w[k] = 1.0;
    let p = x[k];
    for (wi, xi) in w.iter_mut().zip(x) {
        *wi -= p * xi;
    }
    let nw = linalg::norm(&w);
    w.iter_mut().for_each(|wi| *wi /= nw);
    let hx = Matrix::identity(n).sub(&Matrix::outer(x, x).scale(2.0))?;
    let hw = Matrix::identity(n).sub(&Matrix::outer(&w, &w).scale(2.0))?;
    Ok(RotationMatrix { mat: hw.matmul(&hx)? })
}

/// Index of the smallest `|xᵢ|`, lowest index on ties.
pub(crate) fn least_aligned_axis(x: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..x.len() {
        if x[i].abs() < x[best].abs() {
            best = i;
        }
    }
    best
}

/// Closed-form geodesic `cosh(ct) x + sinh(ct) v / c`, `c = ‖v‖_L`.
pub fn geodesic_point(x: &LorentzPoint, v: &TangentVector, t: f64) -> Result<LorentzPoint> {
    check_same_base(x, v)?;
    let c = v.norm();
    if c == 0.0 {
        return Ok(x.clone());
    }
    let (ch, sh) = ((c * t).cosh(), (c * t).sinh() / c);
    let coords: Vec<f64> = x.coords.iter().zip(&v.vec).map(|(xi, vi)| ch * xi + sh * vi).collect();
    Ok(LorentzPoint { coords })
}
