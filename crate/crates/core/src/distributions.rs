//! Normal distributions on ℝⁿ and wrapped onto 𝕃ⁿ.
//!
//! [`BatchDist`] is the differentiable, row-batched form used by the trainers.
//! [`WrappedDistribution`] is a plain single-distribution value built on the
//! same code path (its parameters enter the tape as constants).

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, UnaryOp, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, LorentzPoint};
use crate::hyper;
use crate::linalg::Matrix;
use crate::special;
use crate::Rng;

/// Jitter added to `MMᵀ` for full covariances.
pub const FULL_EPS: f64 = 1e-9;
/// Below this spatial norm the mean counts as the origin for RoWN.
pub const ORIGIN_TOL: f64 = 1e-12;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Euclidean,
    Hwn,
    Rown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Isotropic,
    Diagonal,
    Full,
}

impl Kind {
    pub fn is_hyperbolic(self) -> bool {
        self != Kind::Euclidean
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Euclidean => "euclidean",
            Kind::Hwn => "hwn",
            Kind::Rown => "rown",
        }
    }
}

impl Flavor {
    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::Isotropic => "isotropic",
            Flavor::Diagonal => "diagonal",
            Flavor::Full => "full",
        }
    }

    /// Raw covariance parameters per distribution in dimension `n`.
    pub fn raw_len(self, n: usize) -> usize {
        match self {
            Flavor::Isotropic => 1,
            Flavor::Diagonal => n,
            Flavor::Full => n * n,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "normal" => Ok(Kind::Euclidean),
            "hwn" => Ok(Kind::Hwn),
            "rown" => Ok(Kind::Rown),
            other => Err(Error::Config(format!("unknown distribution kind `{other}`"))),
        }
    }
}

impl FromStr for Flavor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isotropic" | "iso" => Ok(Flavor::Isotropic),
            "diagonal" | "diag" => Ok(Flavor::Diagonal),
            "full" => Ok(Flavor::Full),
            other => Err(Error::Config(format!("unknown covariance flavor `{other}`"))),
        }
    }
}

/// Rejects the combinations the distribution layer does not support.
pub fn check_combination(kind: Kind, flavor: Flavor) -> Result<()> {
    if kind == Kind::Rown && flavor == Flavor::Full {
        return Err(Error::Config(
            "rown rotates a diagonal covariance; use flavor isotropic or diagonal".into(),
        ));
    }
    Ok(())
}

/// Unconstrained covariance parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub flavor: Flavor,
    /// One value (isotropic), `n` values (diagonal) or a row-major `n×n` `M`.
    pub raw: Vec<f64>,
}

/// A realized covariance and a square-root factor `A` with `AAᵀ = Σ`.
#[derive(Debug, Clone)]
pub struct RealizedCovariance {
    pub cov: Matrix,
    pub factor: Matrix,
}

impl CovarianceSpec {
    pub fn isotropic(raw: f64) -> Self {
        Self { flavor: Flavor::Isotropic, raw: vec![raw] }
    }

    pub fn diagonal(raw: Vec<f64>) -> Self {
        Self { flavor: Flavor::Diagonal, raw }
    }

    pub fn full(m: Matrix) -> Self {
        Self { flavor: Flavor::Full, raw: m.into_vec() }
    }

    /// The spec whose realized covariance is the identity.
    pub fn identity(flavor: Flavor, n: usize) -> Self {
        match flavor {
            Flavor::Isotropic => Self::isotropic(special::softplus_inv(1.0)),
            Flavor::Diagonal => Self::diagonal(vec![special::softplus_inv(1.0); n]),
            Flavor::Full => Self::full(Matrix::identity(n)),
        }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        if self.raw.len() != self.flavor.raw_len(n) {
            return Err(Error::dim(format!(
                "{} covariance in dimension {n} needs {} raw values, got {}",
                self.flavor,
                self.flavor.raw_len(n),
                self.raw.len()
            )));
        }
        if self.raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("non-finite covariance parameters"));
        }
        Ok(())
    }

    /// Per-axis variances for the isotropic and diagonal flavors.
    pub fn variances(&self, n: usize) -> Result<Vec<f64>> {
        self.check_dim(n)?;
        match self.flavor {
            Flavor::Isotropic => Ok(vec![special::softplus(self.raw[0]); n]),
            Flavor::Diagonal => Ok(self.raw.iter().map(|&r| special::softplus(r)).collect()),
            Flavor::Full => Err(Error::contract("a full covariance has no per-axis variances")),
        }
    }
}

/// Softplus variances for isotropic/diagonal specs, `MMᵀ + εI` with its
/// Cholesky factor for full ones.
pub fn realize_covariance(spec: &CovarianceSpec, n: usize) -> Result<RealizedCovariance> {
    spec.check_dim(n)?;
    match spec.flavor {
        Flavor::Isotropic | Flavor::Diagonal => {
            let var = spec.variances(n)?;
            let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            Ok(RealizedCovariance { cov: Matrix::from_diag(&var), factor: Matrix::from_diag(&sd) })
        }
        Flavor::Full => {
            let m = Matrix::from_row_major(n, n, spec.raw.clone())?;
            let cov = m.matmul(&m.transpose())?.add(&Matrix::identity(n).scale(FULL_EPS))?;
            let factor = cov.cholesky()?;
            Ok(RealizedCovariance { cov, factor })
        }
    }
}

/// `R diag(σ) Rᵀ` where `R` rotates `e₁` onto `μ₁:/‖μ₁:‖`.
pub fn rown_covariance(mu: &LorentzPoint, sigma_diag: &[f64]) -> Result<Matrix> {
    let n = mu.dim();
    if sigma_diag.len() != n {
        return Err(Error::dim("sigma_diag length must equal the manifold dimension"));
    }
    if sigma_diag.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::contract("rown_covariance needs positive variances"));
    }
    let sp = mu.spatial();
    let norm = crate::linalg::norm(sp);
    if norm < ORIGIN_TOL || n == 1 {
        return Ok(Matrix::from_diag(sigma_diag));
    }
    let y: Vec<f64> = sp.iter().map(|v| v / norm).collect();
    let mut e1 = vec![0.0; n];
    e1[0] = 1.0;
    geometry::rotation_matrix(&e1, &y)?.conjugate_diag(sigma_diag)
}

/// A `[rows, n]` tensor of independent standard normal draws.
pub fn standard_normal(rng: &mut Rng, rows: usize, n: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, n], data).expect("shape matches data")
}

/// Rowwise rotation data for RoWN: `y = μ₁:/‖μ₁:‖`, `1 + ⟨e₁,y⟩`, and the
/// constant mask of antipodal rows.
struct Rotation {
    y: Var,
    den: Var,
    antipodal: Option<(Var, Var)>,
    e1: Var,
}

/// A batch of `B` distributions of one kind and flavor, one per row.
pub struct BatchDist<'t> {
    tape: &'t Tape,
    kind: Kind,
    flavor: Flavor,
    n: usize,
    batch: usize,
    loc: Var,
    raw: Var,
    mu: Option<Var>,
    var: Option<Var>,
    sd: Option<Var>,
    chol: Option<Var>,
    half_logdet: Var,
    rot: Option<Rotation>,
}

impl<'t> BatchDist<'t> {
    /// `loc` is `[B, n]` (mean parameters `m`, lifted by `exp_𝟎` for the
    /// hyperbolic kinds); `raw` is `[B, 1]`, `[B, n]` or `[B, n, n]`.
    pub fn new(tape: &'t Tape, kind: Kind, flavor: Flavor, loc: Var, raw: Var) -> Result<Self> {
        check_combination(kind, flavor)?;
        let ls = tape.shape(loc);
        if ls.len() != 2 || ls[1] == 0 {
            return Err(Error::dim(format!("loc must be [B, n], got {ls:?}")));
        }
        let (batch, n) = (ls[0], ls[1]);
        let want: Vec<usize> = match flavor {
            Flavor::Isotropic => vec![batch, 1],
            Flavor::Diagonal => vec![batch, n],
            Flavor::Full => vec![batch, n, n],
        };
        if tape.shape(raw) != want {
            return Err(Error::dim(format!(
                "{flavor} raw covariance must be {want:?}, got {:?}",
                tape.shape(raw)
            )));
        }
        let mu = if kind.is_hyperbolic() { Some(hyper::lift(tape, loc)?) } else { None };

        let (mut var, mut sd, mut chol) = (None, None, None);
        let half_logdet = match flavor {
            Flavor::Isotropic | Flavor::Diagonal => {
                let v = tape.softplus(raw)?;
                sd = Some(tape.sqrt(v)?);
                var = Some(v);
                let lv = tape.log(v)?;
                let s = tape.sum_last(lv)?;
                let k = if flavor == Flavor::Isotropic { n as f64 } else { 1.0 };
                tape.scale(s, 0.5 * k)?
            }
            Flavor::Full => {
                let mt = tape.transpose(raw)?;
                let mmt = tape.matmul(raw, mt)?;
                let eye = Matrix::identity(n).scale(FULL_EPS);
                let eye = tape.constant(Tensor::new(vec![1, n, n], eye.into_vec())?);
                let sigma = tape.add(mmt, eye)?;
                let l = tape.cholesky(sigma)?;
                let d = tape.diagonal(l)?;
                let ld = tape.log(d)?;
                chol = Some(l);
                tape.sum_last(ld)?
            }
        };

        let rot = match (kind, mu) {
            (Kind::Rown, Some(mu)) if n >= 2 => Some(Self::rotation(tape, mu, batch, n)?),
            _ => None,
        };

        Ok(Self { tape, kind, flavor, n, batch, loc, raw, mu, var, sd, chol, half_logdet, rot })
    }

    fn rotation(tape: &Tape, mu: Var, batch: usize, n: usize) -> Result<Rotation> {
        let (_, sp) = hyper::split_time(tape, mu)?;
        let s = tape.dot_last(sp, sp)?;
        // Rows at the origin get y = e₁ (no rotation).
        let (origin, anti) = {
            let sv = tape.value(s);
            let spv = tape.value(sp);
            let mut origin = vec![0.0; batch];
            let mut anti = vec![0.0; batch];
            for b in 0..batch {
                let norm = sv.data()[b].sqrt();
                if norm < ORIGIN_TOL {
                    origin[b] = 1.0;
                } else if spv.data()[b * n] / norm <= -1.0 + 1e-9 {
                    anti[b] = 1.0;
                }
            }
            (origin, anti)
        };
        let mut e1 = vec![0.0; n];
        e1[0] = 1.0;
        let e1 = tape.constant(Tensor::new(vec![1, n], e1)?);
        let y = if origin.iter().any(|&o| o > 0.0) {
            let o = tape.constant(Tensor::new(vec![batch, 1], origin.clone())?);
            let keep = tape.constant(Tensor::new(vec![batch, 1], origin.iter().map(|o| 1.0 - o).collect())?);
            let s2 = tape.add(s, o)?;
            let norm = tape.sqrt(s2)?;
            let y = tape.div(sp, norm)?;
            let y = tape.mul(keep, y)?;
            let oe = tape.mul(o, e1)?;
            tape.add(y, oe)?
        } else {
            let norm = tape.sqrt(s)?;
            tape.div(sp, norm)?
        };
        let c = tape.cols(y, 0, 1)?;
        let den = tape.shift(c, 1.0)?;
        let antipodal = if anti.iter().any(|&a| a > 0.0) {
            let a = tape.constant(Tensor::new(vec![batch, 1], anti.clone())?);
            let keep = tape.constant(Tensor::new(vec![batch, 1], anti.iter().map(|a| 1.0 - a).collect())?);
            Some((a, keep))
        } else {
            None
        };
        let den = match antipodal {
            Some((a, _)) => tape.add(den, a)?,
            None => den,
        };
        Ok(Rotation { y, den, antipodal, e1 })
    }

    /// `R w` (or `Rᵀ w`) rowwise with `R = I + K + K²/(1+c)`, `K = y e₁ᵀ − e₁ yᵀ`.
    fn rotate(&self, w: Var, transpose: bool) -> Result<Var> {
        let Some(rot) = &self.rot else { return Ok(w) };
        let t = self.tape;
        let k_apply = |w: Var| -> Result<Var> {
            let w0 = t.cols(w, 0, 1)?;
            let yw = t.dot_last(rot.y, w)?;
            let a = t.mul(rot.y, w0)?;
            let b = t.mul(rot.e1, yw)?;
            t.sub(a, b)
        };
        let kw = k_apply(w)?;
        let kkw = k_apply(kw)?;
        let q = t.div(kkw, rot.den)?;
        let lin = if transpose { t.sub(w, kw)? } else { t.add(w, kw)? };
        let out = t.add(lin, q)?;
        match rot.antipodal {
            None => Ok(out),
            Some((a, keep)) => {
                // Half-turn in the (e₁, e₂) plane; it is its own transpose.
                let mut flip = vec![1.0; self.n];
                flip[0] = -1.0;
                flip[1] = -1.0;
                let flip = t.constant(Tensor::new(vec![1, self.n], flip)?);
                let fw = t.mul(w, flip)?;
                let fw = t.mul(a, fw)?;
                let out = t.mul(keep, out)?;
                t.add(out, fw)
            }
        }
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn loc(&self) -> Var {
        self.loc
    }

    /// Softplus variances, `[B, 1]` (isotropic) or `[B, n]` (diagonal);
    /// `None` for full covariances.
    pub fn variances(&self) -> Option<Var> {
        self.var
    }

    /// The mean: `[B, n+1]` Lorentz points, or `[B, n]` for the Euclidean kind.
    pub fn mean(&self) -> Var {
        self.mu.unwrap_or(self.loc)
    }

    /// The same distributions with every row repeated `s` times, sample-major:
    /// row `k·B + b` is a copy of row `b`.
    pub fn repeated(&self, s: usize) -> Result<BatchDist<'t>> {
        if s == 1 {
            return BatchDist::new(self.tape, self.kind, self.flavor, self.loc, self.raw);
        }
        let idx: Vec<usize> = (0..s).flat_map(|_| 0..self.batch).collect();
        let loc = self.tape.gather(self.loc, &idx)?;
        let raw = self.tape.gather(self.raw, &idx)?;
        BatchDist::new(self.tape, self.kind, self.flavor, loc, raw)
    }

    /// `A ε` for `ε` of shape `[B, n]`.
    fn scale_noise(&self, eps: Var) -> Result<Var> {
        let t = self.tape;
        match self.flavor {
            Flavor::Full => t.matvec(self.chol.expect("full flavor has a factor"), eps),
            _ => {
                let w = t.mul(self.sd.expect("diagonal flavor has sd"), eps)?;
                self.rotate(w, false)
            }
        }
    }

    /// `log 𝒩(v; 0, Σ)` rowwise, `[B, 1]`.
    fn gauss_logpdf(&self, v: Var) -> Result<Var> {
        let t = self.tape;
        let quad = match self.flavor {
            Flavor::Full => {
                let w = t.tri_solve(self.chol.expect("full flavor has a factor"), v)?;
                t.dot_last(w, w)?
            }
            _ => {
                let v = self.rotate(v, true)?;
                let sq = t.square(v)?;
                let r = t.div(sq, self.var.expect("diagonal flavor has variances"))?;
                t.sum_last(r)?
            }
        };
        let q = t.scale(quad, -0.5)?;
        let q = t.sub(q, self.half_logdet)?;
        t.shift(q, -(self.n as f64) * HALF_LOG_2PI)
    }

    fn check_noise(&self, eps: Var) -> Result<()> {
        let s = self.tape.shape(eps);
        if s != [self.batch, self.n] {
            return Err(Error::dim(format!(
                "noise must be [{}, {}], got {s:?}",
                self.batch, self.n
            )));
        }
        Ok(())
    }

    /// Reparameterized sample `z = f_μ(A ε)` (or `m + A ε`) per row.
    pub fn rsample(&self, eps: Var) -> Result<Var> {
        Ok(self.rsample_with_log_prob(eps)?.0)
    }

    /// A sample together with its log-density. The density is computed from
    /// the tangent vector `v = A ε` directly, using `‖u‖_L = ‖v‖`, so the
    /// sample never has to be mapped back.
    pub fn rsample_with_log_prob(&self, eps: Var) -> Result<(Var, Var)> {
        self.check_noise(eps)?;
        let t = self.tape;
        let v = self.scale_noise(eps)?;
        let g = self.gauss_logpdf(v)?;
        match self.mu {
            None => Ok((t.add(self.loc, v)?, g)),
            Some(mu) => {
                let z = hyper::wrap(t, mu, v)?;
                let s = t.dot_last(v, v)?;
                let lp = self.subtract_jacobian(g, s)?;
                Ok((z, lp))
            }
        }
    }

    fn subtract_jacobian(&self, g: Var, s: Var) -> Result<Var> {
        if self.n < 2 {
            return Ok(g);
        }
        let t = self.tape;
        let j = t.unary(UnaryOp::LogSinhcSqrt, s)?;
        let j = t.scale(j, (self.n - 1) as f64)?;
        t.sub(g, j)
    }

    /// Rowwise `log p(z)`, `[B, 1]`. `z` is `[B, n+1]` (hyperbolic) or `[B, n]`.
    pub fn log_prob(&self, z: Var) -> Result<Var> {
        let t = self.tape;
        match self.mu {
            None => {
                let v = t.sub(z, self.loc)?;
                self.gauss_logpdf(v)
            }
            Some(mu) => {
                if t.shape(z) != [self.batch, self.n + 1] {
                    return Err(Error::dim(format!(
                        "points must be [{}, {}], got {:?}",
                        self.batch,
                        self.n + 1,
                        t.shape(z)
                    )));
                }
                let (v, s) = hyper::unwrap_with_sq_norm(t, mu, z)?;
                let g = self.gauss_logpdf(v)?;
                self.subtract_jacobian(g, s)
            }
        }
    }
}

/// Monte Carlo `KL(q ‖ p)` per row from one reparameterized sample each:
/// `log q(z) − log p(z)`, `z = q.rsample(ε)`. Shape `[B, 1]`.
pub fn kl_single(q: &BatchDist<'_>, p: &BatchDist<'_>, eps: Var) -> Result<Var> {
    if q.dim() != p.dim() || q.batch() != p.batch() || q.kind.is_hyperbolic() != p.kind.is_hyperbolic() {
        return Err(Error::dim("kl between incompatible distribution batches"));
    }
    let (z, lq) = q.rsample_with_log_prob(eps)?;
    let lp = p.log_prob(z)?;
    q.tape.sub(lq, lp)
}

/// `(1/S) Σₛ [log q(zₛ) − log p(zₛ)]` per row, with `eps` of shape
/// `[S·B, n]` (sample-major). Returns `[B, 1]`.
pub fn kl_mc(q: &BatchDist<'_>, p: &BatchDist<'_>, eps: Var) -> Result<Var> {
    let t = q.tape;
    let rows = t.shape(eps)[0];
    let b = q.batch();
    if b == 0 || rows % b != 0 {
        return Err(Error::dim("noise rows must be a multiple of the batch size"));
    }
    let s = rows / b;
    if s == 1 {
        return kl_single(q, p, eps);
    }
    let (qs, ps) = (q.repeated(s)?, p.repeated(s)?);
    let per = kl_single(&qs, &ps, eps)?;
    let per = t.reshape(per, &[s, b])?;
    let sum = t.sum_axis(per, 0)?;
    let mean = t.scale(sum, 1.0 / s as f64)?;
    t.reshape(mean, &[b, 1])
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std_err: (var / n).sqrt() }
    }
}

/// One distribution with fixed parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrappedDistribution {
    pub kind: Kind,
    /// Mean parameter `m ∈ ℝⁿ`; the mean is `exp_𝟎([0, m])` unless the kind
    /// is Euclidean.
    pub loc: Vec<f64>,
    pub cov: CovarianceSpec,
}

impl WrappedDistribution {
    pub fn new(kind: Kind, loc: Vec<f64>, cov: CovarianceSpec) -> Result<Self> {
        check_combination(kind, cov.flavor)?;
        if loc.is_empty() {
            return Err(Error::dim("dimension must be at least 1"));
        }
        cov.check_dim(loc.len())?;
        Ok(Self { kind, loc, cov })
    }

    /// A hyperbolic distribution centered at the given point.
    pub fn at_point(kind: Kind, mu: &LorentzPoint, cov: CovarianceSpec) -> Result<Self> {
        if !kind.is_hyperbolic() {
            return Err(Error::contract("at_point needs a hyperbolic kind"));
        }
        let loc = geometry::unwrap(&LorentzPoint::origin(mu.dim()), mu)?;
        Self::new(kind, loc, cov)
    }

    /// Standard distribution at the origin with identity covariance.
    pub fn standard(kind: Kind, flavor: Flavor, n: usize) -> Result<Self> {
        Self::new(kind, vec![0.0; n], CovarianceSpec::identity(flavor, n))
    }

    pub fn dim(&self) -> usize {
        self.loc.len()
    }

    pub fn flavor(&self) -> Flavor {
        self.cov.flavor
    }

    pub fn mean_point(&self) -> Option<LorentzPoint> {
        self.kind.is_hyperbolic().then(|| LorentzPoint::lift(&self.loc))
    }

    /// The realized covariance of the tangent-space Gaussian at the origin
    /// (for RoWN, the rotated `RΣRᵀ`).
    pub fn tangent_covariance(&self) -> Result<Matrix> {
        let n = self.dim();
        match self.kind {
            Kind::Rown => {
                let mu = self.mean_point().expect("rown is hyperbolic");
                rown_covariance(&mu, &self.cov.variances(n)?)
            }
            _ => Ok(realize_covariance(&self.cov, n)?.cov),
        }
    }

    fn on_tape<'t>(&self, tape: &'t Tape, rows: usize) -> Result<BatchDist<'t>> {
        let n = self.dim();
        let loc = Tensor::new(vec![1, n], self.loc.clone())?;
        let raw_shape = match self.cov.flavor {
            Flavor::Isotropic => vec![1, 1],
            Flavor::Diagonal => vec![1, n],
            Flavor::Full => vec![1, n, n],
        };
        let raw = Tensor::new(raw_shape, self.cov.raw.clone())?;
        let one = BatchDist::new(tape, self.kind, self.cov.flavor, tape.constant(loc), tape.constant(raw))?;
        one.repeated(rows)
    }

    /// Draws `count` points: Lorentz coordinates (`n+1` each) or `ℝⁿ` points.
    pub fn sample(&self, rng: &mut Rng, count: usize) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::contract("sample count must be at least 1"));
        }
        let eps = standard_normal(rng, count, self.dim());
        self.sample_from_noise(&eps)
    }

    /// The deterministic map from `[count, n]` standard-normal noise to samples.
    pub fn sample_from_noise(&self, eps: &Tensor) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let d = self.on_tape(&tape, eps.shape()[0])?;
        let z = d.rsample(tape.constant(eps.clone()))?;
        let z = tape.value(z);
        Ok(z.rows().map(<[f64]>::to_vec).collect())
    }

    pub fn log_prob(&self, z: &[f64]) -> Result<f64> {
        Ok(self.log_prob_many(&[z.to_vec()])?[0])
    }

    /// Log-densities of many points in one pass.
    pub fn log_prob_many(&self, zs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if zs.is_empty() {
            return Ok(vec![]);
        }
        let width = if self.kind.is_hyperbolic() { self.dim() + 1 } else { self.dim() };
        for z in zs {
            if z.len() != width {
                return Err(Error::dim(format!("point of length {} in dimension {}", z.len(), self.dim())));
            }
            if self.kind.is_hyperbolic() {
                LorentzPoint::new(z.clone())?;
            }
        }
        let tape = Tape::new();
        let d = self.on_tape(&tape, zs.len())?;
        let z = tape.constant(Tensor::from_rows(zs)?);
        let lp = d.log_prob(z)?;
        let out = tape.value(lp).data().to_vec();
        Ok(out)
    }
}

/// Monte Carlo `KL(q ‖ p)` from `n_samples` draws of `q`.
pub fn kl_mc_estimate(
    q: &WrappedDistribution,
    p: &WrappedDistribution,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    if q.dim() != p.dim() || q.kind.is_hyperbolic() != p.kind.is_hyperbolic() {
        return Err(Error::dim("kl between incompatible distributions"));
    }
    if n_samples == 0 {
        return Err(Error::contract("n_samples must be at least 1"));
    }
    let eps = standard_normal(rng, n_samples, q.dim());
    let tape = Tape::new();
    let dq = q.on_tape(&tape, n_samples)?;
    let dp = p.on_tape(&tape, n_samples)?;
    let per = kl_single(&dq, &dp, tape.constant(eps))?;
    let xs = tape.value(per).data().to_vec();
    Ok(Estimate::from_samples(&xs))
}
