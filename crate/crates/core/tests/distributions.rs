mod common;

use common::{max_abs_diff, norm};
use hyprown::distributions::*;
use hyprown::geometry::{distance, from_poincare, rotation_matrix, unwrap, LorentzPoint, PoincarePoint};
use hyprown::linalg::Matrix;
use hyprown::special::{softplus, softplus_inv};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

fn nalg(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// `log N(v; 0, Σ)` through nalgebra's Cholesky.
fn gauss_logpdf(v: &[f64], cov: &Matrix) -> f64 {
    let n = v.len() as f64;
    let chol = nalg(cov).cholesky().expect("positive definite");
    let sol = chol.solve(&DVector::from_column_slice(v));
    let quad = DVector::from_column_slice(v).dot(&sol);
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (quad + logdet + n * (2.0 * std::f64::consts::PI).ln())
}

fn random_dist(rng: &mut hyprown::Rng, kind: Kind, flavor: Flavor, n: usize) -> WrappedDistribution {
    let loc = common::ball(rng, n, 1.5);
    let cov = match flavor {
        Flavor::Isotropic => CovarianceSpec::isotropic(softplus_inv(rng.random_range(0.2..1.5))),
        Flavor::Diagonal => CovarianceSpec::diagonal((0..n).map(|_| softplus_inv(rng.random_range(0.1..1.5))).collect()),
        Flavor::Full => {
            let m: Vec<f64> = common::gaussian(rng, n * n).iter().map(|x| 0.5 * x).collect();
            CovarianceSpec::full(Matrix::from_row_major(n, n, m).unwrap())
        }
    };
    WrappedDistribution::new(kind, loc, cov).unwrap()
}

#[test]
fn rown_covariance_eigenpairs_match_a_dense_solver() {
    let mut rng = common::rng(11);
    for case in 0..50 {
        let n = 2 + case % 7;
        let mu = common::point(&mut rng, n, 2.0);
        let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
        let c = rown_covariance(&mu, &sigma).unwrap();
        assert!(max_abs_diff(c.as_slice(), c.transpose().as_slice()) < 1e-12);
        let mut eig: Vec<f64> = nalg(&c).symmetric_eigen().eigenvalues.iter().copied().collect();
        let mut want = sigma.clone();
        eig.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert!(max_abs_diff(&eig, &want) < 1e-9, "{eig:?} vs {want:?}");
        let y: Vec<f64> = mu.spatial().iter().map(|v| v / norm(mu.spatial())).collect();
        let cy = c.matvec(&y).unwrap();
        let sy: Vec<f64> = y.iter().map(|v| v * sigma[0]).collect();
        assert!(max_abs_diff(&cy, &sy) < 1e-9);
    }
}

#[test]
fn isotropic_rown_covariance_is_unchanged() {
    let mut rng = common::rng(12);
    for _ in 0..20 {
        let mu = common::point(&mut rng, 4, 2.0);
        let c = rown_covariance(&mu, &[0.7; 4]).unwrap();
        assert!(c.max_abs_diff(&Matrix::identity(4).scale(0.7)) < 1e-12);
    }
}

#[test]
fn tangent_samples_have_zero_mean_and_the_realized_covariance() {
    let mut rng = common::rng(13);
    let count = 100_000;
    for (kind, flavor) in [(Kind::Hwn, Flavor::Diagonal), (Kind::Rown, Flavor::Diagonal), (Kind::Hwn, Flavor::Full)] {
        let d = random_dist(&mut rng, kind, flavor, 3);
        let mu = d.mean_point().unwrap();
        let zs = d.sample(&mut rng, count).unwrap();
        let vs: Vec<Vec<f64>> = zs.iter().map(|z| unwrap(&mu, &LorentzPoint::new(z.clone()).unwrap()).unwrap()).collect();
        let cov = d.tangent_covariance().unwrap();
        let mut emp = Matrix::zeros(3, 3);
        for i in 0..3 {
            let xs: Vec<f64> = vs.iter().map(|v| v[i]).collect();
            let est = Estimate::from_samples(&xs);
            assert!(est.mean.abs() < 4.0 * est.std_err, "{kind:?}/{flavor:?} axis {i}: {est:?}");
        }
        for v in &vs {
            emp = emp.add(&Matrix::outer(v, v)).unwrap();
        }
        let emp = emp.scale(1.0 / count as f64);
        let rel = emp.sub(&cov).unwrap().frobenius_norm() / cov.frobenius_norm();
        assert!(rel < 0.05, "{kind:?}/{flavor:?}: relative Frobenius error {rel}");
    }
}

#[test]
fn tiny_covariance_collapses_samples_onto_the_mean() {
    let d = WrappedDistribution::new(Kind::Rown, vec![0.3, -0.2], CovarianceSpec::diagonal(vec![-40.0, -40.0])).unwrap();
    let mu = d.mean_point().unwrap();
    for z in d.sample(&mut common::rng(1), 100).unwrap() {
        assert!(distance(&mu, &LorentzPoint::new(z).unwrap()).unwrap() < 1e-6);
    }
}

#[test]
fn rown_matches_full_hwn_built_from_its_rotation() {
    let mut rng = common::rng(14);
    for n in [2, 3, 5] {
        let d = random_dist(&mut rng, Kind::Rown, Flavor::Diagonal, n);
        let target = d.tangent_covariance().unwrap().sub(&Matrix::identity(n).scale(FULL_EPS)).unwrap();
        let full = WrappedDistribution::new(Kind::Hwn, d.loc.clone(), CovarianceSpec::full(target.cholesky().unwrap())).unwrap();
        let zs: Vec<Vec<f64>> = (0..100).map(|_| common::point(&mut rng, n, 3.0).into_coords()).collect();
        let a = d.log_prob_many(&zs).unwrap();
        let b = full.log_prob_many(&zs).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-10, "n={n}");
    }
}

#[test]
fn log_prob_is_gaussian_minus_the_jacobian_term() {
    let mut rng = common::rng(15);
    for (kind, flavor) in [(Kind::Hwn, Flavor::Isotropic), (Kind::Hwn, Flavor::Diagonal), (Kind::Hwn, Flavor::Full), (Kind::Rown, Flavor::Diagonal)] {
        for n in [1, 2, 4] {
            let d = random_dist(&mut rng, kind, flavor, n);
            let mu = d.mean_point().unwrap();
            let cov = d.tangent_covariance().unwrap();
            for _ in 0..20 {
                let z = common::point(&mut rng, n, 3.0);
                let v = unwrap(&mu, &z).unwrap();
                let r = distance(&mu, &z).unwrap();
                let jac = if r > 0.0 { (n as f64 - 1.0) * (r.sinh() / r).ln() } else { 0.0 };
                let want = gauss_logpdf(&v, &cov) - jac;
                let got = d.log_prob(z.coords()).unwrap();
                assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{kind:?}/{flavor:?} n={n}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn kl_of_a_distribution_with_itself_vanishes() {
    let mut rng = common::rng(16);
    let q = random_dist(&mut rng, Kind::Rown, Flavor::Diagonal, 3);
    let est = kl_mc_estimate(&q, &q, 10_000, &mut rng).unwrap();
    assert!(est.mean.abs() <= 3.0 * est.std_err + 1e-12, "{est:?}");
}

#[test]
fn euclidean_kl_matches_the_closed_form() {
    let mut rng = common::rng(17);
    for _ in 0..3 {
        let q = random_dist(&mut rng, Kind::Euclidean, Flavor::Diagonal, 3);
        let p = random_dist(&mut rng, Kind::Euclidean, Flavor::Diagonal, 3);
        let (vq, vp) = (q.cov.variances(3).unwrap(), p.cov.variances(3).unwrap());
        let exact: f64 = (0..3)
            .map(|i| {
                let dm = q.loc[i] - p.loc[i];
                0.5 * ((vp[i] / vq[i]).ln() + (vq[i] + dm * dm) / vp[i] - 1.0)
            })
            .sum();
        let est = kl_mc_estimate(&q, &p, 100_000, &mut rng).unwrap();
        assert!((est.mean - exact).abs() < 3.0 * est.std_err, "{est:?} vs {exact}");
    }
}

#[test]
fn kl_estimates_are_not_negative() {
    let mut rng = common::rng(18);
    for i in 0..20 {
        let (kind, flavor) = [(Kind::Hwn, Flavor::Diagonal), (Kind::Rown, Flavor::Diagonal), (Kind::Hwn, Flavor::Full)][i % 3];
        let q = random_dist(&mut rng, kind, flavor, 2 + i % 3);
        let p = random_dist(&mut rng, kind, flavor, 2 + i % 3);
        let est = kl_mc_estimate(&q, &p, 2_000, &mut rng).unwrap();
        assert!(est.mean > -3.0 * est.std_err, "{est:?}");
    }
}

#[test]
fn full_covariance_factor_round_trips() {
    let mut rng = common::rng(19);
    for n in 1..=8 {
        for _ in 0..5 {
            let m: Vec<f64> = common::gaussian(&mut rng, n * n);
            let r = realize_covariance(&CovarianceSpec::full(Matrix::from_row_major(n, n, m).unwrap()), n).unwrap();
            let aat = r.factor.matmul(&r.factor.transpose()).unwrap();
            assert!(aat.max_abs_diff(&r.cov) < 1e-10);
        }
    }
    let r = realize_covariance(&CovarianceSpec::diagonal(vec![0.3, -1.0]), 2).unwrap();
    assert!((r.cov.as_slice()[0] - softplus(0.3)).abs() < 1e-15);
    assert!((r.factor.as_slice()[3] - softplus(-1.0).sqrt()).abs() < 1e-15);
}

/// Samples binned on a grid over the Poincaré disk against the density
/// integrated over each bin with the hyperbolic area element.
#[test]
fn sample_histogram_matches_the_density() {
    let mut rng = common::rng(20);
    let count = 1_000_000;
    let bins = 24;
    let sub = 6;
    for d in [
        WrappedDistribution::new(Kind::Rown, vec![0.6, -0.4], CovarianceSpec::diagonal(vec![softplus_inv(0.5), softplus_inv(0.08)])).unwrap(),
        WrappedDistribution::new(Kind::Hwn, vec![-0.2, 0.5], CovarianceSpec::diagonal(vec![softplus_inv(0.2), softplus_inv(0.6)])).unwrap(),
    ] {
        let cell = |x: f64| (((x + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1);
        let mut observed = vec![0usize; bins * bins];
        for z in d.sample(&mut rng, count).unwrap() {
            let p = hyprown::geometry::to_poincare(&LorentzPoint::new(z).unwrap());
            observed[cell(p.coords()[0]) * bins + cell(p.coords()[1])] += 1;
        }
        let w = 2.0 / bins as f64;
        let h = w / sub as f64;
        let (mut abs_err, mut total, mut chi2, mut used) = (0.0, 0.0, 0.0, 0usize);
        for i in 0..bins {
            for j in 0..bins {
                let obs = observed[i * bins + j];
                if obs < 500 {
                    continue;
                }
                let mut mass = 0.0;
                for a in 0..sub {
                    for b in 0..sub {
                        let x = -1.0 + i as f64 * w + (a as f64 + 0.5) * h;
                        let y = -1.0 + j as f64 * w + (b as f64 + 0.5) * h;
                        let r2 = x * x + y * y;
                        if r2 >= 1.0 {
                            continue;
                        }
                        let z = from_poincare(&PoincarePoint::new(vec![x, y]).unwrap());
                        let area = (2.0 / (1.0 - r2)).powi(2) * h * h;
                        mass += d.log_prob(z.coords()).unwrap().exp() * area;
                    }
                }
                let expected = mass * count as f64;
                abs_err += (obs as f64 - expected).abs();
                total += expected;
                chi2 += (obs as f64 - expected).powi(2) / expected;
                used += 1;
            }
        }
        let rel = abs_err / total;
        assert!(used > 10);
        assert!(rel < 0.05, "relative histogram error {rel}");
        assert!(chi2 / (used as f64) < 3.0, "chi2 per bin {}", chi2 / used as f64);
    }
}

#[test]
fn rotation_of_first_axis_reaches_the_mean_direction() {
    let mut rng = common::rng(21);
    for _ in 0..20 {
        let y = common::unit(&mut rng, 5);
        let mut e1 = vec![0.0; 5];
        e1[0] = 1.0;
        let r = rotation_matrix(&e1, &y).unwrap();
        assert!(max_abs_diff(&r.apply(&e1).unwrap(), &y) < 1e-12);
    }
}
