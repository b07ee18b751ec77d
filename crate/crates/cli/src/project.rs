use hyprown::eval::Space;
use hyprown::geometry::{unwrap, LorentzPoint};
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{usage, CliResult};

/// Tangent coordinates at the origin: `log_𝟎(z)` without the time slot for
/// Lorentz points, the points themselves for Euclidean.
fn tangent(points: &[Vec<f64>], space: Space) -> CliResult<Vec<Vec<f64>>> {
    points
        .iter()
        .map(|p| match space {
            Space::Euclidean => Ok(p.clone()),
            Space::Lorentz => {
                let z = LorentzPoint::new(p.clone())?;
                Ok(unwrap(&LorentzPoint::origin(z.dim()), &z)?)
            }
        })
        .collect()
}

/// The two leading principal axes of the uncentered second-moment matrix, so
/// the origin stays at the origin.
fn principal_axes(v: &[Vec<f64>]) -> [Vec<f64>; 2] {
    let n = v[0].len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for x in v {
        let x = nalgebra::DVector::from_column_slice(x);
        m += &x * x.transpose();
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |k: usize| {
        let mut a: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        // Deterministic sign: largest-magnitude entry positive.
        let big = a.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            a.iter_mut().for_each(|x| *x = -*x);
        }
        a
    };
    [axis(0), axis(1)]
}

/// Two-dimensional plotting coordinates. Hyperbolic points go to the
/// Poincaré disk; with more than two dimensions `pca` must be set and the
/// tangent vectors at the origin are projected onto two principal axes first.
pub fn poincare_2d(points: &[Vec<f64>], space: Space, pca: bool) -> CliResult<Vec<[f64; 2]>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let t = tangent(points, space)?;
    let n = t[0].len();
    let flat: Vec<[f64; 2]> = if n <= 2 {
        t.iter().map(|x| [x[0], x.get(1).copied().unwrap_or(0.0)]).collect()
    } else if pca {
        let [a, b] = principal_axes(&t);
        t.iter().map(|x| [dot(x, &a), dot(x, &b)]).collect()
    } else {
        return Err(usage(format!(
            "--export-poincare on {n}-dimensional embeddings needs --project pca"
        )));
    };
    Ok(match space {
        Space::Euclidean => flat,
        Space::Lorentz => flat
            .into_iter()
            .map(|[x, y]| {
                let r = x.hypot(y);
                if r == 0.0 {
                    [0.0, 0.0]
                } else {
                    let s = (0.5 * r).tanh() / r;
                    [s * x, s * y]
                }
            })
            .collect(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hyprown::geometry::to_poincare;

    #[test]
    fn two_dims_match_poincare_map() {
        let pts: Vec<Vec<f64>> = [[0.3, -1.2], [0.0, 0.0], [2.0, 0.5]]
            .iter()
            .map(|m| LorentzPoint::lift(m).into_coords())
            .collect();
        let out = poincare_2d(&pts, Space::Lorentz, false).unwrap();
        for (p, q) in pts.iter().zip(&out) {
            let want = to_poincare(&LorentzPoint::new(p.clone()).unwrap());
            assert!((want.coords()[0] - q[0]).abs() < 1e-12 && (want.coords()[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_required_above_two_dims() {
        let pts = vec![LorentzPoint::lift(&[0.1, 0.2, 0.3]).into_coords()];
        assert_eq!(poincare_2d(&pts, Space::Lorentz, false).unwrap_err().exit_code(), 2);
        let out = poincare_2d(&pts, Space::Lorentz, true).unwrap();
        // A single point lies on the first axis, so its disk radius is kept.
        let r = out[0][0].hypot(out[0][1]);
        let want = Space::Lorentz.norm(&pts[0]);
        assert!((r - want).abs() < 1e-12);
    }
}
