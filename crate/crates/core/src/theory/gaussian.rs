use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::seeded;

const PSD_TOL: f64 = 1e-10;

/// Lower-triangular `L` with `L L^T = cov`, tolerating semidefinite input
/// (zero pivots give zero columns).
pub fn psd_factor(cov: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, m) = cov.dim();
    if n != m {
        return Err(Error::shape(format!("covariance must be square, got {n}x{m}")));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("covariance has non-finite entries"));
    }
    let scale = cov.diag().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = PSD_TOL * scale;
    for i in 0..n {
        for j in 0..i {
            if (cov[[i, j]] - cov[[j, i]]).abs() > tol {
                return Err(Error::invalid("covariance is not symmetric"));
            }
        }
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let d = cov[[j, j]] - (0..j).map(|k| l[[j, k]] * l[[j, k]]).sum::<f64>();
        if d < -tol {
            return Err(Error::invalid("covariance is not positive semidefinite"));
        }
        if d <= tol {
            for i in j + 1..n {
                let r = cov[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
                if r.abs() > tol.sqrt() {
                    return Err(Error::invalid("covariance is not positive semidefinite"));
                }
            }
            continue;
        }
        let root = d.sqrt();
        l[[j, j]] = root;
        for i in j + 1..n {
            let r = cov[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
            l[[i, j]] = r / root;
        }
    }
    Ok(l)
}

/// Writes `mu + L z` with `z` standard normal into `out`.
pub(crate) fn draw_into<R: Rng + ?Sized>(rng: &mut R, mu: ArrayView1<f64>, l: &Array2<f64>, z: &mut [f64], out: &mut [f64]) {
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = mu[i] + (0..=i).map(|k| l[[i, k]] * z[k]).sum::<f64>();
    }
}

fn check_pair(mu_x: &Array1<f64>, mu_y: &Array1<f64>, cov_x: &Array2<f64>, cov_y: &Array2<f64>) -> Result<()> {
    let p = mu_x.len();
    if mu_y.len() != p || cov_x.dim() != (p, p) || cov_y.dim() != (p, p) {
        return Err(Error::shape(format!(
            "means of length {} and {}, covariances {:?} and {:?}",
            p,
            mu_y.len(),
            cov_x.dim(),
            cov_y.dim()
        )));
    }
    Ok(())
}

/// `E ||X - Y||^2` for independent Gaussians: `||mu_x - mu_y||^2 + tr(cov_x + cov_y)`.
pub fn expected_sq_gaussian_distance(
    mu_x: &Array1<f64>,
    mu_y: &Array1<f64>,
    cov_x: &Array2<f64>,
    cov_y: &Array2<f64>,
) -> Result<f64> {
    check_pair(mu_x, mu_y, cov_x, cov_y)?;
    psd_factor(cov_x)?;
    psd_factor(cov_y)?;
    let diff = mu_x - mu_y;
    Ok(diff.dot(&diff) + cov_x.diag().sum() + cov_y.diag().sum())
}

/// Sample mean of `||X - Y||^2` over `n` independent draws.
pub fn monte_carlo_sq_distance(
    mu_x: &Array1<f64>,
    mu_y: &Array1<f64>,
    cov_x: &Array2<f64>,
    cov_y: &Array2<f64>,
    n: usize,
    seed: u64,
) -> Result<f64> {
    check_pair(mu_x, mu_y, cov_x, cov_y)?;
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let (lx, ly) = (psd_factor(cov_x)?, psd_factor(cov_y)?);
    let p = mu_x.len();
    let mut rng = seeded(seed);
    let (mut z, mut x, mut y) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
    let mut total = 0.0;
    for _ in 0..n {
        draw_into(&mut rng, mu_x.view(), &lx, &mut z, &mut x);
        draw_into(&mut rng, mu_y.view(), &ly, &mut z, &mut y);
        total += x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn factor_reconstructs() {
        let cov = array![[4.0, 2.0, 0.4], [2.0, 3.0, 0.1], [0.4, 0.1, 1.0]];
        let l = psd_factor(&cov).unwrap();
        let back = l.dot(&l.t());
        assert!((&back - &cov).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn factor_handles_semidefinite() {
        // Rank one: v v^T with v = (1, 2).
        let cov = array![[1.0, 2.0], [2.0, 4.0]];
        let l = psd_factor(&cov).unwrap();
        assert!((&l.dot(&l.t()) - &cov).iter().all(|d| d.abs() < 1e-12));
        assert_eq!(psd_factor(&Array2::zeros((3, 3))).unwrap(), Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn factor_rejects_bad_matrices() {
        assert!(psd_factor(&array![[1.0, 0.0], [0.0, -1.0]]).is_err());
        assert!(psd_factor(&array![[1.0, 0.5], [0.0, 1.0]]).is_err());
        assert!(psd_factor(&array![[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(psd_factor(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let z = Array2::zeros((2, 2));
        let mu = array![1.0, -2.0];
        assert_eq!(expected_sq_gaussian_distance(&mu, &mu, &z, &z).unwrap(), 0.0);
        let eye = Array2::eye(2);
        let d = expected_sq_gaussian_distance(&array![3.0, 4.0], &array![0.0, 0.0], &eye, &eye).unwrap();
        assert_eq!(d, 29.0);
        assert!(expected_sq_gaussian_distance(&array![1.0], &mu, &z, &z).is_err());
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let (mx, my) = (array![3.0, 4.0, -1.0], array![0.0, 0.5, 1.0]);
        let cx = array![[1.0, 0.3, 0.0], [0.3, 2.0, 0.2], [0.0, 0.2, 0.5]];
        let cy = array![[0.5, 0.0, 0.1], [0.0, 0.5, 0.0], [0.1, 0.0, 0.25]];
        let exact = expected_sq_gaussian_distance(&mx, &my, &cx, &cy).unwrap();
        let mc = monte_carlo_sq_distance(&mx, &my, &cx, &cy, 1_000_000, 7).unwrap();
        assert!((mc - exact).abs() / exact < 0.005, "{mc} vs {exact}");
    }
}
