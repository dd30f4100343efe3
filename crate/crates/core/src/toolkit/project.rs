//! Two-component PCA by power iteration with deflation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{dot, norm, Matrix};

pub const TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// n × 2 coordinates.
    pub coords: Matrix,
    /// Covariance eigenvalues for the two axes, nonincreasing.
    pub variances: [f64; 2],
    /// Unit principal directions (zero when the axis has no variance).
    pub components: [Vec<f64>; 2],
}

/// Sample covariance of the mean-centered rows.
pub fn covariance(data: &Matrix) -> (Matrix, Vec<f64>) {
    let (n, d) = data.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    let denom = (n.max(2) - 1) as f64;
    for i in 0..n {
        let centered: Vec<f64> = data.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
        cov.add_outer(1.0 / denom, &centered, &centered);
    }
    (cov, mean)
}

/// Dominant eigenpair of a symmetric PSD matrix.
fn power_iteration(m: &Matrix, rng: &mut impl Rng) -> (f64, Vec<f64>) {
    let d = m.rows();
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    for _ in 0..MAX_ITERATIONS {
        let mut next = m.mul_vec(&v);
        let len = norm(&next);
        if len == 0.0 {
            return (0.0, vec![0.0; d]);
        }
        next.iter_mut().for_each(|x| *x /= len);
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < TOLERANCE {
            break;
        }
    }
    let lambda = dot(&v, &m.mul_vec(&v));
    // sign: largest-magnitude component positive
    let pivot = v.iter().copied().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (lambda, v)
}

pub fn project_2d(data: &Matrix, seed: u64) -> Result<Projection> {
    let (n, d) = data.shape();
    if n < 2 || d < 2 {
        return Err(Error::Config(format!("projection needs n >= 2 and d >= 2, got {n} x {d}")));
    }
    let (mut cov, mean) = covariance(data);
    let scale = (0..d).map(|i| cov[(i, i)]).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut variances = [0.0; 2];
    let mut components = [vec![0.0; d], vec![0.0; d]];
    for axis in 0..2 {
        if scale <= 0.0 {
            break;
        }
        let (lambda, v) = power_iteration(&cov, &mut rng);
        if lambda <= 1e-12 * scale {
            break;
        }
        cov.add_outer(-lambda, &v, &v);
        variances[axis] = lambda;
        components[axis] = v;
    }
    let coords = Matrix::from_fn(n, 2, |i, axis| {
        let centered: Vec<f64> = data.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect();
        dot(&centered, &components[axis])
    });
    Ok(Projection {
        coords,
        variances,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn planar_points_reconstruct_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let offset: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let coef: Vec<(f64, f64)> = (0..30).map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0))).collect();
        let data = Matrix::from_fn(30, 6, |i, j| offset[j] + coef[i].0 * a[j] + coef[i].1 * b[j]);
        let p = project_2d(&data, 0).unwrap();
        let (_, mean) = covariance(&data);
        let mut worst: f64 = 0.0;
        for i in 0..30 {
            for j in 0..6 {
                let rec = mean[j] + p.coords[(i, 0)] * p.components[0][j] + p.coords[(i, 1)] * p.components[1][j];
                worst = worst.max((rec - data[(i, j)]).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn duplicated_rows_duplicate_coordinates() {
        let base = random_matrix(10, 4, 2);
        let data = Matrix::from_fn(20, 4, |i, j| base[(i % 10, j)]);
        let p = project_2d(&data, 0).unwrap();
        for i in 0..10 {
            for axis in 0..2 {
                assert!((p.coords[(i, axis)] - p.coords[(i + 10, axis)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_input_projects_to_origin() {
        let data = Matrix::from_fn(5, 3, |_, j| j as f64);
        let p = project_2d(&data, 0).unwrap();
        assert!(p.coords.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(p.variances, [0.0, 0.0]);
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(project_2d(&Matrix::zeros(1, 4), 0).is_err());
        assert!(project_2d(&Matrix::zeros(4, 1), 0).is_err());
    }

    #[test]
    fn column_variances_nonincreasing() {
        let p = project_2d(&random_matrix(50, 8, 3), 0).unwrap();
        let var = |axis: usize| (0..50).map(|i| p.coords[(i, axis)].powi(2)).sum::<f64>() / 49.0;
        assert!(var(0) >= var(1));
        assert!((var(0) - p.variances[0]).abs() < 1e-8);
    }
}
