use super::{check_dim, ModelError, Objective};
use crate::vecops::{dot, mat_vec};

/// `f(theta) = theta^T A theta / 2` for symmetric positive definite `A`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    a: Vec<Vec<f64>>,
}

impl QuadraticObjective {
    pub fn new(a: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let n = a.len();
        if n == 0 {
            return Err(ModelError::InvalidSpec("empty matrix".into()));
        }
        for row in &a {
            check_dim(n, row.len())?;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let tol = 1e-12 * (1.0 + a[i][j].abs().max(a[j][i].abs()));
                if (a[i][j] - a[j][i]).abs() > tol {
                    return Err(ModelError::NotSymmetric { row: i, col: j });
                }
            }
        }
        if !cholesky_ok(&a) {
            return Err(ModelError::NotPositiveDefinite);
        }
        Ok(Self { a })
    }

    pub fn diagonal(d: &[f64]) -> Result<Self, ModelError> {
        let n = d.len();
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect())
            .collect();
        Self::new(a)
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.a
    }
}

fn cholesky_ok(a: &[Vec<f64>]) -> bool {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value_and_grad(&self, theta: &[f64], _: Option<&[usize]>) -> Result<(f64, Vec<f64>), ModelError> {
        check_dim(self.dim(), theta.len())?;
        let g = mat_vec(&self.a, theta);
        Ok((0.5 * dot(theta, &g), g))
    }

    fn hessian(&self, _theta: &[f64]) -> Option<Vec<Vec<f64>>> {
        Some(self.a.clone())
    }
}

/// `(1 - x)^2 + 100 (y - x^2)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rosenbrock;

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_grad(&self, theta: &[f64], _: Option<&[usize]>) -> Result<(f64, Vec<f64>), ModelError> {
        check_dim(2, theta.len())?;
        let (x, y) = (theta[0], theta[1]);
        let r = y - x * x;
        let value = (1.0 - x).powi(2) + 100.0 * r * r;
        let gx = -2.0 * (1.0 - x) - 400.0 * x * r;
        let gy = 200.0 * r;
        Ok((value, vec![gx, gy]))
    }

    fn hessian(&self, theta: &[f64]) -> Option<Vec<Vec<f64>>> {
        let (x, y) = (theta[0], theta[1]);
        Some(vec![
            vec![2.0 - 400.0 * (y - x * x) + 800.0 * x * x, -400.0 * x],
            vec![-400.0 * x, 200.0],
        ])
    }
}
