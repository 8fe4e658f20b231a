//! Dense-free vector helpers and the identity-plus-low-rank operator used by
//! the adaptive integrator.

use crate::error::{Error, Result};

/// Pivots or capacitance determinants below this magnitude count as singular.
pub const SINGULARITY_TOL: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Splits `x` into `(u.x, x - (u.x) u)` for a unit `u`. A second pass
/// strips the roundoff left along `u`, which anisotropic metrics amplify.
pub fn split_along(u: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let mut ux = dot(u, x);
    let mut perp: Vec<f64> = x.iter().zip(u).map(|(xi, ui)| xi - ux * ui).collect();
    let c = dot(u, &perp);
    axpy(-c, u, &mut perp);
    ux += c;
    (ux, perp)
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|xi| alpha * xi).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Operator of the form `scale * I + sum_r left_r * right_r^T` with at most a
/// handful of rank-one terms. Solves and determinants cost O(d r^2 + r^3).
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityPlusLowRank {
    pub scale: f64,
    pub terms: Vec<(Vec<f64>, Vec<f64>)>,
}

impl IdentityPlusLowRank {
    pub fn scaled_identity(scale: f64) -> Self {
        Self { scale, terms: Vec::new() }
    }

    pub fn dim(&self) -> Option<usize> {
        self.terms.first().map(|(l, _)| l.len())
    }

    /// Returns `I + c * self`.
    pub fn identity_plus(&self, c: f64) -> Self {
        Self {
            scale: 1.0 + c * self.scale,
            terms: self
                .terms
                .iter()
                .map(|(l, r)| (l.clone(), scaled(c, r)))
                .collect(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = scaled(self.scale, x);
        for (l, r) in &self.terms {
            axpy(dot(r, x), l, &mut out);
        }
        out
    }

    fn capacitance(&self) -> Result<Vec<Vec<f64>>> {
        if self.scale.abs() < SINGULARITY_TOL || !self.scale.is_finite() {
            return Err(Error::step(format!("identity scale {} is singular", self.scale)));
        }
        let r = self.terms.len();
        let mut cap = vec![vec![0.0; r]; r];
        for (i, row) in cap.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                *c = dot(&self.terms[i].1, &self.terms[j].0) / self.scale;
                if i == j {
                    *c += 1.0;
                }
            }
        }
        Ok(cap)
    }

    /// Solves `self * x = rhs` by the Woodbury identity.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let cap = self.capacitance()?;
        let proj: Vec<f64> = self.terms.iter().map(|(_, r)| dot(r, rhs) / self.scale).collect();
        let (y, det) = small_solve(cap, proj)?;
        if det.abs() < SINGULARITY_TOL {
            return Err(Error::step(format!("capacitance determinant {det:e} is singular")));
        }
        let mut x = rhs.to_vec();
        for ((l, _), yi) in self.terms.iter().zip(&y) {
            axpy(-yi, l, &mut x);
        }
        let inv = 1.0 / self.scale;
        if inv != 1.0 {
            x.iter_mut().for_each(|xi| *xi *= inv);
        }
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::step("non-finite solution of rank-structured system"))
        }
    }

    /// `log |det(self)|` for an operator on R^d, by the matrix determinant lemma.
    pub fn log_abs_det(&self, d: usize) -> Result<f64> {
        let cap = self.capacitance()?;
        let r = cap.len();
        let (_, det) = small_solve(cap, vec![0.0; r])?;
        if det.abs() < SINGULARITY_TOL {
            return Err(Error::step(format!("capacitance determinant {det:e} is singular")));
        }
        Ok(d as f64 * self.scale.abs().ln() + det.abs().ln())
    }

    pub fn to_dense(&self, d: usize) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::<f64>::identity(d, d) * self.scale;
        for (l, r) in &self.terms {
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] += l[i] * r[j];
                }
            }
        }
        m
    }
}

/// Gaussian elimination with partial pivoting for the tiny capacitance systems.
/// Returns the solution and the determinant.
fn small_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let n = b.len();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[piv][col].abs() < SINGULARITY_TOL * 1e-3 || !a[piv][col].is_finite() {
            return Ok((vec![f64::NAN; n], 0.0));
        }
        if piv != col {
            a.swap(piv, col);
            b.swap(piv, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok((x, det))
}
