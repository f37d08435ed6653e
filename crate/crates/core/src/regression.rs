//! Least-squares polynomial fitting.
//!
//! Solved by Householder QR on the Vandermonde matrix rather than the normal
//! equations, which keeps the conditioning of `X^T X` out of the result.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub degree: usize,
    /// Ascending powers: `y = c[0] + c[1] x + c[2] x^2 + ...`.
    pub coefficients: Vec<f64>,
    /// `sqrt(sum (y - p(x))^2)`.
    pub residual_norm: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

pub fn fit_polynomial(points: &[(f64, f64)], degree: usize) -> Result<PolyFit> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Range("fit points must be finite".into()));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < degree + 1 {
        return Err(Error::Underdetermined(format!(
            "degree {degree} needs {} distinct x values, got {}",
            degree + 1,
            xs.len()
        )));
    }

    let m = points.len();
    let n = degree + 1;
    // Column-major Vandermonde matrix.
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|j| points.iter().map(|(x, _)| x.powi(j as i32)).collect())
        .collect();
    let mut b: Vec<f64> = points.iter().map(|p| p.1).collect();

    for k in 0..n {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Underdetermined("rank-deficient design matrix".into()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(p, q)| p * q).sum();
            let s = 2.0 * dot / vnorm2;
            col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= s * vi);
        };
        for col in a.iter_mut().skip(k) {
            reflect(&mut col[k..]);
        }
        reflect(&mut b[k..]);
    }

    let mut coefficients = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = (i + 1..n).map(|j| a[j][i] * coefficients[j]).sum();
        let diag = a[i][i];
        if diag.abs() <= f64::EPSILON * a[0][0].abs().max(1.0) * m as f64 {
            return Err(Error::Underdetermined("rank-deficient design matrix".into()));
        }
        coefficients[i] = (b[i] - tail) / diag;
    }

    let fit = PolyFit {
        degree,
        coefficients,
        residual_norm: 0.0,
    };
    let residual_norm = points
        .iter()
        .map(|(x, y)| (y - fit.eval(*x)).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(PolyFit { residual_norm, ..fit })
}
