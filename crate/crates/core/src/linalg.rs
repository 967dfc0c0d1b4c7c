//! Thin helpers over nalgebra for the small dense systems used throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Invert a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::SingularDesign(format!("{what} is not positive definite")))
}

/// Solve `m x = rhs` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::SingularDesign(format!("{what} is not positive definite")))
}

/// Weighted cross products `(Σ w x xᵀ, Σ w x y)` over the rows of `x`.
pub fn weighted_normal_equations(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = x.ncols();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for (d, (&yd, &wd)) in y.iter().zip(w).enumerate() {
        let row = x.row(d);
        for i in 0..p {
            xty[i] += wd * row[i] * yd;
            for j in 0..=i {
                xtx[(i, j)] += wd * row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    (xtx, xty)
}

/// Weighted least squares coefficients.
pub fn wls(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<DVector<f64>> {
    let (xtx, xty) = weighted_normal_equations(x, y, w);
    spd_solve(&xtx, &xty, "XᵀWX")
}

/// Column rank check via the singular values, relative to the largest.
pub fn has_full_column_rank(x: &DMatrix<f64>) -> bool {
    if x.nrows() < x.ncols() {
        return false;
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    max > 0.0 && sv.iter().all(|&s| s > max * 1e-10)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` divisor.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
