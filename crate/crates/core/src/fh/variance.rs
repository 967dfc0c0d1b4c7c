//! Estimators of the between-area variance `σ_u²`.

use nalgebra::{DMatrix, DVector};

use super::{gls_beta, AreaDesign, VarianceMethod};
use crate::error::{Error, Result};
use crate::linalg;

pub const FISHER_TOL: f64 = 1e-8;
pub const FISHER_MAX_ITER: usize = 100;

/// `σ̂_u²` (clamped at zero) and the estimate of its variance.
pub fn estimate_sigma2_u(design: &AreaDesign, method: VarianceMethod) -> Result<(f64, f64)> {
    let (d, p) = (design.n_areas(), design.n_covariates());
    if d < p + 2 {
        return Err(Error::InvalidInput(format!(
            "{d} areas with {p} covariates: variance component is not identified (need D ≥ p + 2)"
        )));
    }
    let s2u = match method {
        VarianceMethod::PrasadRao => prasad_rao(design)?,
        VarianceMethod::Ml => fisher_scoring(design, false)?,
        VarianceMethod::Reml => fisher_scoring(design, true)?,
    };
    Ok((s2u, var_sigma2_u(design, method, s2u)))
}

/// Variance of `σ̂_u²`: the moment formula for Prasad-Rao,
/// `2 [Σ (σ_u² + σ_d²)⁻²]⁻¹` for ML and REML.
pub fn var_sigma2_u(design: &AreaDesign, method: VarianceMethod, s2u: f64) -> f64 {
    var_sigma2_u_from(&design.sigma2, method, s2u)
}

pub fn var_sigma2_u_from(sigma2: &[f64], method: VarianceMethod, s2u: f64) -> f64 {
    let d = sigma2.len() as f64;
    match method {
        VarianceMethod::PrasadRao => {
            let s1: f64 = sigma2.iter().sum();
            let s2: f64 = sigma2.iter().map(|s| s * s).sum();
            2.0 / d * (s2u * s2u + 2.0 * s2u / d * s1 + s2 / d)
        }
        VarianceMethod::Ml | VarianceMethod::Reml => {
            2.0 / sigma2.iter().map(|s| (s2u + s).powi(-2)).sum::<f64>()
        }
    }
}

/// Method of moments from the OLS residual sum of squares.
fn prasad_rao(design: &AreaDesign) -> Result<f64> {
    let (d, p) = (design.n_areas(), design.n_covariates());
    let x = &design.x;
    let xtx = x.transpose() * x;
    let xtx_inv = linalg::spd_inverse(&xtx, "XᵀX")?;
    let y = DVector::from_column_slice(&design.gamma_hat);
    let beta = &xtx_inv * (x.transpose() * &y);
    let resid = &y - x * &beta;
    let rss = resid.norm_squared();
    let mut adj = 0.0;
    for k in 0..d {
        let row = x.row(k).transpose();
        let h = (row.transpose() * &xtx_inv * &row)[(0, 0)];
        adj += design.sigma2[k] * (1.0 - h);
    }
    Ok(((rss - adj) / (d - p) as f64).max(0.0))
}

/// Pieces shared by the ML and REML scores at a given `σ_u²`.
struct ScoreParts {
    score: f64,
    info: f64,
}

fn score_parts(design: &AreaDesign, s2u: f64, restricted: bool) -> Result<ScoreParts> {
    let beta = gls_beta(design, s2u)?;
    let x = &design.x;
    let v: Vec<f64> = design.sigma2.iter().map(|s| s + s2u).collect();
    let resid: Vec<f64> = (0..design.n_areas())
        .map(|k| design.gamma_hat[k] - (x.row(k) * &beta)[(0, 0)])
        .collect();
    // P y = V⁻¹ (y - X β̃) for both likelihoods
    let py2: f64 = resid.iter().zip(&v).map(|(r, v)| (r / v).powi(2)).sum();
    let inv1: f64 = v.iter().map(|v| 1.0 / v).sum();
    let inv2: f64 = v.iter().map(|v| v.powi(-2)).sum();
    if !restricted {
        return Ok(ScoreParts {
            score: -0.5 * inv1 + 0.5 * py2,
            info: 0.5 * inv2,
        });
    }
    let weighted = |pow: i32| -> DMatrix<f64> {
        let w: Vec<f64> = v.iter().map(|v| v.powi(-pow)).collect();
        let zeros = vec![0.0; w.len()];
        linalg::weighted_normal_equations(x, &zeros, &w).0
    };
    let a_inv = linalg::spd_inverse(&weighted(1), "XᵀV⁻¹X")?;
    let m2 = &a_inv * weighted(2);
    let m3 = &a_inv * weighted(3);
    let tr_p = inv1 - m2.trace();
    let tr_pp = inv2 - 2.0 * m3.trace() + (&m2 * &m2).trace();
    Ok(ScoreParts {
        score: -0.5 * tr_p + 0.5 * py2,
        info: 0.5 * tr_pp,
    })
}

/// Scoring iterations from the Prasad-Rao start. After the first step the
/// curvature is the secant slope of the score between the last two iterates
/// when that is positive, else the expected information: with ML the
/// expected information can be well below the observed curvature and plain
/// scoring then overshoots back and forth across the maximum.
fn fisher_scoring(design: &AreaDesign, restricted: bool) -> Result<f64> {
    let mut s2u = prasad_rao(design)?;
    let mut prev: Option<(f64, f64)> = None;
    for _ in 0..FISHER_MAX_ITER {
        let parts = score_parts(design, s2u, restricted)?;
        if !(parts.info > 0.0) {
            return Err(Error::SingularDesign("non-positive Fisher information".into()));
        }
        let objective = |s: f64| {
            if restricted {
                reml_log_lik(design, s)
            } else {
                ml_log_lik(design, s)
            }
        };
        let current = objective(s2u)?;
        let curvature = match prev {
            Some((s0, g0)) if s0 != s2u => {
                let h = (g0 - parts.score) / (s2u - s0);
                if h > 0.0 {
                    h
                } else {
                    parts.info
                }
            }
            _ => parts.info,
        };
        prev = Some((s2u, parts.score));
        let mut step = parts.score / curvature;
        let mut next = (s2u + step).max(0.0);
        // halve until the likelihood does not drop, so the iteration cannot cycle
        for _ in 0..30 {
            if objective(next)? >= current {
                break;
            }
            step *= 0.5;
            next = (s2u + step).max(0.0);
        }
        let delta = (next - s2u).abs();
        s2u = next;
        if delta < FISHER_TOL * s2u.max(1.0) {
            return Ok(s2u);
        }
    }
    Err(Error::NonConvergence {
        what: if restricted {
            "REML Fisher scoring"
        } else {
            "ML Fisher scoring"
        },
        iterations: FISHER_MAX_ITER,
    })
}

/// Restricted log-likelihood up to a constant.
pub fn reml_log_lik(design: &AreaDesign, s2u: f64) -> Result<f64> {
    let beta = gls_beta(design, s2u)?;
    let x = &design.x;
    let v: Vec<f64> = design.sigma2.iter().map(|s| s + s2u).collect();
    let mut quad = 0.0;
    let mut logdet_v = 0.0;
    for k in 0..design.n_areas() {
        let r = design.gamma_hat[k] - (x.row(k) * &beta)[(0, 0)];
        quad += r * r / v[k];
        logdet_v += v[k].ln();
    }
    let w: Vec<f64> = v.iter().map(|v| 1.0 / v).collect();
    let zeros = vec![0.0; w.len()];
    let a = linalg::weighted_normal_equations(x, &zeros, &w).0;
    let logdet_a = a
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("XᵀV⁻¹X".into()))?
        .l()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.ln())
        .sum::<f64>();
    Ok(-0.5 * (logdet_v + logdet_a + quad))
}

/// Log-likelihood up to a constant, with β profiled out at its GLS value.
pub fn ml_log_lik(design: &AreaDesign, s2u: f64) -> Result<f64> {
    let beta = gls_beta(design, s2u)?;
    let x = &design.x;
    let mut s = 0.0;
    for k in 0..design.n_areas() {
        let v = design.sigma2[k] + s2u;
        let r = design.gamma_hat[k] - (x.row(k) * &beta)[(0, 0)];
        s += v.ln() + r * r / v;
    }
    Ok(-0.5 * s)
}
