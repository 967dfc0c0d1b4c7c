//! Fay-Herriot area-level model: GLS fixed effects, EBLUP and the
//! g1/g2/g3 mean squared error decomposition.
//!
//! With `V_d = σ_u² + σ_d²` and `B_d = σ_d² / V_d`:
//!
//! - `EBLUP_d = (1 - B_d)·γ̂_d + B_d·x_dᵀβ̃`
//! - `g1_d = σ_d²(1 - B_d)`
//! - `g2_d = B_d²·x_dᵀ F⁻¹ x_d`, `F = Σ_k x_k x_kᵀ / V_k`
//! - `g3_d = σ_d⁴ V_d⁻³ Var(σ̂_u²)`
//!
//! Prasad-Rao and REML use `g1 + g2 + 2·g3`; ML subtracts the bias
//! correction `b·σ_d⁴/V_d²` on top.

mod variance;

pub use variance::{
    estimate_sigma2_u, ml_log_lik, reml_log_lik, var_sigma2_u, var_sigma2_u_from, FISHER_MAX_ITER,
    FISHER_TOL,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceMethod {
    PrasadRao,
    Ml,
    Reml,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::PrasadRao => "prasad-rao",
            VarianceMethod::Ml => "ml",
            VarianceMethod::Reml => "reml",
        }
    }
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "prasad-rao" | "pr" | "moments" => Ok(VarianceMethod::PrasadRao),
            "ml" => Ok(VarianceMethod::Ml),
            "reml" => Ok(VarianceMethod::Reml),
            other => Err(Error::InvalidInput(format!(
                "unknown variance method `{other}`"
            ))),
        }
    }
}

/// Area-level inputs: covariates (with intercept column), direct estimates
/// and their known sampling variances.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDesign {
    pub x: DMatrix<f64>,
    pub gamma_hat: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl AreaDesign {
    pub fn new(x: DMatrix<f64>, gamma_hat: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        let d = gamma_hat.len();
        if x.nrows() != d || sigma2.len() != d {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: X is {}×{}, {} estimates, {} variances",
                x.nrows(),
                x.ncols(),
                d,
                sigma2.len()
            )));
        }
        if d <= x.ncols() {
            return Err(Error::InvalidInput(format!(
                "need more areas than covariates (D = {d}, p = {})",
                x.ncols()
            )));
        }
        if let Some(k) = gamma_hat.iter().position(|g| !g.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "area {k}: non-finite estimate"
            )));
        }
        if let Some(k) = sigma2.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "area {k}: sampling variance must be positive, got {}",
                sigma2[k]
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariate".into()));
        }
        if !linalg::has_full_column_rank(&x) {
            return Err(Error::Rank(
                "area covariate matrix is rank deficient".into(),
            ));
        }
        Ok(Self {
            x,
            gamma_hat,
            sigma2,
        })
    }

    /// Intercept-only design.
    pub fn intercept_only(gamma_hat: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        let d = gamma_hat.len();
        Self::new(DMatrix::from_element(d, 1, 1.0), gamma_hat, sigma2)
    }

    pub fn n_areas(&self) -> usize {
        self.gamma_hat.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn synthetic(&self, beta: &DVector<f64>) -> Vec<f64> {
        (&self.x * beta).iter().cloned().collect()
    }

    fn gls_weights(&self, s2u: f64) -> Vec<f64> {
        self.sigma2.iter().map(|s| 1.0 / (s + s2u)).collect()
    }

    /// `F = Σ_d x_d x_dᵀ / (σ_u² + σ_d²)`.
    pub fn fisher_beta(&self, s2u: f64) -> DMatrix<f64> {
        let w = self.gls_weights(s2u);
        linalg::weighted_normal_equations(&self.x, &vec![0.0; w.len()], &w).0
    }
}

/// GLS estimate `β̃ = (XᵀV⁻¹X)⁻¹ XᵀV⁻¹ γ̂`, `V = diag(σ_u² + σ_d²)`.
pub fn gls_beta(design: &AreaDesign, sigma2_u: f64) -> Result<DVector<f64>> {
    if !(sigma2_u >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "σ_u² must be ≥ 0, got {sigma2_u}"
        )));
    }
    let w = design.gls_weights(sigma2_u);
    linalg::wls(&design.x, &design.gamma_hat, &w)
        .map_err(|_| Error::SingularDesign("XᵀV⁻¹X is singular".into()))
}

/// Shrinkage factors `B_d = σ_d² / (σ_u² + σ_d²)`.
pub fn shrinkage(sigma2: &[f64], sigma2_u: f64) -> Vec<f64> {
    sigma2.iter().map(|s| s / (sigma2_u + s)).collect()
}

/// `(EBLUP, B, û)` given the synthetic part `x_dᵀβ̃` of every area.
pub fn eblup_from_synthetic(
    gamma_hat: &[f64],
    sigma2: &[f64],
    synthetic: &[f64],
    sigma2_u: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let b = shrinkage(sigma2, sigma2_u);
    let mut est = Vec::with_capacity(b.len());
    let mut u = Vec::with_capacity(b.len());
    for ((g, s), bd) in gamma_hat.iter().zip(synthetic).zip(&b) {
        est.push((1.0 - bd) * g + bd * s);
        u.push((1.0 - bd) * (g - s));
    }
    (est, b, u)
}

pub fn eblup(
    design: &AreaDesign,
    beta: &DVector<f64>,
    sigma2_u: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    eblup_from_synthetic(
        &design.gamma_hat,
        &design.sigma2,
        &design.synthetic(beta),
        sigma2_u,
    )
}

/// MSE components, tagged with the variance method they were computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct MseComponents {
    pub method: VarianceMethod,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    pub var_sigma2_u: f64,
}

pub fn g1(sigma2: &[f64], sigma2_u: f64) -> Vec<f64> {
    sigma2
        .iter()
        .map(|s| s * sigma2_u / (sigma2_u + s))
        .collect()
}

/// `g3_d = σ_d⁴ (σ_u² + σ_d²)⁻³ Var(σ̂_u²)`.
pub fn g3(sigma2: &[f64], sigma2_u: f64, var_sigma2_u: f64) -> Vec<f64> {
    sigma2
        .iter()
        .map(|s| s * s / (sigma2_u + s).powi(3) * var_sigma2_u)
        .collect()
}

/// Closed form of g3 for ML/REML after substituting
/// `Var(σ̂_u²) = 2 / Σ_k V_k⁻²`: `2 B_d² / (V_d Σ_k V_k⁻²)`.
pub fn g3_reml_closed_form(sigma2: &[f64], sigma2_u: f64) -> Vec<f64> {
    let inv2: f64 = sigma2.iter().map(|s| (sigma2_u + s).powi(-2)).sum();
    sigma2
        .iter()
        .map(|s| {
            let v = sigma2_u + s;
            let b = s / v;
            2.0 * b * b / (v * inv2)
        })
        .collect()
}

pub fn mse_components(
    design: &AreaDesign,
    sigma2_u: f64,
    method: VarianceMethod,
) -> Result<MseComponents> {
    let var = var_sigma2_u(design, method, sigma2_u);
    let f_inv = linalg::spd_inverse(&design.fisher_beta(sigma2_u), "F")?;
    let b = shrinkage(&design.sigma2, sigma2_u);
    let g2 = (0..design.n_areas())
        .map(|d| {
            let x = design.x.row(d).transpose();
            b[d] * b[d] * (x.transpose() * &f_inv * &x)[(0, 0)]
        })
        .collect();
    Ok(MseComponents {
        method,
        g1: g1(&design.sigma2, sigma2_u),
        g2,
        g3: g3(&design.sigma2, sigma2_u, var),
        var_sigma2_u: var,
    })
}

/// Bias term `b` of the ML estimator of `σ_u²`:
/// `-[Σ V_d⁻²]⁻¹ tr{(Σ V_d⁻¹ x xᵀ)⁻¹ (Σ V_d⁻² x xᵀ)}`.
pub fn ml_bias(design: &AreaDesign, sigma2_u: f64) -> Result<f64> {
    let v: Vec<f64> = design.sigma2.iter().map(|s| s + sigma2_u).collect();
    let zeros = vec![0.0; v.len()];
    let w1: Vec<f64> = v.iter().map(|v| 1.0 / v).collect();
    let w2: Vec<f64> = v.iter().map(|v| v.powi(-2)).collect();
    let a1 = linalg::weighted_normal_equations(&design.x, &zeros, &w1).0;
    let a2 = linalg::weighted_normal_equations(&design.x, &zeros, &w2).0;
    let tr = (linalg::spd_inverse(&a1, "F")? * a2).trace();
    Ok(-tr / w2.iter().sum::<f64>())
}

/// Combine components per the method's rule.
pub fn mse_total(
    components: &MseComponents,
    method: VarianceMethod,
    design: &AreaDesign,
    sigma2_u: f64,
) -> Result<Vec<f64>> {
    if components.method != method {
        return Err(Error::MethodMismatch {
            computed: components.method.name(),
            requested: method.name(),
        });
    }
    let base = components
        .g1
        .iter()
        .zip(&components.g2)
        .zip(&components.g3)
        .map(|((a, b), c)| a + b + 2.0 * c);
    match method {
        VarianceMethod::PrasadRao | VarianceMethod::Reml => Ok(base.collect()),
        VarianceMethod::Ml => {
            let b = ml_bias(design, sigma2_u)?;
            Ok(base
                .zip(&design.sigma2)
                .map(|(m, s)| m - b * s * s / (sigma2_u + s).powi(2))
                .collect())
        }
    }
}

/// Relative error `√MSE / EBLUP · 100` and relative variance reduction
/// `(σ_d² - MSE) / σ_d² · 100` for every area.
pub fn quality_measures(eblup: &[f64], mse: &[f64], sigma2: &[f64]) -> Result<Vec<(f64, f64)>> {
    eblup
        .iter()
        .zip(mse)
        .zip(sigma2)
        .enumerate()
        .map(|(d, ((e, m), s))| {
            if *e == 0.0 {
                return Err(Error::ZeroEstimate { domain: d });
            }
            Ok((m.sqrt() / e * 100.0, (s - m) / s * 100.0))
        })
        .collect()
}

/// A complete Fay-Herriot fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FhFit {
    pub method: VarianceMethod,
    pub beta: DVector<f64>,
    pub sigma2_u: f64,
    pub var_sigma2_u: f64,
    pub b: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub eblup: Vec<f64>,
    pub synthetic: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    pub mse: Vec<f64>,
}

impl FhFit {
    pub fn components(&self) -> MseComponents {
        MseComponents {
            method: self.method,
            g1: self.g1.clone(),
            g2: self.g2.clone(),
            g3: self.g3.clone(),
            var_sigma2_u: self.var_sigma2_u,
        }
    }

    pub fn quality(&self, design: &AreaDesign) -> Result<Vec<(f64, f64)>> {
        quality_measures(&self.eblup, &self.mse, &design.sigma2)
    }
}

/// Estimate `σ_u²` with `method` and build the full fit.
pub fn fit(design: &AreaDesign, method: VarianceMethod) -> Result<FhFit> {
    let (s2u, _) = estimate_sigma2_u(design, method)?;
    fit_with_sigma2_u(design, method, s2u)
}

/// Build the fit at a given `σ_u²` (e.g. a published estimate).
pub fn fit_with_sigma2_u(
    design: &AreaDesign,
    method: VarianceMethod,
    sigma2_u: f64,
) -> Result<FhFit> {
    let beta = gls_beta(design, sigma2_u)?;
    let synthetic = design.synthetic(&beta);
    let (eblup, b, u_hat) =
        eblup_from_synthetic(&design.gamma_hat, &design.sigma2, &synthetic, sigma2_u);
    let comps = mse_components(design, sigma2_u, method)?;
    let mse = mse_total(&comps, method, design, sigma2_u)?;
    Ok(FhFit {
        method,
        beta,
        sigma2_u,
        var_sigma2_u: comps.var_sigma2_u,
        b,
        u_hat,
        eblup,
        synthetic,
        g1: comps.g1,
        g2: comps.g2,
        g3: comps.g3,
        mse,
    })
}
