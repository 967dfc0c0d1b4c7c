//! Direct domain estimates from plausible values via the multiple-imputation
//! combining rules.

use crate::error::{Error, Result};
use crate::irt::PlausibleValueSet;

/// Direct estimate of one domain mean with its total variance.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaEstimate {
    pub domain: usize,
    pub gamma_hat: f64,
    /// `within + (1 + 1/L)·between`
    pub sigma2_d: f64,
    pub within: f64,
    pub between: f64,
    pub l: usize,
    pub n_d: usize,
}

/// Sampling variance of a weighted domain mean.
pub trait DesignVariance: Sync {
    fn variance_of_mean(&self, values: &[f64], weights: &[f64]) -> f64;
}

/// Simple random sampling within the domain: `(1 - f)·s²/n`, with
/// `f = n / Σw` when the finite population correction is on.
#[derive(Debug, Clone, Copy)]
pub struct SrsWithinDomain {
    pub fpc: bool,
}

impl DesignVariance for SrsWithinDomain {
    fn variance_of_mean(&self, values: &[f64], weights: &[f64]) -> f64 {
        let n = values.len() as f64;
        let wsum: f64 = weights.iter().sum();
        let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
        let s2 = values
            .iter()
            .zip(weights)
            .map(|(v, w)| w * (v - mean).powi(2))
            .sum::<f64>()
            / wsum
            * n
            / (n - 1.0);
        let f = if self.fpc { (n / wsum).min(1.0) } else { 0.0 };
        (1.0 - f) * s2 / n
    }
}

fn domain_members(pvs: &PlausibleValueSet, domain: usize) -> Vec<usize> {
    pvs.domain_of()
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == domain)
        .map(|(j, _)| j)
        .collect()
}

/// Hájek-weighted mean of the `ell`-th plausible value over the domain, and
/// its design variance.
pub fn domain_pv_mean(
    pvs: &PlausibleValueSet,
    weights: &[f64],
    domain: usize,
    ell: usize,
    design: &dyn DesignVariance,
) -> Result<(f64, f64)> {
    if weights.len() != pvs.n_persons() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} persons",
            weights.len(),
            pvs.n_persons()
        )));
    }
    if ell >= pvs.l() {
        return Err(Error::InvalidInput(format!(
            "imputation {ell} out of range (L = {})",
            pvs.l()
        )));
    }
    let members = domain_members(pvs, domain);
    mean_over(pvs, weights, &members, domain, ell, design)
}

fn mean_over(
    pvs: &PlausibleValueSet,
    weights: &[f64],
    members: &[usize],
    domain: usize,
    ell: usize,
    design: &dyn DesignVariance,
) -> Result<(f64, f64)> {
    match members.len() {
        0 => return Err(Error::EmptyDomain { domain }),
        1 => return Err(Error::SingletonDomain { domain }),
        _ => {}
    }
    let values: Vec<f64> = members.iter().map(|&j| pvs.get(j, ell)).collect();
    let w: Vec<f64> = members.iter().map(|&j| weights[j]).collect();
    if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "domain {domain}: design weights must be positive"
        )));
    }
    let wsum: f64 = w.iter().sum();
    let mean = values.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / wsum;
    Ok((mean, design.variance_of_mean(&values, &w)))
}

/// Pool per-imputation `(estimate, variance)` pairs.
pub fn rubin_combine(domain: usize, per_imputation: &[(f64, f64)]) -> Result<AreaEstimate> {
    let l = per_imputation.len();
    if l < 2 {
        return Err(Error::TooFewImputations(l));
    }
    let lf = l as f64;
    let gamma_hat = per_imputation.iter().map(|(t, _)| t).sum::<f64>() / lf;
    let within = per_imputation.iter().map(|(_, v)| v).sum::<f64>() / lf;
    let between = per_imputation
        .iter()
        .map(|(t, _)| (t - gamma_hat).powi(2))
        .sum::<f64>()
        / (lf - 1.0);
    Ok(AreaEstimate {
        domain,
        gamma_hat,
        sigma2_d: within + (1.0 + 1.0 / lf) * between,
        within,
        between,
        l,
        n_d: 0,
    })
}

/// Combine every domain present in `pvs`, in ascending domain order.
pub fn combine_domains(
    pvs: &PlausibleValueSet,
    weights: &[f64],
    design: &dyn DesignVariance,
) -> Result<Vec<AreaEstimate>> {
    if weights.len() != pvs.n_persons() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} persons",
            weights.len(),
            pvs.n_persons()
        )));
    }
    let mut domains: Vec<usize> = pvs.domain_of().to_vec();
    domains.sort_unstable();
    domains.dedup();
    domains
        .into_iter()
        .map(|d| {
            let members = domain_members(pvs, d);
            let per: Vec<(f64, f64)> = (0..pvs.l())
                .map(|ell| mean_over(pvs, weights, &members, d, ell, design))
                .collect::<Result<_>>()?;
            let mut est = rubin_combine(d, &per)?;
            est.n_d = members.len();
            Ok(est)
        })
        .collect()
}
