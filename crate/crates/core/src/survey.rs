//! Design-based comparison estimators for a domain mean under simple random
//! sampling within the domain: Horvitz-Thompson, GREG and composite.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// One domain's sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDomain {
    pub domain: usize,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    /// `N_d`
    pub population_size: f64,
    /// `n_d × q` person-level auxiliaries (no intercept column).
    pub aux: DMatrix<f64>,
    /// Known population totals of the auxiliaries.
    pub aux_totals: Vec<f64>,
}

impl SampleDomain {
    /// SRS sample: every weight is `N_d / n_d`.
    pub fn srs(
        domain: usize,
        values: Vec<f64>,
        population_size: f64,
        aux: DMatrix<f64>,
        aux_totals: Vec<f64>,
    ) -> Result<Self> {
        let n = values.len();
        let w = population_size / n as f64;
        Self::new(domain, values, vec![w; n], population_size, aux, aux_totals)
    }

    pub fn new(
        domain: usize,
        values: Vec<f64>,
        weights: Vec<f64>,
        population_size: f64,
        aux: DMatrix<f64>,
        aux_totals: Vec<f64>,
    ) -> Result<Self> {
        let n = values.len();
        if weights.len() != n || aux.nrows() != n || aux.ncols() != aux_totals.len() {
            return Err(Error::InvalidInput(format!(
                "domain {domain}: inconsistent sample dimensions"
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "domain {domain}: weights must be positive"
            )));
        }
        if n as f64 > population_size {
            return Err(Error::InvalidInput(format!(
                "domain {domain}: sample size {n} exceeds population size {population_size}"
            )));
        }
        Ok(Self {
            domain,
            values,
            weights,
            population_size,
            aux,
            aux_totals,
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    fn sampling_fraction(&self) -> f64 {
        self.n() as f64 / self.population_size
    }
}

/// Horvitz-Thompson mean `Σ w y / N_d` with the SRS variance `(1 - f)s²/n`.
pub fn ht_mean(dom: &SampleDomain) -> Result<(f64, f64)> {
    let est = ht_point(dom);
    if dom.n() < 2 {
        return Err(Error::SingletonDomain { domain: dom.domain });
    }
    let n = dom.n() as f64;
    let s2 = linalg::sample_variance(&dom.values);
    Ok((est, (1.0 - dom.sampling_fraction()) * s2 / n))
}

fn ht_point(dom: &SampleDomain) -> f64 {
    dom.values
        .iter()
        .zip(&dom.weights)
        .map(|(y, w)| y * w)
        .sum::<f64>()
        / dom.population_size
}

/// Generalised regression estimator calibrated to the known auxiliary means.
pub fn greg_mean(dom: &SampleDomain) -> Result<(f64, f64)> {
    let n = dom.n();
    let q = dom.aux.ncols();
    if n < q + 2 {
        return Err(Error::SingularAux { domain: dom.domain });
    }
    let mut x = DMatrix::from_element(n, q + 1, 1.0);
    x.view_mut((0, 1), (n, q)).copy_from(&dom.aux);
    let mut scaled = x.clone();
    for (j, w) in dom.weights.iter().enumerate() {
        scaled.row_mut(j).scale_mut(w.sqrt());
    }
    // centred columns so a constant auxiliary shows up as rank loss
    let mut centred = dom.aux.clone();
    for c in 0..q {
        let m = centred.column(c).mean();
        centred.column_mut(c).add_scalar_mut(-m);
    }
    if !linalg::has_full_column_rank(&scaled) || (q > 0 && !linalg::has_full_column_rank(&centred))
    {
        return Err(Error::SingularAux { domain: dom.domain });
    }
    let coef = linalg::wls(&x, &dom.values, &dom.weights)
        .map_err(|_| Error::SingularAux { domain: dom.domain })?;
    let nf = dom.population_size;
    let wsum: f64 = dom.weights.iter().sum();
    let mut est = ht_point(dom) + (1.0 - wsum / nf) * coef[0];
    for c in 0..q {
        let ht_aux: f64 = dom
            .aux
            .column(c)
            .iter()
            .zip(&dom.weights)
            .map(|(z, w)| z * w)
            .sum::<f64>()
            / nf;
        est += (dom.aux_totals[c] / nf - ht_aux) * coef[c + 1];
    }
    let fitted = &x * &coef;
    let sse: f64 = dom
        .values
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    let nf_s = n as f64;
    let var = (1.0 - dom.sampling_fraction()) / nf_s * sse / (nf_s - 1.0);
    Ok((est, var))
}

/// `φ·HT + (1 - φ)·synthetic` with `φ = n_d / (n_d + n̄)`; the synthetic part
/// is treated as fixed, so the variance is `φ²·Var(HT)` (NaN when `n_d < 2`).
pub fn composite_mean(dom: &SampleDomain, synthetic: f64, mean_sample_size: f64) -> (f64, f64) {
    let n = dom.n() as f64;
    let phi = n / (n + mean_sample_size);
    let ht = ht_point(dom);
    let var = ht_mean(dom).map(|(_, v)| v).unwrap_or(f64::NAN);
    (phi * ht + (1.0 - phi) * synthetic, phi * phi * var)
}

/// Regression-synthetic estimates `x_dᵀβ̂` with `β̂` the OLS fit of the
/// domain direct estimates on the area covariates.
pub fn regression_synthetic(x: &DMatrix<f64>, direct: &[f64]) -> Result<Vec<f64>> {
    let beta = linalg::wls(x, direct, &vec![1.0; direct.len()])?;
    Ok((x * beta).iter().cloned().collect())
}

/// Weighted calibration (g-weight) form of the GREG mean. Kept separate
/// from [`greg_mean`] as an independent route for testing.
pub fn greg_calibrated_weights(dom: &SampleDomain) -> Result<Vec<f64>> {
    let n = dom.n();
    let q = dom.aux.ncols();
    let mut x = DMatrix::from_element(n, q + 1, 1.0);
    x.view_mut((0, 1), (n, q)).copy_from(&dom.aux);
    let (t, _) = linalg::weighted_normal_equations(&x, &vec![0.0; n], &dom.weights);
    let mut totals = DVector::zeros(q + 1);
    totals[0] = dom.population_size;
    for c in 0..q {
        totals[c + 1] = dom.aux_totals[c];
    }
    let ht_totals = x.transpose() * DVector::from_column_slice(&dom.weights);
    let lambda = linalg::spd_solve(&t, &(totals - ht_totals), "ΣwxxT")
        .map_err(|_| Error::SingularAux { domain: dom.domain })?;
    Ok((0..n)
        .map(|j| dom.weights[j] * (1.0 + (x.row(j) * &lambda)[(0, 0)]))
        .collect())
}
