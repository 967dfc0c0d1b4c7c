//! Synthetic student population, MCAR masking and the calibration/imputation
//! pipeline that turns a population into plausible values.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CorrLevel, SimConfig};
use crate::error::{Error, Result};
use crate::irt::{
    calibrate_em, draw_plausible_values, EmConfig, EmFit, ItemBank, ItemParams, McmcConfig,
    PlausibleValueSet, Response, ResponseMatrix,
};
use crate::linalg;

/// Reporting scale for abilities: `REPORT_MEAN + REPORT_SD·θ`.
pub const REPORT_MEAN: f64 = 500.0;
pub const REPORT_SD: f64 = 100.0;

/// Standard deviation of the domain random effect on the θ scale.
pub const DOMAIN_EFFECT_SD: f64 = 0.03;
/// Coefficients of the two person-level auxiliaries in the ability model.
pub const PERSON_AUX_COEF: [f64; 2] = [0.5, 0.3];
/// Residual variance of θ given domain and auxiliaries.
pub const ABILITY_RESID_VAR: f64 = 0.62;
pub const MAX_CORR_ATTEMPTS: usize = 20;

#[derive(Debug, Clone)]
pub struct Population {
    pub items: ItemBank,
    /// Standardised abilities (population mean 0, variance 1).
    pub theta: Vec<f64>,
    pub responses: ResponseMatrix,
    /// `N × 2` person auxiliaries.
    pub person_aux: DMatrix<f64>,
    /// `D × 2` area covariates, no intercept column.
    pub area_aux: DMatrix<f64>,
    /// True domain means on the reporting scale.
    pub gamma: Vec<f64>,
    pub domain_size: Vec<usize>,
    /// Achieved correlation of each area covariate with `gamma`.
    pub achieved_corr: [f64; 2],
}

impl Population {
    pub fn n_domains(&self) -> usize {
        self.gamma.len()
    }

    /// Members of each domain in person order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.n_domains()];
        for (j, &d) in self.responses.domain_of().iter().enumerate() {
            m[d].push(j);
        }
        m
    }

    /// The person auxiliaries: the conditioning matrix of the latent
    /// regression.
    pub fn conditioning_covariates(&self) -> DMatrix<f64> {
        self.person_aux.clone()
    }
}

/// Persons are split into `D` near-equal consecutive blocks.
pub fn domain_assignment(n: usize, d: usize) -> Vec<usize> {
    (0..n).map(|j| j * d / n).collect()
}

/// Generate items, abilities, complete responses and area covariates.
///
/// Draws are consumed in a fixed order (items, persons, responses, then
/// covariate noise), so two configurations that differ only in the
/// correlation level share the same persons and responses.
pub fn synth_population(cfg: &SimConfig, rng: &mut impl Rng) -> Result<Population> {
    cfg.validate()?;
    let (n, n_items, d) = (cfg.n_population, cfg.n_items, cfg.n_domains);
    let items: Vec<ItemParams> = (0..n_items)
        .map(|_| {
            let a = rng.random_range(0.5..=2.0);
            let b = rng.random_range(-2.5..=2.5);
            ItemParams::new(a, b, 0.0)
        })
        .collect::<Result<_>>()?;
    let items = ItemBank::new(items)?;

    let domain_of = domain_assignment(n, d);
    let effect: Vec<f64> = (0..d).map(|_| DOMAIN_EFFECT_SD * normal(rng)).collect();
    let mut person_aux = DMatrix::zeros(n, 2);
    let mut theta = Vec::with_capacity(n);
    let resid_sd = ABILITY_RESID_VAR.sqrt();
    for j in 0..n {
        let z1 = normal(rng);
        let z2 = normal(rng);
        person_aux[(j, 0)] = z1;
        person_aux[(j, 1)] = z2;
        theta.push(
            effect[domain_of[j]]
                + PERSON_AUX_COEF[0] * z1
                + PERSON_AUX_COEF[1] * z2
                + resid_sd * normal(rng),
        );
    }
    let m = linalg::mean(&theta);
    let s = (theta.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    for t in &mut theta {
        *t = (*t - m) / s;
    }

    let mut cells = Vec::with_capacity(n * n_items);
    for &t in &theta {
        for it in &items.items {
            cells.push(Response::from_bool(rng.random::<f64>() < it.irf(t)));
        }
    }
    let responses = ResponseMatrix::new(n_items, cells, domain_of.clone())?;

    let mut sums = vec![0.0; d];
    let mut domain_size = vec![0usize; d];
    for (j, &dd) in domain_of.iter().enumerate() {
        sums[dd] += theta[j];
        domain_size[dd] += 1;
    }
    let gamma: Vec<f64> = sums
        .iter()
        .zip(&domain_size)
        .map(|(s, &k)| REPORT_MEAN + REPORT_SD * s / k as f64)
        .collect();

    let (area_aux, achieved_corr) = area_covariates(&gamma, cfg.corr_level, rng)?;
    Ok(Population {
        items,
        theta,
        responses,
        person_aux,
        area_aux,
        gamma,
        domain_size,
        achieved_corr,
    })
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `ρ·standardised(γ) + √(1-ρ²)·noise` per column, redrawn until both
/// columns land in the level's band.
fn area_covariates(
    gamma: &[f64],
    level: CorrLevel,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, [f64; 2])> {
    let d = gamma.len();
    let m = linalg::mean(gamma);
    let sd = linalg::sample_variance(gamma).sqrt();
    let std: Vec<f64> = gamma.iter().map(|g| (g - m) / sd).collect();
    let rho = level.target();
    let noise_sd = (1.0 - rho * rho).sqrt();
    let mut best = 0.0;
    for _ in 0..MAX_CORR_ATTEMPTS {
        let x = DMatrix::from_fn(d, 2, |k, _| rho * std[k] + noise_sd * normal(rng));
        let corr = [0, 1].map(|c| {
            let col: Vec<f64> = x.column(c).iter().cloned().collect();
            linalg::correlation(&col, gamma)
        });
        if corr.iter().all(|&r| level.contains(r)) {
            return Ok((x, corr));
        }
        best = corr[0];
    }
    Err(Error::CorrelationMiss {
        level: level.name(),
        achieved: best,
        attempts: MAX_CORR_ATTEMPTS,
    })
}

/// Mask each observed cell independently with probability `rate`. One uniform
/// is consumed per cell whatever its state, so masks drawn from the same
/// stream are nested across rates.
pub fn apply_mcar_mask(
    responses: &ResponseMatrix,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<ResponseMatrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "missing rate {rate} outside [0, 1)"
        )));
    }
    let mut out = responses.clone();
    for j in 0..out.n_persons() {
        for i in 0..out.n_items() {
            let u: f64 = rng.random();
            if u < rate {
                out.set(j, i, Response::Missing);
            }
        }
    }
    Ok(out)
}

/// Calibrated model and plausible values (reporting scale) for the whole
/// population.
#[derive(Debug, Clone)]
pub struct PopulationState {
    pub population: Population,
    pub fit: EmFit,
    pub pvs: PlausibleValueSet,
}

/// Settings for the calibration and imputation stages of the simulation.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub em: EmConfig,
    pub mcmc: McmcConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            em: EmConfig {
                max_iter: 200,
                tol: 0.05,
                ..EmConfig::default()
            },
            mcmc: McmcConfig::default(),
        }
    }
}

/// Calibrate on the (masked) population responses with the conditioning
/// covariates, then draw `L` plausible values per person.
pub fn prepare_population(
    population: Population,
    l: usize,
    pipeline: &PipelineConfig,
    pv_seed: u64,
) -> Result<PopulationState> {
    let cov = population.conditioning_covariates();
    let fit = calibrate_em(&population.responses, Some(&cov), &pipeline.em)?;
    let pvs = draw_plausible_values(
        &population.responses,
        &fit.bank,
        &fit.regression,
        Some(&cov),
        l,
        &pipeline.mcmc,
        pv_seed,
    )?
    .rescaled(REPORT_MEAN, REPORT_SD);
    Ok(PopulationState {
        population,
        fit,
        pvs,
    })
}

/// Random permutation of `0..n`.
pub(crate) fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
