//! Random-walk Metropolis-Hastings draws from each person's ability posterior.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ItemBank, LatentRegression, PlausibleValueSet, Response, ResponseMatrix};
use crate::error::{Error, Result};
use crate::rng::{self, Rng as ChaRng};

#[derive(Debug, Clone, Copy)]
pub struct McmcConfig {
    /// Standard deviation of the normal random-walk proposal.
    pub step: f64,
    pub burn_in: usize,
    /// Keep one state every `thin` iterations after burn-in.
    pub thin: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            step: 1.0,
            burn_in: 500,
            thin: 50,
        }
    }
}

/// Draw `l` states from the posterior `∝ p(responses | θ) · N(θ; mean, var)`.
pub fn draw_person(
    bank: &ItemBank,
    responses: &[Response],
    prior_mean: f64,
    prior_var: f64,
    l: usize,
    cfg: &McmcConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let log_post = |t: f64| {
        let u = t - prior_mean;
        bank.person_log_lik(t, responses) - 0.5 * u * u / prior_var
    };
    let mut theta = prior_mean;
    let mut current = log_post(theta);
    let mut out = Vec::with_capacity(l);
    let total = cfg.burn_in + l * cfg.thin;
    for it in 1..=total {
        let z: f64 = StandardNormal.sample(rng);
        let proposal = theta + cfg.step * z;
        let cand = log_post(proposal);
        let u: f64 = rng.random();
        if u.ln() < cand - current {
            theta = proposal;
            current = cand;
        }
        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            out.push(theta);
        }
    }
    out
}

/// Draw `l` plausible values for every person. Person `j` uses the substream
/// `(seed, j)`, so the draws do not depend on thread scheduling.
pub fn draw_plausible_values(
    responses: &ResponseMatrix,
    bank: &ItemBank,
    reg: &LatentRegression,
    covariates: Option<&DMatrix<f64>>,
    l: usize,
    cfg: &McmcConfig,
    seed: u64,
) -> Result<PlausibleValueSet> {
    if l < 2 {
        return Err(Error::TooFewImputations(l));
    }
    if bank.len() != responses.n_items() {
        return Err(Error::InvalidInput(format!(
            "bank has {} items, responses have {}",
            bank.len(),
            responses.n_items()
        )));
    }
    if cfg.thin == 0 {
        return Err(Error::InvalidInput(
            "thinning interval must be positive".into(),
        ));
    }
    let draws: Vec<Vec<f64>> = (0..responses.n_persons())
        .into_par_iter()
        .map(|j| {
            let mut r: ChaRng = rng::substream(seed, j as u64);
            draw_person(
                bank,
                responses.person(j),
                reg.prior_mean(covariates, j),
                reg.sigma2,
                l,
                cfg,
                &mut r,
            )
        })
        .collect();
    PlausibleValueSet::new(
        draws.into_iter().flatten().collect(),
        l,
        responses.domain_of().to_vec(),
    )
}
