//! One Monte Carlo replicate: sample domains and persons, compute the four
//! estimators and score them against the true domain means.

use nalgebra::DMatrix;
use rand::Rng;

use super::population::{permutation, PopulationState};
use super::{Estimator, SimConfig};
use crate::error::{Error, Result};
use crate::fh::{self, AreaDesign, VarianceMethod};
use crate::pv::rubin_combine;
use crate::survey::{self, SampleDomain};

/// Estimates for one sampled domain, indexed by [`Estimator`].
#[derive(Debug, Clone, PartialEq)]
pub struct DomainEstimates {
    pub domain: usize,
    pub truth: f64,
    pub n_d: usize,
    pub estimate: [f64; 4],
    pub variance: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateEstimates {
    pub domains: Vec<DomainEstimates>,
    /// Sampled domains dropped because a per-domain estimator failed.
    pub skipped: Vec<usize>,
}

/// Per-replicate summaries, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateMetrics {
    /// Mean over domains of `(γ_d - γ̂_d) / γ̂_d`.
    pub sbp: [f64; 4],
    /// Mean over domains of `|γ̂_d - γ_d| / γ_d`.
    pub eerp: [f64; 4],
    pub domains: usize,
    pub skipped: usize,
}

/// Number of sampled domains and the per-domain sample size.
///
/// `f_n` is the overall sampling fraction of persons, spread equally over
/// the sampled domains.
pub fn sample_sizes(cfg: &SimConfig, domain_size: usize) -> (usize, usize) {
    let m = ((cfg.f_d * cfg.n_domains as f64).ceil() as usize).clamp(1, cfg.n_domains);
    let n_d = (cfg.f_n * cfg.n_population as f64 / m as f64).round() as usize;
    (m, n_d.clamp(2, domain_size))
}

/// Draw the replicate's sample and compute all four estimators.
///
/// The stream is consumed the same way for every `(f_d, f_n)`: one domain
/// permutation, then one person permutation per domain. Smaller designs are
/// therefore nested inside larger ones within a replicate.
pub fn run_replicate(
    cfg: &SimConfig,
    state: &PopulationState,
    rng: &mut impl Rng,
) -> Result<ReplicateEstimates> {
    let pop = &state.population;
    let d_total = pop.n_domains();
    let members = pop.members();
    let domain_perm = permutation(d_total, rng);
    let person_perm: Vec<Vec<usize>> = members.iter().map(|m| permutation(m.len(), rng)).collect();

    let min_size = pop.domain_size.iter().copied().min().unwrap_or(0);
    let (m, n_target) = sample_sizes(cfg, min_size);
    let mut sampled: Vec<usize> = domain_perm[..m].to_vec();
    sampled.sort_unstable();

    let l = state.pvs.l();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    // per kept domain: sample, HT and GREG per imputation
    let mut samples: Vec<Vec<SampleDomain>> = Vec::new();
    let mut ht: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut greg: Vec<Vec<(f64, f64)>> = Vec::new();
    for &d in &sampled {
        let mem = &members[d];
        let chosen: Vec<usize> = person_perm[d][..n_target.min(mem.len())]
            .iter()
            .map(|&k| mem[k])
            .collect();
        let aux = DMatrix::from_fn(chosen.len(), 2, |r, c| pop.person_aux[(chosen[r], c)]);
        let totals: Vec<f64> = (0..2)
            .map(|c| mem.iter().map(|&j| pop.person_aux[(j, c)]).sum())
            .collect();
        let per: Result<Vec<(SampleDomain, (f64, f64), (f64, f64))>> = (0..l)
            .map(|ell| {
                let values = chosen.iter().map(|&j| state.pvs.get(j, ell)).collect();
                let s =
                    SampleDomain::srs(d, values, mem.len() as f64, aux.clone(), totals.clone())?;
                let h = survey::ht_mean(&s)?;
                let g = survey::greg_mean(&s)?;
                Ok((s, h, g))
            })
            .collect();
        match per {
            Ok(v) => {
                kept.push(d);
                let (mut s_l, mut h_l, mut g_l) = (Vec::new(), Vec::new(), Vec::new());
                for (s, h, g) in v {
                    s_l.push(s);
                    h_l.push(h);
                    g_l.push(g);
                }
                samples.push(s_l);
                ht.push(h_l);
                greg.push(g_l);
            }
            Err(Error::SingularAux { .. } | Error::SingletonDomain { .. }) => skipped.push(d),
            Err(e) => return Err(e),
        }
    }

    let k = kept.len();
    let x = DMatrix::from_fn(k, 3, |r, c| {
        if c == 0 {
            1.0
        } else {
            pop.area_aux[(kept[r], c - 1)]
        }
    });
    if k < x.ncols() + 2 {
        return Err(Error::InvalidInput(format!(
            "{k} usable sampled domains; the area model needs at least {}",
            x.ncols() + 2
        )));
    }
    let n_bar = samples.iter().map(|s| s[0].n() as f64).sum::<f64>() / k as f64;

    // composite per imputation, against that imputation's synthetic fit
    let mut comp: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(l); k];
    for ell in 0..l {
        let direct: Vec<f64> = ht.iter().map(|h| h[ell].0).collect();
        let synthetic = survey::regression_synthetic(&x, &direct)?;
        for r in 0..k {
            comp[r].push(survey::composite_mean(
                &samples[r][ell],
                synthetic[r],
                n_bar,
            ));
        }
    }

    let mut out = Vec::with_capacity(k);
    let mut dir_gamma = Vec::with_capacity(k);
    let mut dir_var = Vec::with_capacity(k);
    for r in 0..k {
        let dir = rubin_combine(kept[r], &ht[r])?;
        let cal = rubin_combine(kept[r], &greg[r])?;
        let cmp = rubin_combine(kept[r], &comp[r])?;
        dir_gamma.push(dir.gamma_hat);
        dir_var.push(dir.sigma2_d);
        out.push(DomainEstimates {
            domain: kept[r],
            truth: pop.gamma[kept[r]],
            n_d: samples[r][0].n(),
            estimate: [dir.gamma_hat, cal.gamma_hat, cmp.gamma_hat, f64::NAN],
            variance: [dir.sigma2_d, cal.sigma2_d, cmp.sigma2_d, f64::NAN],
        });
    }
    let design = AreaDesign::new(x, dir_gamma, dir_var)?;
    let fit = fh::fit(&design, VarianceMethod::Reml)?;
    for (r, e) in out.iter_mut().enumerate() {
        e.estimate[Estimator::Proposed as usize] = fit.eblup[r];
        e.variance[Estimator::Proposed as usize] = fit.mse[r];
    }
    Ok(ReplicateEstimates {
        domains: out,
        skipped,
    })
}

pub fn replicate_metrics(est: &ReplicateEstimates) -> ReplicateMetrics {
    let k = est.domains.len() as f64;
    let mut sbp = [0.0; 4];
    let mut eerp = [0.0; 4];
    for d in &est.domains {
        for e in 0..4 {
            sbp[e] += (d.truth - d.estimate[e]) / d.estimate[e];
            eerp[e] += (d.estimate[e] - d.truth).abs() / d.truth;
        }
    }
    for e in 0..4 {
        sbp[e] *= 100.0 / k;
        eerp[e] *= 100.0 / k;
    }
    ReplicateMetrics {
        sbp,
        eerp,
        domains: est.domains.len(),
        skipped: est.skipped.len(),
    }
}
