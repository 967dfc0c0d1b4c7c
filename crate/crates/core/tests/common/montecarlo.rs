//! Repeated-sampling checks of the area-level and design-based estimators.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use pvsae_core::fh::{self, AreaDesign, VarianceMethod};
use pvsae_core::irt::{Response, ResponseMatrix};
use pvsae_core::rng::substream;
use pvsae_core::sim;
use pvsae_core::survey::{self, SampleDomain};

use super::{ensure, mean, normal, sd, Outcome};

/// Fixed part of the area-level generative model: covariates, `x_dᵀβ` and
/// known sampling variances.
pub struct FhModel {
    pub x: DMatrix<f64>,
    pub xb: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub sigma2_u: f64,
}

impl FhModel {
    /// `D` areas, intercept plus one standard-normal covariate, `β = (1, 2)`,
    /// `σ_d² ~ U[0.5, 2]`.
    pub fn new(d: usize, sigma2_u: f64, seed: u64) -> Self {
        let mut rng = substream(seed, 0);
        let mut x = DMatrix::from_element(d, 2, 1.0);
        for r in 0..d {
            x[(r, 1)] = normal(&mut rng);
        }
        let xb = (0..d).map(|r| 1.0 + 2.0 * x[(r, 1)]).collect();
        let sigma2 = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        Self {
            x,
            xb,
            sigma2,
            sigma2_u,
        }
    }

    /// One replicate: `(γ, fit)`.
    pub fn replicate(&self, seed: u64, r: u64, method: VarianceMethod) -> (Vec<f64>, fh::FhFit) {
        let mut rng = substream(seed, r);
        let su = self.sigma2_u.sqrt();
        let gamma: Vec<f64> = self.xb.iter().map(|m| m + su * normal(&mut rng)).collect();
        let direct: Vec<f64> = gamma
            .iter()
            .zip(&self.sigma2)
            .map(|(g, s)| g + s.sqrt() * normal(&mut rng))
            .collect();
        let design = AreaDesign::new(self.x.clone(), direct, self.sigma2.clone()).unwrap();
        let fit = fh::fit(&design, method).expect("area-level fit");
        (gamma, fit)
    }
}

/// Per-domain mean error of the EBLUP over `r` replicates lies within two
/// Monte Carlo standard errors of zero for at least 95% of domains.
pub fn eblup_unbiasedness(d: usize, r: usize) -> Outcome {
    let model = FhModel::new(d, 1.0, 201);
    let errors: Vec<Vec<f64>> = (0..r as u64)
        .into_par_iter()
        .map(|i| {
            let (gamma, fit) = model.replicate(202, i, VarianceMethod::Reml);
            fit.eblup.iter().zip(&gamma).map(|(e, g)| e - g).collect()
        })
        .collect();
    let mut inside = 0;
    let mut worst_z = 0.0f64;
    for k in 0..d {
        let e: Vec<f64> = errors.iter().map(|row| row[k]).collect();
        let z = mean(&e) / (sd(&e) / (r as f64).sqrt());
        worst_z = worst_z.max(z.abs());
        if z.abs() <= 2.0 {
            inside += 1;
        }
    }
    let share = inside as f64 / d as f64;
    ensure(
        share >= 0.95,
        format!("D = {d}, R = {r}: {inside}/{d} domains within 2 MC SE ({:.1}%, need ≥ 95%), max |z| {worst_z:.2}", 100.0 * share),
    )
}

/// Estimated MSE against the empirical MSE of the EBLUP, REML.
pub fn mse_calibration(d: usize, r: usize) -> Outcome {
    let model = FhModel::new(d, 1.0, 301);
    let reps: Vec<(Vec<f64>, Vec<f64>)> = (0..r as u64)
        .into_par_iter()
        .map(|i| {
            let (gamma, fit) = model.replicate(302, i, VarianceMethod::Reml);
            let sq = fit
                .eblup
                .iter()
                .zip(&gamma)
                .map(|(e, g)| (e - g).powi(2))
                .collect();
            (sq, fit.mse)
        })
        .collect();
    let mut rel = Vec::with_capacity(d);
    let mut emp_sum = 0.0;
    let mut est_sum = 0.0;
    for k in 0..d {
        let emp = reps.iter().map(|(s, _)| s[k]).sum::<f64>() / r as f64;
        let est = reps.iter().map(|(_, m)| m[k]).sum::<f64>() / r as f64;
        rel.push((emp - est).abs() / emp);
        emp_sum += emp;
        est_sum += est;
    }
    let avg_rel = mean(&rel);
    let overall = (est_sum / emp_sum - 1.0).abs();
    ensure(
        avg_rel < 0.10 && overall < 0.10,
        format!(
            "D = {d}, R = {r}: mean over d of |emp - est|/emp = {:.2}%, |mean est / mean emp - 1| = {:.2}% (tol 10%)",
            100.0 * avg_rel,
            100.0 * overall
        ),
    )
}

fn finite_population(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = substream(seed, 0);
    let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|_| 50.0 + 10.0 * normal(&mut rng)).collect();
    (y, z)
}

fn srs_domain(y: &[f64], z: &[f64], n: usize, rng: &mut impl Rng) -> SampleDomain {
    let idx = index::sample(rng, y.len(), n);
    let values: Vec<f64> = idx.iter().map(|j| y[j]).collect();
    let aux = DMatrix::from_iterator(n, 1, idx.iter().map(|j| z[j]));
    SampleDomain::srs(0, values, y.len() as f64, aux, vec![z.iter().sum()]).unwrap()
}

/// The SRS variance formula against the empirical variance of the HT mean
/// over repeated draws.
pub fn ht_variance(redraws: usize, n: usize) -> Outcome {
    let (y, z) = finite_population(1000, 401);
    let draws: Vec<(f64, f64)> = (0..redraws as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(402, r);
            survey::ht_mean(&srs_domain(&y, &z, n, &mut rng)).unwrap()
        })
        .collect();
    let est: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let empirical = sd(&est).powi(2);
    let mean_formula = mean(&draws.iter().map(|d| d.1).collect::<Vec<_>>());
    let rel = (mean_formula / empirical - 1.0).abs();
    ensure(
        rel < 0.05,
        format!("n_d = {n}, {redraws} redraws: mean estimated variance {mean_formula:.4} vs empirical {empirical:.4} ({:.2}%, tol 5%)", 100.0 * rel),
    )
}

/// With an auxiliary unrelated to the values, GREG is unbiased for the
/// population mean within two Monte Carlo standard errors.
pub fn greg_without_correlation(redraws: usize, n: usize) -> Outcome {
    let (y, z) = finite_population(2000, 501);
    let truth = mean(&y);
    let diffs: Vec<(f64, f64)> = (0..redraws as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(502, r);
            let dom = srs_domain(&y, &z, n, &mut rng);
            let g = survey::greg_mean(&dom).unwrap().0;
            let h = survey::ht_mean(&dom).unwrap().0;
            (g - truth, g - h)
        })
        .collect();
    let err: Vec<f64> = diffs.iter().map(|d| d.0).collect();
    let se = sd(&err) / (redraws as f64).sqrt();
    let bias = mean(&err);
    let gap: Vec<f64> = diffs.iter().map(|d| d.1).collect();
    ensure(
        bias.abs() < 2.0 * se,
        format!(
            "bias {bias:.4} (2 SE = {:.4}), mean |GREG - HT| {:.4}",
            2.0 * se,
            mean(&gap.iter().map(|g| g.abs()).collect::<Vec<_>>())
        ),
    )
}

/// Empirical mask fraction at rate 0.30 over 10⁶ cells.
pub fn mask_fraction() -> Outcome {
    let (persons, items) = (1000, 1000);
    let cells = vec![Response::Correct; persons * items];
    let m = ResponseMatrix::new(items, cells, vec![0; persons]).unwrap();
    let masked =
        sim::apply_mcar_mask(&m, 0.30, &mut substream(601, 0)).map_err(|e| e.to_string())?;
    let f = masked.missing_fraction();
    let identity =
        sim::apply_mcar_mask(&m, 0.0, &mut substream(601, 1)).map_err(|e| e.to_string())?;
    ensure(
        (f - 0.30).abs() <= 0.0014 && identity == m,
        format!("masked fraction {f:.5} (0.30 ± 0.0014); rate 0 is the identity"),
    )
}
