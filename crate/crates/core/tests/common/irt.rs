//! Simulate-then-recover and posterior checks for the item response model.

use rand::Rng;
use rayon::prelude::*;

use pvsae_core::irt::{
    self, EmConfig, GuessingMode, ItemBank, ItemParams, LatentRegression, McmcConfig, Response,
    ResponseMatrix,
};
use pvsae_core::rng::substream;
use pvsae_core::sim;

use super::{corr, ensure, mean, normal, rmse, sd, Outcome};

/// Items with `a ~ U[0.5, 2]`, `b ~ U[-2.5, 2.5]`, `c = 0`.
pub fn random_bank(n_items: usize, rng: &mut impl Rng) -> ItemBank {
    let items = (0..n_items)
        .map(|_| {
            ItemParams::two_pl(rng.random_range(0.5..2.0), rng.random_range(-2.5..2.5)).unwrap()
        })
        .collect();
    ItemBank::new(items).unwrap()
}

pub fn simulate_responses(bank: &ItemBank, theta: &[f64], rng: &mut impl Rng) -> ResponseMatrix {
    let mut cells = Vec::with_capacity(theta.len() * bank.len());
    for t in theta {
        for item in &bank.items {
            cells.push(Response::from_bool(rng.random::<f64>() < item.irf(*t)));
        }
    }
    ResponseMatrix::new(bank.len(), cells, vec![0; theta.len()]).unwrap()
}

pub struct Recovery {
    pub rmse_a: f64,
    pub rmse_b: f64,
    pub iterations: usize,
    pub ascent_violation: f64,
}

/// Calibrate on `persons × items` responses simulated at `θ ~ N(0, 1)`.
pub fn recover(persons: usize, items: usize, seed: u64) -> Recovery {
    let mut rng = substream(seed, 0);
    let bank = random_bank(items, &mut rng);
    let theta: Vec<f64> = (0..persons).map(|_| normal(&mut rng)).collect();
    let resp = simulate_responses(&bank, &theta, &mut rng);
    let fit = irt::calibrate_em(&resp, None, &EmConfig::default()).expect("EM fit");
    let a_true: Vec<f64> = bank.items.iter().map(|i| i.a).collect();
    let b_true: Vec<f64> = bank.items.iter().map(|i| i.b).collect();
    let a_hat: Vec<f64> = fit.bank.items.iter().map(|i| i.a).collect();
    let b_hat: Vec<f64> = fit.bank.items.iter().map(|i| i.b).collect();
    Recovery {
        rmse_a: rmse(&a_true, &a_hat),
        rmse_b: rmse(&b_true, &b_hat),
        iterations: fit.iterations,
        ascent_violation: max_drop(&fit.log_lik_trace),
    }
}

/// Largest decrease between successive log-likelihood values.
pub fn max_drop(trace: &[f64]) -> f64 {
    trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

pub fn em_recovery(persons: usize, items: usize) -> Outcome {
    let r = recover(persons, items, 701);
    ensure(
        r.rmse_a < 0.15 && r.rmse_b < 0.15,
        format!(
            "{persons} × {items}: RMSE a {:.4}, b {:.4} (tol 0.15), {} iterations",
            r.rmse_a, r.rmse_b, r.iterations
        ),
    )
}

/// The marginal log-likelihood never decreases by more than 1e-10, with
/// and without estimated guessing.
pub fn em_ascent() -> Outcome {
    let mut rng = substream(702, 0);
    let items: Vec<ItemParams> = (0..15)
        .map(|_| {
            ItemParams::new(
                rng.random_range(0.7..1.8),
                rng.random_range(-1.5..1.5),
                0.15,
            )
            .unwrap()
        })
        .collect();
    let bank = ItemBank::new(items).unwrap();
    let theta: Vec<f64> = (0..800).map(|_| normal(&mut rng)).collect();
    let resp = simulate_responses(&bank, &theta, &mut rng);
    let mut worst = 0.0f64;
    let mut iters = Vec::new();
    for guessing in [GuessingMode::Fixed, GuessingMode::penalized()] {
        let cfg = EmConfig {
            guessing,
            max_iter: 60,
            tol: 1e-9,
            ..EmConfig::default()
        };
        let fit = irt::calibrate_em(&resp, None, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max(max_drop(&fit.log_lik_trace));
        iters.push(fit.log_lik_trace.len());
    }
    ensure(
        worst <= 1e-10,
        format!("max log-likelihood drop {worst:.2e} over {iters:?} iterations (tol 1e-10)"),
    )
}

/// Correlation of plausible-value means with the true abilities, from a
/// calibrated bank with `items` observed items per person.
pub fn pv_correlation(persons: usize, items: usize) -> Outcome {
    let mut rng = substream(703, 0);
    let bank = random_bank(items, &mut rng);
    let theta: Vec<f64> = (0..persons).map(|_| normal(&mut rng)).collect();
    let resp = simulate_responses(&bank, &theta, &mut rng);
    let fit = irt::calibrate_em(&resp, None, &EmConfig::default()).map_err(|e| e.to_string())?;
    let pvs = irt::draw_plausible_values(
        &resp,
        &fit.bank,
        &fit.regression,
        None,
        5,
        &McmcConfig::default(),
        704,
    )
    .map_err(|e| e.to_string())?;
    let means: Vec<f64> = (0..persons).map(|j| pvs.person_mean(j)).collect();
    let r = corr(&means, &theta);
    ensure(
        r > 0.95,
        format!("{persons} persons, {items} items, L = 5: corr {r:.4} (need > 0.95)"),
    )
}

/// Posterior CDF on a fine grid over [-6, 6] under a `N(m, v)` prior.
pub struct GridPosterior {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    pub mean: f64,
}

impl GridPosterior {
    pub fn new(bank: &ItemBank, resp: &[Response], m: f64, v: f64) -> Self {
        let n = 24_001;
        let h = 12.0 / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| -6.0 + i as f64 * h).collect();
        let logp: Vec<f64> = nodes
            .iter()
            .map(|t| bank.person_log_lik(*t, resp) - 0.5 * (t - m).powi(2) / v)
            .collect();
        let top = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = logp.iter().map(|l| (l - top).exp()).collect();
        let mut cdf = vec![0.0; n];
        let mut first = 0.0;
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
            first += 0.5 * h * (dens[i - 1] * nodes[i - 1] + dens[i] * nodes[i]);
        }
        let total = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self {
            nodes,
            cdf,
            mean: first / total,
        }
    }

    pub fn cdf_at(&self, t: f64) -> f64 {
        if t <= self.nodes[0] {
            return 0.0;
        }
        if t >= *self.nodes.last().unwrap() {
            return 1.0;
        }
        let h = self.nodes[1] - self.nodes[0];
        let i = ((t - self.nodes[0]) / h) as usize;
        let w = (t - self.nodes[i]) / h;
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }

    /// Kolmogorov-Smirnov distance to the empirical CDF of `draws`.
    pub fn ks(&self, draws: &[f64]) -> f64 {
        let mut s = draws.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, t)| {
                let f = self.cdf_at(*t);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Metropolis-Hastings draws against the grid posterior for several
/// response patterns, 10,000 draws each.
pub fn mh_ks(persons: usize, draws: usize) -> Outcome {
    let mut rng = substream(705, 0);
    let bank = random_bank(40, &mut rng);
    let cfg = McmcConfig::default();
    let patterns: Vec<(Vec<Response>, f64, f64)> = (0..persons)
        .map(|k| {
            let t = -2.0 + 4.0 * k as f64 / (persons.max(2) - 1) as f64;
            let mut resp = simulate_responses(&bank, &[t], &mut rng).person(0).to_vec();
            // a share of items unobserved, as under MCAR masking
            for r in resp.iter_mut().step_by(4 + k % 3) {
                *r = Response::Missing;
            }
            (resp, 0.3 * normal(&mut rng), rng.random_range(0.6..1.2))
        })
        .collect();
    let ks: Vec<f64> = patterns
        .par_iter()
        .enumerate()
        .map(|(k, (resp, m, v))| {
            let mut r = substream(706, k as u64);
            let d = irt::draw_person(&bank, resp, *m, *v, draws, &cfg, &mut r);
            GridPosterior::new(&bank, resp, *m, *v).ks(&d)
        })
        .collect();
    let worst = ks.iter().cloned().fold(0.0, f64::max);
    ensure(
        worst < 0.02,
        format!("{persons} persons × {draws} draws: max KS {worst:.4} (tol 0.02)"),
    )
}

/// Masking items completely at random leaves the posterior mean unbiased
/// for the true ability.
pub fn mcar_ignorability(persons: usize, rate: f64) -> Outcome {
    let mut rng = substream(707, 0);
    let bank = random_bank(30, &mut rng);
    let theta: Vec<f64> = (0..persons).map(|_| normal(&mut rng)).collect();
    let full = simulate_responses(&bank, &theta, &mut rng);
    let masked = sim::apply_mcar_mask(&full, rate, &mut rng).map_err(|e| e.to_string())?;
    let prior = LatentRegression::standard();
    let err = |resp: &ResponseMatrix| -> Vec<f64> {
        (0..persons)
            .into_par_iter()
            .map(|j| {
                irt::person_posterior(&bank, resp.person(j), prior.gamma[0], prior.sigma2, 41).0
                    - theta[j]
            })
            .collect()
    };
    let e_masked = err(&masked);
    let e_full = err(&full);
    let se = sd(&e_masked) / (persons as f64).sqrt();
    let bias = mean(&e_masked);
    let diff: Vec<f64> = e_masked.iter().zip(&e_full).map(|(a, b)| a - b).collect();
    let se_diff = sd(&diff) / (persons as f64).sqrt();
    ensure(
        bias.abs() < 2.0 * se && mean(&diff).abs() < 2.0 * se_diff,
        format!(
            "rate {rate}, {persons} persons: bias {bias:.4} (2 SE {:.4}), masked - full {:.4} (2 SE {:.4})",
            2.0 * se,
            mean(&diff),
            2.0 * se_diff
        ),
    )
}

/// Response-function monotonicity over a deterministic sweep of items.
pub fn irf_monotone() -> Outcome {
    let mut rng = substream(708, 0);
    let mut checked = 0;
    for _ in 0..2000 {
        let item = ItemParams::new(
            rng.random_range(0.05..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(0.0..0.5),
        )
        .unwrap();
        let t1 = rng.random_range(-6.0..6.0);
        let t2 = t1 + rng.random_range(1e-3..3.0);
        let (p1, p2) = (item.irf(t1), item.irf(t2));
        // strict away from the asymptotes, where the increase is representable
        let saturated = p1 - item.c < 1e-9 || 1.0 - p1 < 1e-9;
        if !(p1 <= p2 && (p1 < p2 || saturated)) {
            return Err(format!(
                "irf not increasing for {item:?} between {t1} and {t2}"
            ));
        }
        checked += 1;
    }
    Ok(format!("{checked} random (item, θ1 < θ2) pairs increasing"))
}
