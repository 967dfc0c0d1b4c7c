//! Marginal maximum likelihood calibration (Bock-Aitkin EM) with a normal
//! latent regression.
//!
//! Each E-step integrates every person's posterior with Gauss-Hermite
//! quadrature centred on the previous iteration's posterior moments. The
//! M-step runs safeguarded Fisher-scoring steps per item on
//! `(slope, intercept) = (scale·a, -scale·a·b)` and a closed-form update of
//! the latent regression. The scale is re-identified after each iteration by
//! standardising the marginal latent distribution to mean 0, variance 1,
//! which leaves the likelihood unchanged.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::quadrature::GaussHermite;
use super::{ItemBank, ItemParams, LatentRegression, Response, ResponseMatrix, LOGISTIC_SCALE};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GuessingMode {
    /// Keep every item's starting `c` (0 unless an initial bank says otherwise).
    Fixed,
    /// Estimate `c` with a Beta(alpha, beta) penalty.
    Estimate { alpha: f64, beta: f64 },
}

impl GuessingMode {
    /// Beta(5, 17): mode 0.2.
    pub fn penalized() -> Self {
        GuessingMode::Estimate {
            alpha: 5.0,
            beta: 17.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub quadrature_nodes: usize,
    pub max_iter: usize,
    /// Stop once the marginal log-likelihood changes by less than this.
    pub tol: f64,
    /// Fisher-scoring steps per item per M-step.
    pub newton_steps: usize,
    pub guessing: GuessingMode,
    pub scale: f64,
    /// Starting item parameters; defaults to a = 1 and b from the p-values.
    pub initial: Option<ItemBank>,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            quadrature_nodes: 41,
            max_iter: 500,
            tol: 1e-4,
            newton_steps: 3,
            guessing: GuessingMode::Fixed,
            scale: LOGISTIC_SCALE,
            initial: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub bank: ItemBank,
    pub regression: LatentRegression,
    /// Marginal log-likelihood (penalised when `c` is estimated) after every
    /// E-step, first entry at the starting values.
    pub log_lik_trace: Vec<f64>,
    pub iterations: usize,
    /// False when `max_iter` was reached; the parameters are the last iterate.
    pub converged: bool,
}

/// Posterior node weights below this are dropped after the moments are taken.
const NODE_CUTOFF: f64 = 1e-14;

/// Posterior of one person on quadrature nodes.
#[derive(Debug, Clone)]
struct Posterior {
    nodes: Vec<f64>,
    probs: Vec<f64>,
    mean: f64,
    var: f64,
    log_marginal: f64,
}

/// Posterior mean, variance and log marginal likelihood of `θ` for one
/// person under prior `N(prior_mean, prior_var)`.
pub fn person_posterior(
    bank: &ItemBank,
    responses: &[Response],
    prior_mean: f64,
    prior_var: f64,
    nodes: usize,
) -> (f64, f64, f64) {
    let gh = GaussHermite::new(nodes);
    let sd = prior_var.sqrt();
    let first = integrate(bank, responses, prior_mean, sd, prior_mean, sd, &gh);
    let second = integrate(
        bank,
        responses,
        prior_mean,
        sd,
        first.mean,
        first.var.sqrt(),
        &gh,
    );
    (second.mean, second.var, second.log_marginal)
}

/// Importance-reweighted Gauss-Hermite rule centred at `(centre, spread)`.
fn integrate(
    bank: &ItemBank,
    responses: &[Response],
    prior_mean: f64,
    prior_sd: f64,
    centre: f64,
    spread: f64,
    gh: &GaussHermite,
) -> Posterior {
    let spread = if spread.is_finite() && spread > 1e-8 {
        spread
    } else {
        prior_sd
    };
    let k = gh.len();
    let mut nodes = Vec::with_capacity(k);
    let mut logw = Vec::with_capacity(k);
    for (z, w) in gh.nodes.iter().zip(&gh.weights) {
        let theta = centre + spread * z;
        let u = (theta - prior_mean) / prior_sd;
        // log[ w · L(θ) · φ(θ; μ, σ) · spread / φ(z) ]
        let lw = w.ln() + bank.person_log_lik(theta, responses) - 0.5 * u * u
            + 0.5 * z * z
            + (spread / prior_sd).ln();
        nodes.push(theta);
        logw.push(lw);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    let mean: f64 = probs.iter().zip(&nodes).map(|(p, t)| p * t).sum();
    let var: f64 = probs
        .iter()
        .zip(&nodes)
        .map(|(p, t)| p * (t - mean).powi(2))
        .sum();
    // nodes this far out contribute nothing measurable to the M-step sums
    let keep: Vec<bool> = probs.iter().map(|&p| p >= NODE_CUTOFF).collect();
    let mut flags = keep.iter();
    nodes.retain(|_| *flags.next().expect("same length"));
    probs.retain(|&p| p >= NODE_CUTOFF);
    Posterior {
        nodes,
        probs,
        mean,
        var,
        log_marginal: max + total.ln(),
    }
}

fn check_items(responses: &ResponseMatrix) -> Result<()> {
    for i in 0..responses.n_items() {
        let (mut zeros, mut ones) = (0usize, 0usize);
        for j in 0..responses.n_persons() {
            match responses.get(j, i) {
                Response::Correct => ones += 1,
                Response::Incorrect => zeros += 1,
                Response::Missing => {}
            }
        }
        if zeros == 0 || ones == 0 {
            return Err(Error::DegenerateItem {
                item: i,
                reason: format!("{ones} correct and {zeros} incorrect observed responses"),
            });
        }
    }
    Ok(())
}

fn starting_bank(responses: &ResponseMatrix, scale: f64) -> ItemBank {
    let items = (0..responses.n_items())
        .map(|i| {
            let (mut n, mut k) = (0.0f64, 0.0f64);
            for j in 0..responses.n_persons() {
                match responses.get(j, i) {
                    Response::Correct => {
                        n += 1.0;
                        k += 1.0
                    }
                    Response::Incorrect => n += 1.0,
                    Response::Missing => {}
                }
            }
            let p = ((k + 0.5) / (n + 1.0)).clamp(0.02, 0.98);
            // attenuated logit: marginal P under N(0,1) with a = 1
            let b = -(p / (1.0 - p)).ln() * (1.0 + 0.35 * scale * scale).sqrt() / scale;
            ItemParams {
                a: 1.0,
                b,
                c: 0.0,
                scale,
            }
        })
        .collect();
    ItemBank { items }
}

/// Item objective summed over observed persons and their posterior nodes,
/// plus the Beta penalty on `c` when it is estimated.
fn item_objective(
    item: &ItemParams,
    col: &[(usize, bool)],
    post: &[Posterior],
    penalty: Option<(f64, f64)>,
) -> f64 {
    let mut s = 0.0;
    for &(j, x) in col {
        let p = &post[j];
        for (t, w) in p.nodes.iter().zip(&p.probs) {
            s += w * item.log_prob(*t, x);
        }
    }
    if let Some((al, be)) = penalty {
        s += (al - 1.0) * item.c.ln() + (be - 1.0) * (1.0 - item.c).ln();
    }
    s
}

fn update_item(
    mut item: ItemParams,
    col: &[(usize, bool)],
    post: &[Posterior],
    cfg: &EmConfig,
) -> ItemParams {
    let penalty = match cfg.guessing {
        GuessingMode::Fixed => None,
        GuessingMode::Estimate { alpha, beta } => Some((alpha, beta)),
    };
    if penalty.is_some() && item.c <= 0.0 {
        item.c = 0.2;
    }
    let mut current = item_objective(&item, col, post, penalty);
    for _ in 0..cfg.newton_steps {
        // Fisher scoring on (α, δ), z = α θ + δ
        let alpha = item.scale * item.a;
        let delta = -alpha * item.b;
        let c = item.c;
        let (mut ga, mut gd, mut haa, mut had, mut hdd) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(j, x) in col {
            let p = &post[j];
            for (t, w) in p.nodes.iter().zip(&p.probs) {
                let z = alpha * t + delta;
                let sig = 1.0 / (1.0 + (-z).exp());
                let prob = (c + (1.0 - c) * sig).clamp(1e-300, 1.0 - 1e-16);
                let dp = (1.0 - c) * sig * (1.0 - sig);
                let xv = if x { 1.0 } else { 0.0 };
                let score = w * (xv - prob) / (prob * (1.0 - prob)) * dp;
                let info = w * dp * dp / (prob * (1.0 - prob));
                ga += score * t;
                gd += score;
                haa += info * t * t;
                had += info * t;
                hdd += info;
            }
        }
        let det = haa * hdd - had * had;
        if !(det > 0.0) {
            break;
        }
        let da = (hdd * ga - had * gd) / det;
        let dd = (haa * gd - had * ga) / det;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let na = alpha + step * da;
            let nd = delta + step * dd;
            if na > 1e-6 {
                let cand = ItemParams {
                    a: na / item.scale,
                    b: -nd / na,
                    ..item
                };
                let val = item_objective(&cand, col, post, penalty);
                if val >= current {
                    item = cand;
                    current = val;
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved || (da.abs() + dd.abs()) < 1e-10 {
            break;
        }
    }
    if let Some((al, be)) = penalty {
        for _ in 0..cfg.newton_steps {
            let c = item.c;
            let (mut g, mut h) = (
                (al - 1.0) / c - (be - 1.0) / (1.0 - c),
                -(al - 1.0) / (c * c) - (be - 1.0) / ((1.0 - c) * (1.0 - c)),
            );
            for &(j, x) in col {
                let p = &post[j];
                for (t, w) in p.nodes.iter().zip(&p.probs) {
                    let sig = item.irf(*t).min(1.0 - 1e-16);
                    let s = 1.0 / (1.0 + (-(item.scale * item.a * (t - item.b))).exp());
                    let d = 1.0 - s;
                    if x {
                        g += w * d / sig;
                        h -= w * d * d / (sig * sig);
                    } else {
                        g -= w * d / (1.0 - sig);
                        h -= w * d * d / ((1.0 - sig) * (1.0 - sig));
                    }
                }
            }
            if !(h < 0.0) {
                break;
            }
            let dc = -g / h;
            let mut step = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let nc = c + step * dc;
                if nc > 1e-6 && nc < 0.9 {
                    let cand = ItemParams { c: nc, ..item };
                    let val = item_objective(&cand, col, post, penalty);
                    if val >= current {
                        item = cand;
                        current = val;
                        improved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !improved || dc.abs() < 1e-10 {
                break;
            }
        }
    }
    item
}

fn penalty_total(bank: &ItemBank, guessing: GuessingMode) -> f64 {
    match guessing {
        GuessingMode::Fixed => 0.0,
        GuessingMode::Estimate { alpha, beta } => bank
            .items
            .iter()
            .map(|it| (alpha - 1.0) * it.c.ln() + (beta - 1.0) * (1.0 - it.c).ln())
            .sum(),
    }
}

/// Calibrate item parameters and the latent regression by EM.
///
/// `covariates` holds one row per person and no intercept column; pass `None`
/// for a plain `N(μ, σ²)` latent distribution. Missing cells are skipped.
pub fn calibrate_em(
    responses: &ResponseMatrix,
    covariates: Option<&DMatrix<f64>>,
    cfg: &EmConfig,
) -> Result<EmFit> {
    let n = responses.n_persons();
    if let Some(x) = covariates {
        if x.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "{} covariate rows for {} persons",
                x.nrows(),
                n
            )));
        }
    }
    check_items(responses)?;
    let mut bank = match &cfg.initial {
        Some(b) if b.len() == responses.n_items() => b.clone(),
        Some(b) => {
            return Err(Error::InvalidInput(format!(
                "initial bank has {} items, responses have {}",
                b.len(),
                responses.n_items()
            )))
        }
        None => starting_bank(responses, cfg.scale),
    };
    if let GuessingMode::Estimate { .. } = cfg.guessing {
        for it in &mut bank.items {
            if it.c <= 0.0 {
                it.c = 0.2;
            }
        }
    }
    let k = covariates.map_or(0, |x| x.ncols());
    let design = {
        let mut d = DMatrix::from_element(n, k + 1, 1.0);
        if let Some(x) = covariates {
            d.view_mut((0, 1), (n, k)).copy_from(x);
        }
        d
    };
    let mut reg = LatentRegression {
        gamma: {
            let mut g = vec![0.0; k + 1];
            g[0] = 0.0;
            g
        },
        sigma2: 1.0,
    };

    // item columns: (person, correct)
    let columns: Vec<Vec<(usize, bool)>> = (0..responses.n_items())
        .map(|i| {
            (0..n)
                .filter_map(|j| match responses.get(j, i) {
                    Response::Correct => Some((j, true)),
                    Response::Incorrect => Some((j, false)),
                    Response::Missing => None,
                })
                .collect()
        })
        .collect();

    let gh = GaussHermite::new(cfg.quadrature_nodes);
    let mut centres: Vec<(f64, f64)> = (0..n)
        .map(|j| (reg.prior_mean(covariates, j), reg.sigma2.sqrt()))
        .collect();

    let e_step = |bank: &ItemBank, reg: &LatentRegression, centres: &[(f64, f64)]| {
        let sd = reg.sigma2.sqrt();
        (0..n)
            .into_par_iter()
            .map(|j| {
                let mu = reg.prior_mean(covariates, j);
                integrate(
                    bank,
                    responses.person(j),
                    mu,
                    sd,
                    centres[j].0,
                    centres[j].1,
                    &gh,
                )
            })
            .collect::<Vec<_>>()
    };

    // Warm-up pass so the first recorded likelihood is already well integrated.
    let warm = e_step(&bank, &reg, &centres);
    for (c, p) in centres.iter_mut().zip(&warm) {
        *c = (p.mean, p.var.sqrt());
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut post = e_step(&bank, &reg, &centres);
    trace.push(
        post.iter().map(|p| p.log_marginal).sum::<f64>() + penalty_total(&bank, cfg.guessing),
    );

    for _ in 0..cfg.max_iter {
        iterations += 1;
        // M-step: items
        let new_items: Vec<ItemParams> = bank
            .items
            .par_iter()
            .zip(columns.par_iter())
            .map(|(it, col)| update_item(*it, col, &post, cfg))
            .collect();
        bank = ItemBank { items: new_items };

        // M-step: latent regression from posterior moments
        let means: Vec<f64> = post.iter().map(|p| p.mean).collect();
        let ones = vec![1.0; n];
        let gamma = linalg::wls(&design, &means, &ones)?;
        let mut s2 = 0.0;
        for (j, p) in post.iter().enumerate() {
            let fitted: f64 = (0..=k).map(|c| design[(j, c)] * gamma[c]).sum();
            s2 += p.var + (p.mean - fitted).powi(2);
        }
        reg = LatentRegression {
            gamma: gamma.iter().cloned().collect(),
            sigma2: (s2 / n as f64).max(1e-8),
        };

        // Re-identify: marginal latent distribution to mean 0, variance 1.
        let prior_means: Vec<f64> = (0..n).map(|j| reg.prior_mean(covariates, j)).collect();
        let m = linalg::mean(&prior_means);
        let v = prior_means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64 + reg.sigma2;
        let s = v.sqrt();
        reg.gamma[0] = (reg.gamma[0] - m) / s;
        for g in &mut reg.gamma[1..] {
            *g /= s;
        }
        reg.sigma2 /= v;
        for it in &mut bank.items {
            it.a *= s;
            it.b = (it.b - m) / s;
        }
        for (c, p) in centres.iter_mut().zip(&post) {
            *c = ((p.mean - m) / s, p.var.sqrt() / s);
        }

        post = e_step(&bank, &reg, &centres);
        let ll =
            post.iter().map(|p| p.log_marginal).sum::<f64>() + penalty_total(&bank, cfg.guessing);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(ll);
        if (ll - prev).abs() < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(EmFit {
        bank,
        regression: reg,
        log_lik_trace: trace,
        iterations,
        converged,
    })
}
