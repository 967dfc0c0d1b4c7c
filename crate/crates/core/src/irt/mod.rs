//! Item response model, calibration and plausible-value drawing.

mod em;
mod mh;
pub mod quadrature;

pub use em::{calibrate_em, person_posterior, EmConfig, EmFit, GuessingMode};
pub use mh::{draw_person, draw_plausible_values, McmcConfig};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default logistic scale constant.
pub const LOGISTIC_SCALE: f64 = 1.7;

/// Parameters of one item under the three-parameter logistic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub scale: f64,
}

impl ItemParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::with_scale(a, b, c, LOGISTIC_SCALE)
    }

    pub fn with_scale(a: f64, b: f64, c: f64, scale: f64) -> Result<Self> {
        let item = Self { a, b, c, scale };
        item.validate()?;
        Ok(item)
    }

    /// 2PL item (no guessing).
    pub fn two_pl(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.a.is_finite()
            && self.a > 0.0
            && self.b.is_finite()
            && (0.0..1.0).contains(&self.c)
            && self.scale.is_finite()
            && self.scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "item parameters out of range: {self:?}"
            )))
        }
    }

    #[inline]
    fn logit(&self, theta: f64) -> f64 {
        self.scale * self.a * (theta - self.b)
    }

    /// Probability of a correct response.
    #[inline]
    pub fn irf(&self, theta: f64) -> f64 {
        irf(theta, self)
    }

    /// `(log P, log (1 - P))`, stable in both tails.
    #[inline]
    pub fn log_probs(&self, theta: f64) -> (f64, f64) {
        let z = self.logit(theta);
        let log_sig = -softplus(-z);
        let log_sig_neg = -softplus(z);
        if self.c == 0.0 {
            (log_sig, log_sig_neg)
        } else {
            let p = self.c + (1.0 - self.c) * log_sig.exp();
            (p.ln(), (1.0 - self.c).ln() + log_sig_neg)
        }
    }

    /// Log-probability of an observed response; missing cells contribute 0.
    #[inline]
    pub fn log_lik(&self, theta: f64, response: Response) -> f64 {
        match response {
            Response::Missing => 0.0,
            Response::Correct => self.log_prob(theta, true),
            Response::Incorrect => self.log_prob(theta, false),
        }
    }

    /// `log P(correct)` or `log P(incorrect)`, computing only the one needed.
    #[inline]
    pub fn log_prob(&self, theta: f64, correct: bool) -> f64 {
        let z = self.logit(theta);
        match (correct, self.c == 0.0) {
            (true, true) => -softplus(-z),
            (false, _) => (1.0 - self.c).ln() - softplus(z),
            (true, false) => (self.c + (1.0 - self.c) * (-softplus(-z)).exp()).ln(),
        }
    }
}

/// Response function `c + (1 - c) / (1 + exp(-scale·a·(θ - b)))`.
#[inline]
pub fn irf(theta: f64, item: &ItemParams) -> f64 {
    let z = item.logit(theta);
    let sig = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    item.c + (1.0 - item.c) * sig
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemBank {
    pub items: Vec<ItemParams>,
}

impl ItemBank {
    pub fn new(items: Vec<ItemParams>) -> Result<Self> {
        for it in &items {
            it.validate()?;
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Log-likelihood of one person's observed responses at `theta`.
    pub fn person_log_lik(&self, theta: f64, responses: &[Response]) -> f64 {
        self.items
            .iter()
            .zip(responses)
            .map(|(it, &r)| it.log_lik(theta, r))
            .sum()
    }
}

/// A dichotomous response cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Response {
    Incorrect = 0,
    Correct = 1,
    Missing = 2,
}

impl Response {
    pub fn from_bool(correct: bool) -> Self {
        if correct {
            Response::Correct
        } else {
            Response::Incorrect
        }
    }

    pub fn is_observed(self) -> bool {
        self != Response::Missing
    }
}

/// Persons × items response cells plus each person's domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    n_items: usize,
    cells: Vec<Response>,
    domain_of: Vec<usize>,
}

impl ResponseMatrix {
    /// `cells` is row-major (one row per person).
    pub fn new(n_items: usize, cells: Vec<Response>, domain_of: Vec<usize>) -> Result<Self> {
        if n_items == 0 {
            return Err(Error::InvalidInput(
                "response matrix needs at least one item".into(),
            ));
        }
        if cells.len() != n_items * domain_of.len() {
            return Err(Error::InvalidInput(format!(
                "{} cells do not fill {} persons × {} items",
                cells.len(),
                domain_of.len(),
                n_items
            )));
        }
        Ok(Self {
            n_items,
            cells,
            domain_of,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.domain_of.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn person(&self, j: usize) -> &[Response] {
        &self.cells[j * self.n_items..(j + 1) * self.n_items]
    }

    pub fn get(&self, person: usize, item: usize) -> Response {
        self.cells[person * self.n_items + item]
    }

    pub fn set(&mut self, person: usize, item: usize, value: Response) {
        self.cells[person * self.n_items + item] = value;
    }

    pub fn domain_of(&self) -> &[usize] {
        &self.domain_of
    }

    pub fn cells(&self) -> &[Response] {
        &self.cells
    }

    pub fn n_domains(&self) -> usize {
        self.domain_of.iter().max().map_or(0, |m| m + 1)
    }

    pub fn missing_fraction(&self) -> f64 {
        let missing = self.cells.iter().filter(|r| !r.is_observed()).count();
        missing as f64 / self.cells.len() as f64
    }

    /// Keep only the listed persons, in the given order.
    pub fn select_persons(&self, persons: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(persons.len() * self.n_items);
        let mut domain_of = Vec::with_capacity(persons.len());
        for &j in persons {
            cells.extend_from_slice(self.person(j));
            domain_of.push(self.domain_of[j]);
        }
        Self {
            n_items: self.n_items,
            cells,
            domain_of,
        }
    }
}

/// Normal latent regression `θ_j ~ N(γ₀ + x_jᵀγ, σ²)`.
///
/// `gamma[0]` is the intercept; the remaining entries pair with the columns
/// of the person-covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRegression {
    pub gamma: Vec<f64>,
    pub sigma2: f64,
}

impl LatentRegression {
    pub fn new(gamma: Vec<f64>, sigma2: f64) -> Result<Self> {
        if gamma.is_empty() || !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "latent regression needs an intercept and positive variance (σ² = {sigma2})"
            )));
        }
        Ok(Self { gamma, sigma2 })
    }

    /// Standard normal prior, no covariates.
    pub fn standard() -> Self {
        Self {
            gamma: vec![0.0],
            sigma2: 1.0,
        }
    }

    /// Prior mean for the person in `row` of `covariates` (no intercept column).
    pub fn prior_mean(&self, covariates: Option<&DMatrix<f64>>, row: usize) -> f64 {
        let mut m = self.gamma[0];
        if let Some(x) = covariates {
            for (k, g) in self.gamma[1..].iter().enumerate() {
                m += g * x[(row, k)];
            }
        }
        m
    }
}

/// `L` plausible values per person.
#[derive(Debug, Clone, PartialEq)]
pub struct PlausibleValueSet {
    draws: Vec<f64>,
    l: usize,
    domain_of: Vec<usize>,
}

impl PlausibleValueSet {
    pub fn new(draws: Vec<f64>, l: usize, domain_of: Vec<usize>) -> Result<Self> {
        if l < 2 {
            return Err(Error::TooFewImputations(l));
        }
        if draws.len() != l * domain_of.len() {
            return Err(Error::InvalidInput(format!(
                "{} draws for {} persons × {} values",
                draws.len(),
                domain_of.len(),
                l
            )));
        }
        if draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "plausible values must be finite".into(),
            ));
        }
        Ok(Self {
            draws,
            l,
            domain_of,
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n_persons(&self) -> usize {
        self.domain_of.len()
    }

    pub fn person(&self, j: usize) -> &[f64] {
        &self.draws[j * self.l..(j + 1) * self.l]
    }

    pub fn get(&self, person: usize, ell: usize) -> f64 {
        self.draws[person * self.l + ell]
    }

    pub fn domain_of(&self) -> &[usize] {
        &self.domain_of
    }

    pub fn person_mean(&self, j: usize) -> f64 {
        self.person(j).iter().sum::<f64>() / self.l as f64
    }

    /// Apply `v ↦ offset + slope·v` to every draw (e.g. onto a reporting scale).
    pub fn rescaled(&self, offset: f64, slope: f64) -> Self {
        Self {
            draws: self.draws.iter().map(|v| offset + slope * v).collect(),
            l: self.l,
            domain_of: self.domain_of.clone(),
        }
    }
}
