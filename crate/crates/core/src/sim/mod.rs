//! Monte Carlo comparison of the direct, calibration, composite and
//! Fay-Herriot estimators on a synthetic student population.
//!
//! A run builds one population per `(missing_rate, corr_level)`, calibrates
//! it and draws plausible values once, then evaluates every `(f_d, f_n)`
//! design over `R` replicates. Replicate `r` always uses substream `r` of the
//! replicate seed, so designs and missing rates are compared on common
//! random numbers and results do not depend on the number of threads.

mod population;
mod replicate;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use population::{
    apply_mcar_mask, domain_assignment, prepare_population, synth_population, PipelineConfig,
    Population, PopulationState, REPORT_MEAN, REPORT_SD,
};
pub use replicate::{
    replicate_metrics, run_replicate, sample_sizes, DomainEstimates, ReplicateEstimates,
    ReplicateMetrics,
};

const TAG_POPULATION: u64 = 1;
const TAG_MASK: u64 = 2;
const TAG_PV: u64 = 3;
const TAG_REPLICATE: u64 = 4;

/// Target correlation of the area covariates with the true domain means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrLevel {
    High,
    Medium,
    Low,
}

impl CorrLevel {
    pub fn name(self) -> &'static str {
        match self {
            CorrLevel::High => "high",
            CorrLevel::Medium => "medium",
            CorrLevel::Low => "low",
        }
    }

    /// Loading `ρ` used to build the covariates.
    pub fn target(self) -> f64 {
        match self {
            CorrLevel::High => 0.9,
            CorrLevel::Medium => 0.7,
            CorrLevel::Low => 0.4,
        }
    }

    /// Accepted band for the achieved correlation.
    pub fn contains(self, r: f64) -> bool {
        match self {
            CorrLevel::High => r > 0.8,
            CorrLevel::Medium => (0.6..=0.8).contains(&r),
            CorrLevel::Low => r < 0.6,
        }
    }
}

impl fmt::Display for CorrLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(CorrLevel::High),
            "medium" => Ok(CorrLevel::Medium),
            "low" => Ok(CorrLevel::Low),
            other => Err(Error::Config(format!(
                "unknown correlation level `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Direct = 0,
    Calibration = 1,
    Composite = 2,
    Proposed = 3,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Direct,
        Estimator::Calibration,
        Estimator::Composite,
        Estimator::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Direct => "dir",
            Estimator::Calibration => "cal",
            Estimator::Composite => "comp",
            Estimator::Proposed => "p",
        }
    }
}

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// `N`
    pub n_population: usize,
    /// `I`
    pub n_items: usize,
    /// `D`
    pub n_domains: usize,
    pub missing_rate: f64,
    pub corr_level: CorrLevel,
    /// Fraction of domains sampled.
    pub f_d: f64,
    /// Overall fraction of persons sampled.
    pub f_n: f64,
    /// `L`
    pub n_pv: usize,
    /// `R`
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_population: 10_000,
            n_items: 60,
            n_domains: 50,
            missing_rate: 0.10,
            corr_level: CorrLevel::High,
            f_d: 0.30,
            f_n: 0.05,
            n_pv: 5,
            replicates: 500,
            seed: 2015,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate {} outside [0, 1)", self.missing_rate));
        }
        for (name, v) in [("f_d", self.f_d), ("f_n", self.f_n)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} outside (0, 1]"));
            }
        }
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.n_pv < 2 {
            return bad(format!(
                "n_pv = {} but at least 2 plausible values are needed",
                self.n_pv
            ));
        }
        if self.n_items < 1 || self.n_domains < 1 {
            return bad("n_items and n_domains must be positive".into());
        }
        if self.n_population < 2 * self.n_domains {
            return bad(format!(
                "population of {} cannot fill {} domains with two persons each",
                self.n_population, self.n_domains
            ));
        }
        Ok(())
    }
}

/// Aggregated metrics for one design cell, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub per_replicate: Vec<ReplicateMetrics>,
    /// Mean of the per-replicate relative biases, per estimator.
    pub sbr: [f64; 4],
    /// Mean of the per-replicate relative errors, per estimator.
    pub eerp: [f64; 4],
    /// Replicates that failed numerically and are excluded from the means.
    pub failed: usize,
}

impl SimMetrics {
    pub fn eerp_of(&self, e: Estimator) -> f64 {
        self.eerp[e as usize]
    }

    pub fn sbr_of(&self, e: Estimator) -> f64 {
        self.sbr[e as usize]
    }

    pub fn skipped_domains(&self) -> usize {
        self.per_replicate.iter().map(|r| r.skipped).sum()
    }
}

/// Plain means over replicates, summed in replicate order.
pub fn aggregate(reps: &[ReplicateMetrics], failed: usize) -> Result<SimMetrics> {
    if reps.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no successful replicates to aggregate ({failed} failed)"
        )));
    }
    let r = reps.len() as f64;
    let mut sbr = [0.0; 4];
    let mut eerp = [0.0; 4];
    for m in reps {
        for e in 0..4 {
            sbr[e] += m.sbp[e];
            eerp[e] += m.eerp[e];
        }
    }
    for e in 0..4 {
        sbr[e] /= r;
        eerp[e] /= r;
    }
    Ok(SimMetrics {
        per_replicate: reps.to_vec(),
        sbr,
        eerp,
        failed,
    })
}

/// Build and prepare the population for `cfg`'s missing rate and
/// correlation level.
pub fn build_population(cfg: &SimConfig, pipeline: &PipelineConfig) -> Result<PopulationState> {
    cfg.validate()?;
    let mut pop_rng = rng::substream(rng::child_seed(cfg.seed, TAG_POPULATION), 0);
    let mut population = synth_population(cfg, &mut pop_rng)?;
    let mut mask_rng = rng::substream(rng::child_seed(cfg.seed, TAG_MASK), 0);
    population.responses = apply_mcar_mask(&population.responses, cfg.missing_rate, &mut mask_rng)?;
    prepare_population(
        population,
        cfg.n_pv,
        pipeline,
        rng::child_seed(cfg.seed, TAG_PV),
    )
}

/// Run all replicates of one design cell in parallel.
pub fn run_cell(cfg: &SimConfig, state: &PopulationState) -> Result<SimMetrics> {
    cfg.validate()?;
    let seed = rng::child_seed(cfg.seed, TAG_REPLICATE);
    let results: Vec<Result<ReplicateMetrics>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::substream(seed, r as u64);
            run_replicate(cfg, state, &mut rng).map(|e| replicate_metrics(&e))
        })
        .collect();
    let mut reps = Vec::with_capacity(results.len());
    let mut failed = 0;
    for res in results {
        match res {
            Ok(m) => reps.push(m),
            Err(e) if e.is_numerical() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    aggregate(&reps, failed)
}

/// A full simulation design: fixed sizes and lists of the swept factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimGrid {
    pub n_population: usize,
    pub n_items: usize,
    pub n_domains: usize,
    pub n_pv: usize,
    pub replicates: usize,
    pub seed: u64,
    pub missing_rates: Vec<f64>,
    pub corr_levels: Vec<CorrLevel>,
    pub f_d: Vec<f64>,
    pub f_n: Vec<f64>,
    /// EM iteration cap for the population calibration.
    #[serde(default = "default_em_max_iter")]
    pub em_max_iter: usize,
    /// EM stopping tolerance on the change in marginal log-likelihood.
    #[serde(default = "default_em_tol")]
    pub em_tol: f64,
}

fn default_em_max_iter() -> usize {
    PipelineConfig::default().em.max_iter
}

fn default_em_tol() -> f64 {
    PipelineConfig::default().em.tol
}

impl Default for SimGrid {
    /// Desk-scale design: high correlation, 10% missing, the 3 × 3 grid of
    /// domain and person fractions.
    fn default() -> Self {
        let base = SimConfig::default();
        Self {
            n_population: base.n_population,
            n_items: base.n_items,
            n_domains: base.n_domains,
            n_pv: base.n_pv,
            replicates: base.replicates,
            seed: base.seed,
            missing_rates: vec![0.10],
            corr_levels: vec![CorrLevel::High],
            f_d: vec![0.30, 0.50, 0.70],
            f_n: vec![0.05, 0.10, 0.20],
            em_max_iter: default_em_max_iter(),
            em_tol: default_em_tol(),
        }
    }
}

impl SimGrid {
    pub fn cell(&self, missing_rate: f64, corr_level: CorrLevel, f_d: f64, f_n: f64) -> SimConfig {
        SimConfig {
            n_population: self.n_population,
            n_items: self.n_items,
            n_domains: self.n_domains,
            missing_rate,
            corr_level,
            f_d,
            f_n,
            n_pv: self.n_pv,
            replicates: self.replicates,
            seed: self.seed,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = PipelineConfig::default();
        p.em.max_iter = self.em_max_iter;
        p.em.tol = self.em_tol;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.missing_rates.is_empty()
            || self.corr_levels.is_empty()
            || self.f_d.is_empty()
            || self.f_n.is_empty()
        {
            return Err(Error::Config(
                "every swept factor needs at least one value".into(),
            ));
        }
        for &m in &self.missing_rates {
            for &c in &self.corr_levels {
                for &d in &self.f_d {
                    for &n in &self.f_n {
                        self.cell(m, c, d, n).validate()?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// One output row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub missing_rate: f64,
    pub corr_level: CorrLevel,
    pub f_d: f64,
    pub f_n: f64,
    pub metrics: SimMetrics,
}

/// Run every cell of the grid, populations in the order
/// `missing_rates × corr_levels` and designs in the order `f_d × f_n`.
pub fn run_grid(grid: &SimGrid) -> Result<Vec<CellResult>> {
    grid.validate()?;
    let pipeline = grid.pipeline();
    let mut out = Vec::new();
    for &m in &grid.missing_rates {
        for &c in &grid.corr_levels {
            let state = build_population(&grid.cell(m, c, grid.f_d[0], grid.f_n[0]), &pipeline)?;
            for &d in &grid.f_d {
                for &n in &grid.f_n {
                    let cfg = grid.cell(m, c, d, n);
                    out.push(CellResult {
                        missing_rate: m,
                        corr_level: c,
                        f_d: d,
                        f_n: n,
                        metrics: run_cell(&cfg, &state)?,
                    });
                }
            }
        }
    }
    Ok(out)
}
