//! End-to-end simulation checks, at toy and desk scale.

use pvsae_core::io::simout;
use pvsae_core::sim::{
    self, CellResult, CorrLevel, Estimator, PipelineConfig, PopulationState, SimConfig, SimGrid,
};

use nalgebra::DMatrix;
use pvsae_core::rng::substream;
use pvsae_core::survey;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{ensure, Outcome};

pub fn toy_config() -> SimConfig {
    SimConfig {
        n_population: 2000,
        n_items: 30,
        n_domains: 20,
        f_d: 0.5,
        f_n: 0.2,
        replicates: 200,
        ..SimConfig::default()
    }
}

pub fn toy_state(cfg: &SimConfig) -> PopulationState {
    sim::build_population(cfg, &PipelineConfig::default()).expect("toy population")
}

fn eerp_line(m: &sim::SimMetrics) -> String {
    let e: Vec<String> = Estimator::ALL
        .iter()
        .map(|&k| format!("{} {:.3}", k.name(), m.eerp_of(k)))
        .collect();
    e.join(", ")
}

/// D = 20, high correlation, 200 replicates: the area-level estimator is no
/// worse than the direct one and nearly unbiased.
pub fn toy_ordering(state: &PopulationState) -> Outcome {
    let cfg = toy_config();
    let m = sim::run_cell(&cfg, state).map_err(|e| e.to_string())?;
    let sbr = m.sbr_of(Estimator::Proposed);
    ensure(
        m.eerp_of(Estimator::Direct) >= m.eerp_of(Estimator::Proposed)
            && sbr.abs() < 0.5
            && m.failed == 0,
        format!(
            "EERP % {}; SBR(P) {sbr:.3}; failed {}",
            eerp_line(&m),
            m.failed
        ),
    )
}

/// Every domain sampled in full. The finite-population correction removes
/// the sampling variance, so what is left of the error in Dir, Cal and P is
/// imputation noise: their 95% intervals, t with L - 1 degrees of freedom
/// on the combined variance, must cover γ_d in at least 80% of domains
/// (binomial tail below 2% at D = 20). The composite keeps φ = n_d / (n_d +
/// n̄) = 1/2 and has no census limit; it must equal (Dir + synthetic) / 2
/// exactly.
pub fn census_limit(state: &PopulationState) -> Outcome {
    let cfg = SimConfig {
        f_d: 1.0,
        f_n: 1.0,
        replicates: 1,
        ..toy_config()
    };
    let est = sim::run_replicate(&cfg, state, &mut substream(31, 0)).map_err(|e| e.to_string())?;
    let d = est.domains.len();
    let df = (state.pvs.l() - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975);
    let covered = |e: Estimator| {
        est.domains
            .iter()
            .filter(|x| {
                (x.estimate[e as usize] - x.truth).abs() <= t * x.variance[e as usize].sqrt()
            })
            .count()
    };
    let cover = [
        Estimator::Direct,
        Estimator::Calibration,
        Estimator::Proposed,
    ]
    .map(covered);
    let x = DMatrix::from_fn(d, 3, |r, c| {
        if c == 0 {
            1.0
        } else {
            state.population.area_aux[(est.domains[r].domain, c - 1)]
        }
    });
    let dir: Vec<f64> = est.domains.iter().map(|x| x.estimate[0]).collect();
    let synthetic = survey::regression_synthetic(&x, &dir).map_err(|e| e.to_string())?;
    let comp_gap = est
        .domains
        .iter()
        .zip(&synthetic)
        .map(|(x, s)| (x.estimate[Estimator::Composite as usize] - 0.5 * (x.estimate[0] + s)).abs())
        .fold(0.0, f64::max);
    let need = (0.8 * d as f64).ceil() as usize;
    let m = sim::replicate_metrics(&est);
    ensure(
        d == cfg.n_domains && cover.iter().all(|&c| c >= need) && comp_gap < 1e-8,
        format!(
            "D = {d}: t({df}) 95% coverage Dir {}/{d}, Cal {}/{d}, P {}/{d} (need {need}); \
             |Comp - (Dir + syn)/2| {comp_gap:.1e}; EERP % {:.3?}",
            cover[0], cover[1], cover[2], m.eerp
        ),
    )
}

/// Identical metrics on one and on three worker threads.
pub fn thread_invariance(state: &PopulationState) -> Outcome {
    let cfg = SimConfig {
        replicates: 12,
        ..toy_config()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sim::run_cell(&cfg, state))
    };
    let a = run(1).map_err(|e| e.to_string())?;
    let b = run(3).map_err(|e| e.to_string())?;
    let again = run(1).map_err(|e| e.to_string())?;
    ensure(
        a == b && a == again,
        "12 replicates identical on 1 and 3 threads and across runs".into(),
    )
}

/// Two runs of a small grid produce byte-identical tables.
pub fn output_determinism() -> Outcome {
    let grid = SimGrid {
        n_population: 800,
        n_items: 15,
        n_domains: 16,
        n_pv: 2,
        replicates: 4,
        seed: 9,
        missing_rates: vec![0.1],
        corr_levels: vec![CorrLevel::Medium],
        f_d: vec![0.5],
        f_n: vec![0.25],
        em_max_iter: 50,
        em_tol: 0.1,
    };
    let table = || -> Result<Vec<u8>, String> {
        let rows = sim::run_grid(&grid).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        simout::write_sim_table(&mut out, &rows).map_err(|e| e.to_string())?;
        simout::write_plot_csv(&mut out, &rows).map_err(|e| e.to_string())?;
        Ok(out)
    };
    let a = table()?;
    let b = table()?;
    ensure(a == b, format!("two runs, {} identical bytes", a.len()))
}

/// The desk-scale design at one missing rate: N = 10,000, D = 50, I = 60,
/// L = 5, high correlation, the 3 × 3 grid of (f_d, f_n).
pub fn desk_grid(missing_rate: f64, replicates: usize) -> Result<Vec<CellResult>, String> {
    let grid = SimGrid {
        missing_rates: vec![missing_rate],
        replicates,
        ..SimGrid::default()
    };
    sim::run_grid(&grid).map_err(|e| e.to_string())
}

pub fn render_grid(rows: &[CellResult]) -> String {
    let mut s = String::from("      f_d   f_n     Dir     Cal    Comp       P   SBR(P) failed\n");
    for r in rows {
        let m = &r.metrics;
        s.push_str(&format!(
            "     {:.2}  {:.2}  {:6.3}  {:6.3}  {:6.3}  {:6.3}  {:7.3}  {}\n",
            r.f_d,
            r.f_n,
            m.eerp_of(Estimator::Direct),
            m.eerp_of(Estimator::Calibration),
            m.eerp_of(Estimator::Composite),
            m.eerp_of(Estimator::Proposed),
            m.sbr_of(Estimator::Proposed),
            m.failed
        ));
    }
    s
}

/// Dir > Cal > Comp > P in every cell and |SBR(P)| < 0.5.
pub fn ordering(rows: &[CellResult]) -> Outcome {
    let mut bad = Vec::new();
    let mut worst_sbr = 0.0f64;
    for r in rows {
        let e = &r.metrics.eerp;
        if !(e[0] > e[1] && e[1] > e[2] && e[2] > e[3]) {
            bad.push(format!("(f_d {}, f_n {}) order {:?}", r.f_d, r.f_n, e));
        }
        let s = r.metrics.sbr_of(Estimator::Proposed);
        worst_sbr = worst_sbr.max(s.abs());
        if s.abs() >= 0.5 {
            bad.push(format!("(f_d {}, f_n {}) SBR(P) {s:.3}", r.f_d, r.f_n));
        }
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "{} cells strictly ordered, max |SBR(P)| {worst_sbr:.3}",
                rows.len()
            )
        } else {
            bad.join("; ")
        },
    )
}

/// EERP non-increasing in f_n and non-decreasing in f_d, every estimator.
pub fn monotonicity(rows: &[CellResult]) -> Outcome {
    let find = |d: f64, n: f64| rows.iter().find(|r| r.f_d == d && r.f_n == n).unwrap();
    let mut fds: Vec<f64> = rows.iter().map(|r| r.f_d).collect();
    let mut fns: Vec<f64> = rows.iter().map(|r| r.f_n).collect();
    fds.sort_by(f64::total_cmp);
    fds.dedup();
    fns.sort_by(f64::total_cmp);
    fns.dedup();
    let mut bad = Vec::new();
    let mut pairs = 0;
    for e in Estimator::ALL {
        for &d in &fds {
            for w in fns.windows(2) {
                pairs += 1;
                let (a, b) = (
                    find(d, w[0]).metrics.eerp_of(e),
                    find(d, w[1]).metrics.eerp_of(e),
                );
                if b > a {
                    bad.push(format!(
                        "{} f_d {d}: f_n {} → {} raises EERP {a:.3} → {b:.3}",
                        e.name(),
                        w[0],
                        w[1]
                    ));
                }
            }
        }
        for &n in &fns {
            for w in fds.windows(2) {
                pairs += 1;
                let (a, b) = (
                    find(w[0], n).metrics.eerp_of(e),
                    find(w[1], n).metrics.eerp_of(e),
                );
                if b < a {
                    bad.push(format!(
                        "{} f_n {n}: f_d {} → {} lowers EERP {a:.3} → {b:.3}",
                        e.name(),
                        w[0],
                        w[1]
                    ));
                }
            }
        }
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{pairs} adjacent pairs monotone")
        } else {
            bad.join("; ")
        },
    )
}

/// EERP(P) at the higher missing rate is at least that at the lower one,
/// cell by cell.
pub fn missing_rate_effect(low: &[CellResult], high: &[CellResult]) -> Outcome {
    let mut bad = Vec::new();
    let mut gaps = Vec::new();
    for (a, b) in low.iter().zip(high) {
        let (ea, eb) = (
            a.metrics.eerp_of(Estimator::Proposed),
            b.metrics.eerp_of(Estimator::Proposed),
        );
        gaps.push(eb - ea);
        if eb < ea {
            bad.push(format!(
                "(f_d {}, f_n {}) {ea:.3} at {} vs {eb:.3} at {}",
                a.f_d, a.f_n, a.missing_rate, b.missing_rate
            ));
        }
    }
    let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} cells, smallest increase {min_gap:.4} pp", gaps.len())
        } else {
            bad.join("; ")
        },
    )
}
