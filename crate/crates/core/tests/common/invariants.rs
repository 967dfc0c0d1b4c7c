//! Deterministic sweeps over the algebraic invariants of the combining,
//! area-level and design-based estimators, and of the bundled data.

use nalgebra::DMatrix;
use rand::Rng;

use pvsae_core::error::Error;
use pvsae_core::fh::{self, AreaDesign, VarianceMethod};
use pvsae_core::io::{self as pio, pisa, AreaInput};
use pvsae_core::pv;
use pvsae_core::rng::substream;
use pvsae_core::survey::{self, SampleDomain};

use super::{ensure, normal, Outcome};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Combining identity, permutation invariance and location equivariance
/// over `n` random imputation sets.
pub fn rubin_invariants(n: usize) -> Outcome {
    let mut rng = substream(801, 0);
    for case in 0..n {
        let l = rng.random_range(2..12);
        let per: Vec<(f64, f64)> = (0..l)
            .map(|_| (500.0 + 30.0 * normal(&mut rng), rng.random_range(0.1..50.0)))
            .collect();
        let a = pv::rubin_combine(0, &per).map_err(|e| e.to_string())?;
        let identity = a.within + (1.0 + 1.0 / l as f64) * a.between;
        let mut perm = per.clone();
        perm.rotate_left(rng.random_range(0..l));
        perm.reverse();
        let b = pv::rubin_combine(0, &perm).map_err(|e| e.to_string())?;
        let k = 100.0 * normal(&mut rng);
        let shifted: Vec<(f64, f64)> = per.iter().map(|(t, v)| (t + k, *v)).collect();
        let c = pv::rubin_combine(0, &shifted).map_err(|e| e.to_string())?;
        let ok = close(a.sigma2_d, identity, 1e-12)
            && close(a.gamma_hat, b.gamma_hat, 1e-12)
            && close(a.sigma2_d, b.sigma2_d, 1e-12)
            && close(c.gamma_hat, a.gamma_hat + k, 1e-12)
            && close(c.sigma2_d, a.sigma2_d, 1e-9);
        if !ok {
            return Err(format!(
                "case {case} (L = {l}): {a:?} / permuted {b:?} / shifted by {k}: {c:?}"
            ));
        }
    }
    Ok(format!(
        "{n} imputation sets: identity, permutation and shift hold"
    ))
}

/// `B_d` strictly increasing in `σ_d²` and strictly decreasing in `σ_u²`.
pub fn shrinkage_monotone(n: usize) -> Outcome {
    let mut rng = substream(802, 0);
    for _ in 0..n {
        let s = rng.random_range(0.01..100.0);
        let u = rng.random_range(0.01..1000.0);
        let (ds, du) = (rng.random_range(1e-3..10.0), rng.random_range(1e-3..10.0));
        let b = fh::shrinkage(&[s, s + ds], u);
        let c = fh::shrinkage(&[s], u + du);
        if !(b[0] < b[1] && c[0] < b[0]) {
            return Err(format!(
                "σ² {s}, σ_u² {u}: B {b:?}, with σ_u² + {du}: {c:?}"
            ));
        }
    }
    Ok(format!("{n} random (σ_d², σ_u²) steps strictly monotone"))
}

/// Fitted EBLUP between the direct and synthetic values and
/// `g1 + σ_d² B_d = σ_d²`, for every variance method on `n` random designs.
pub fn fh_sandwich_identity(n: usize) -> Outcome {
    let mut rng = substream(803, 0);
    let mut fits = 0;
    let mut worst = 0.0f64;
    for case in 0..n {
        let d = rng.random_range(5..30);
        let x = DMatrix::from_fn(d, 2, |_, c| if c == 0 { 1.0 } else { normal(&mut rng) });
        let sigma2: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
        let su = rng.random_range(0.0..3.0f64).sqrt();
        let gamma: Vec<f64> = (0..d)
            .map(|k| 2.0 + x[(k, 1)] + su * normal(&mut rng) + sigma2[k].sqrt() * normal(&mut rng))
            .collect();
        let des = AreaDesign::new(x, gamma.clone(), sigma2.clone()).map_err(|e| e.to_string())?;
        for method in [
            VarianceMethod::PrasadRao,
            VarianceMethod::Ml,
            VarianceMethod::Reml,
        ] {
            let fit = fh::fit(&des, method)
                .map_err(|e| format!("case {case}, {}: {e}", method.name()))?;
            fits += 1;
            for k in 0..d {
                let (lo, hi) = (
                    gamma[k].min(fit.synthetic[k]),
                    gamma[k].max(fit.synthetic[k]),
                );
                let gap = (fit.g1[k] + sigma2[k] * fit.b[k] - sigma2[k]).abs() / sigma2[k];
                worst = worst.max(gap);
                let ok = fit.eblup[k] >= lo - 1e-9
                    && fit.eblup[k] <= hi + 1e-9
                    && gap <= 1e-12
                    && fit.g1[k] >= 0.0
                    && fit.g2[k] >= 0.0
                    && fit.g3[k] >= 0.0;
                if !ok {
                    return Err(format!("case {case}, {}, area {k}: EBLUP {} outside [{lo}, {hi}] or identity gap {gap:.1e}", method.name(), fit.eblup[k]));
                }
            }
        }
    }
    Ok(format!(
        "{fits} fits: EBLUP sandwiched, max |g1 + σ²B - σ²| / σ² {worst:.1e}"
    ))
}

/// HT, GREG and composite shift with the values; a constant auxiliary
/// column makes GREG reject the domain.
pub fn survey_invariants(n: usize) -> Outcome {
    let mut rng = substream(804, 0);
    for case in 0..n {
        let m = rng.random_range(5..40);
        let big_n = m as f64 * rng.random_range(1.5..20.0);
        let y: Vec<f64> = (0..m).map(|_| 50.0 + 10.0 * normal(&mut rng)).collect();
        let aux = DMatrix::from_fn(m, 2, |_, _| normal(&mut rng));
        let totals = vec![
            big_n * 0.1 * normal(&mut rng),
            big_n * 0.1 * normal(&mut rng),
        ];
        let k = 100.0 * normal(&mut rng);
        let syn = 50.0 + normal(&mut rng);
        let n_bar = rng.random_range(5.0..40.0);
        let build = |shift: f64| {
            SampleDomain::srs(
                0,
                y.iter().map(|v| v + shift).collect(),
                big_n,
                aux.clone(),
                totals.clone(),
            )
        };
        let (a, b) = (
            build(0.0).map_err(|e| e.to_string())?,
            build(k).map_err(|e| e.to_string())?,
        );
        let ht = (survey::ht_mean(&a).unwrap(), survey::ht_mean(&b).unwrap());
        let greg = (
            survey::greg_mean(&a).map_err(|e| e.to_string())?,
            survey::greg_mean(&b).map_err(|e| e.to_string())?,
        );
        let comp = (
            survey::composite_mean(&a, syn, n_bar),
            survey::composite_mean(&b, syn + k, n_bar),
        );
        let ok = [ht, greg, comp]
            .iter()
            .all(|(p, q)| close(q.0, p.0 + k, 1e-10) && close(q.1, p.1, 1e-8));
        if !ok {
            return Err(format!(
                "case {case}: shift {k} gives HT {ht:?}, GREG {greg:?}, composite {comp:?}"
            ));
        }
        let mut flat = aux.clone();
        flat.column_mut(1).fill(2.5);
        let singular = SampleDomain::srs(3, y.clone(), big_n, flat, totals.clone())
            .map_err(|e| e.to_string())?;
        if !matches!(
            survey::greg_mean(&singular),
            Err(Error::SingularAux { domain: 3 })
        ) {
            return Err(format!(
                "case {case}: constant auxiliary column accepted by GREG"
            ));
        }
    }
    Ok(format!(
        "{n} domains: HT, GREG and composite shift-equivariant; constant aux rejected"
    ))
}

/// Area CSV written and re-read gives back the same input.
pub fn area_round_trip() -> Outcome {
    let rows = pisa::load_fixture().map_err(|e| e.to_string())?;
    let d = rows.len();
    let x = DMatrix::from_fn(d, 3, |r, c| match c {
        0 => 1.0,
        1 => rows[r].xb,
        _ => rows[r].cve_pct / 3.0,
    });
    let design = AreaDesign::new(
        x,
        rows.iter().map(|r| r.gamma_hat).collect(),
        rows.iter().map(|r| r.sigma2_d).collect(),
    )
    .map_err(|e| e.to_string())?;
    let input = AreaInput {
        domain_ids: rows.iter().map(|r| r.country.clone()).collect(),
        covariate_names: vec!["x_xb".into(), "x_cve".into()],
        design,
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("area.csv");
    pio::write_area_csv(&path, &input).map_err(|e| e.to_string())?;
    let back = pio::ingest_area_csv(&path).map_err(|e| e.to_string())?;
    ensure(
        back == input,
        format!("{d} areas × 2 covariates re-read identically"),
    )
}

/// The bundled table agrees with itself: `B_d` with `σ_d²` and `σ̂_u²` to
/// the printed two decimals, `B + (1 - B) = 1`, `g1 = σ_d²(1 - B_d)` to
/// 1%, MSE = g1 + g2 + 2 g3 to 0.1% and CVE = 100 σ_d / γ̂_d to 0.001.
pub fn fixture_integrity() -> Outcome {
    let rows = pisa::load_fixture().map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    for r in &rows {
        let b = r.sigma2_d / (pisa::SIGMA2_U + r.sigma2_d);
        let ok = (b - r.b_printed).abs() <= 0.005
            && (r.b_printed + r.one_minus_b_printed - 1.0).abs() < 1e-9
            && (r.g1 / (r.sigma2_d * (1.0 - b)) - 1.0).abs() < 0.01
            && ((r.g1 + r.g2 + 2.0 * r.g3) / r.mse_printed - 1.0).abs() < 1e-3
            && (r.cve_pct - 100.0 * r.sigma2_d.sqrt() / r.gamma_hat).abs() < 1e-3;
        if !ok {
            bad.push(r.country.clone());
        }
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} rows self-consistent", rows.len())
        } else {
            format!("inconsistent rows: {}", bad.join(", "))
        },
    )
}
