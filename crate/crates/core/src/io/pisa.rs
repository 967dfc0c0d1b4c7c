//! Bundled PISA 2015 mathematics country table and its replay.
//!
//! The fixture stores the published values at printed precision. The
//! per-country covariates are not published, so each row carries the
//! synthetic part `x_dᵀβ̂` and the printed g2; everything else is recomputed
//! from `(σ_d², γ̂_d, x_dᵀβ̂)` and `σ̂_u²`.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fh::{self, VarianceMethod};

pub const FIXTURE_CSV: &str = include_str!("../../data/pisa2015_math.csv");
pub const FIXTURE_ROWS: usize = 55;
/// Published REML estimate of the between-country variance.
pub const SIGMA2_U: f64 = 986.58;

/// Replay tolerances: absolute for B, the EBLUP, EER and Dif_rel (the last
/// two in percentage points), relative for g1 and MSE.
pub const TOL_B: f64 = 0.005;
pub const TOL_EBLUP: f64 = 1.0;
pub const TOL_G1_REL: f64 = 0.01;
pub const TOL_MSE_REL: f64 = 0.01;
pub const TOL_EER: f64 = 0.02;
pub const TOL_DIF: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PisaFixtureRow {
    pub country: String,
    pub sigma2_d: f64,
    pub b_printed: f64,
    pub one_minus_b_printed: f64,
    /// Synthetic part `x_dᵀβ̂`.
    pub xb: f64,
    pub gamma_hat: f64,
    pub gamma_p_printed: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub mse_printed: f64,
    pub cve_pct: f64,
    pub eer_printed: f64,
    pub dif_rel_printed: f64,
}

pub fn load_fixture() -> Result<Vec<PisaFixtureRow>> {
    let mut rdr = csv::Reader::from_reader(FIXTURE_CSV.as_bytes());
    let rows: Vec<PisaFixtureRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.len() != FIXTURE_ROWS {
        return Err(Error::Schema {
            path: "pisa2015_math.csv".into(),
            message: format!("{} rows, expected {FIXTURE_ROWS}", rows.len()),
        });
    }
    Ok(rows)
}

/// Recomputed values for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub country: String,
    pub b: f64,
    pub eblup: f64,
    pub g1: f64,
    pub g3: f64,
    pub mse: f64,
    pub eer: f64,
    pub dif_rel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PisaReplay {
    pub sigma2_u: f64,
    pub var_sigma2_u: f64,
    pub fixture: Vec<PisaFixtureRow>,
    pub rows: Vec<ReplayRow>,
}

/// Recompute the country table under REML with `σ̂_u² = 986.58`.
pub fn replay_pisa_fixture() -> Result<PisaReplay> {
    let fixture = load_fixture()?;
    let gamma: Vec<f64> = fixture.iter().map(|r| r.gamma_hat).collect();
    let sigma2: Vec<f64> = fixture.iter().map(|r| r.sigma2_d).collect();
    let synthetic: Vec<f64> = fixture.iter().map(|r| r.xb).collect();
    let (eblup, b, _) = fh::eblup_from_synthetic(&gamma, &sigma2, &synthetic, SIGMA2_U);
    let g1 = fh::g1(&sigma2, SIGMA2_U);
    let var = fh::var_sigma2_u_from(&sigma2, VarianceMethod::Reml, SIGMA2_U);
    let g3 = fh::g3(&sigma2, SIGMA2_U, var);
    let mse: Vec<f64> = (0..fixture.len())
        .map(|k| g1[k] + fixture[k].g2 + 2.0 * g3[k])
        .collect();
    let quality = fh::quality_measures(&eblup, &mse, &sigma2)?;
    let rows = fixture
        .iter()
        .enumerate()
        .map(|(k, r)| ReplayRow {
            country: r.country.clone(),
            b: b[k],
            eblup: eblup[k],
            g1: g1[k],
            g3: g3[k],
            mse: mse[k],
            eer: quality[k].0,
            dif_rel: quality[k].1,
        })
        .collect();
    Ok(PisaReplay {
        sigma2_u: SIGMA2_U,
        var_sigma2_u: var,
        fixture,
        rows,
    })
}

impl PisaReplay {
    /// One message per value outside its replay tolerance.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (f, r) in self.fixture.iter().zip(&self.rows) {
            let checks = [
                ("B", (r.b - f.b_printed).abs(), TOL_B),
                ("EBLUP", (r.eblup - f.gamma_p_printed).abs(), TOL_EBLUP),
                ("g1", (r.g1 / f.g1 - 1.0).abs(), TOL_G1_REL),
                ("MSE", (r.mse / f.mse_printed - 1.0).abs(), TOL_MSE_REL),
                ("EER", (r.eer - f.eer_printed).abs(), TOL_EER),
                ("Dif_rel", (r.dif_rel - f.dif_rel_printed).abs(), TOL_DIF),
            ];
            for (name, delta, tol) in checks {
                if !(delta <= tol) {
                    out.push(format!(
                        "{}: {name} off by {delta:.5} (tolerance {tol})",
                        f.country
                    ));
                }
            }
        }
        out
    }

    /// Side-by-side table of recomputed and printed values.
    pub fn render(&self, markdown: bool) -> String {
        let cols = [
            "country",
            "B",
            "B_printed",
            "eblup",
            "eblup_printed",
            "g1",
            "g1_printed",
            "mse",
            "mse_printed",
            "eer",
            "eer_printed",
            "dif_rel",
            "dif_rel_printed",
        ];
        let mut s = String::new();
        if markdown {
            s.push_str(&format!(
                "sigma2_u = {}, var(sigma2_u) = {:.2}\n\n",
                self.sigma2_u, self.var_sigma2_u
            ));
            s.push_str(&format!("| {} |\n", cols.join(" | ")));
            s.push_str(&format!("|---{}|\n", "|---:".repeat(cols.len() - 1)));
        } else {
            s.push_str(&cols.join(","));
            s.push('\n');
        }
        for (f, r) in self.fixture.iter().zip(&self.rows) {
            let vals = [
                format!("{:.4}", r.b),
                format!("{:.2}", f.b_printed),
                format!("{:.2}", r.eblup),
                format!("{:.2}", f.gamma_p_printed),
                format!("{:.4}", r.g1),
                format!("{:.4}", f.g1),
                format!("{:.4}", r.mse),
                format!("{:.4}", f.mse_printed),
                format!("{:.4}", r.eer),
                format!("{:.4}", f.eer_printed),
                format!("{:.4}", r.dif_rel),
                format!("{:.4}", f.dif_rel_printed),
            ];
            if markdown {
                s.push_str(&format!("| {} | {} |\n", f.country, vals.join(" | ")));
            } else {
                s.push_str(&format!("{},{}\n", f.country, vals.join(",")));
            }
        }
        s
    }
}
