//! Area-level files: the Fay-Herriot input schema, combined direct
//! estimates and fit output.
//!
//! Input columns: `domain_id,gamma_hat,sigma2_d` plus any number of `x_*`
//! covariates. An intercept is always added and must not be supplied.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::table::{num, Table};
use crate::error::{Error, Result};
use crate::fh::{AreaDesign, FhFit};
use crate::pv::AreaEstimate;

/// A validated area file.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaInput {
    pub domain_ids: Vec<String>,
    /// Names of the `x_*` columns, without the intercept.
    pub covariate_names: Vec<String>,
    pub design: AreaDesign,
}

pub fn ingest_area_csv(path: &Path) -> Result<AreaInput> {
    let text = std::fs::read_to_string(path)?;
    parse_area_csv(&path.display().to_string(), &text)
}

pub fn parse_area_csv(path: &str, text: &str) -> Result<AreaInput> {
    let t = Table::parse(path, text)?;
    let id = t.col("domain_id")?;
    let g = t.col("gamma_hat")?;
    let s = t.col("sigma2_d")?;
    let xs = t.prefixed("x_");
    if t.n_rows() == 0 {
        return Err(Error::Schema {
            path: path.into(),
            message: "no data rows".into(),
        });
    }
    let d = t.n_rows();
    let mut ids = Vec::with_capacity(d);
    let mut gamma = Vec::with_capacity(d);
    let mut sigma2 = Vec::with_capacity(d);
    let mut x = DMatrix::from_element(d, xs.len() + 1, 1.0);
    for r in 0..d {
        ids.push(t.str_at(r, id).to_string());
        gamma.push(t.f64_at(r, g)?);
        let v = t.f64_at(r, s)?;
        if v <= 0.0 {
            return Err(t.value_error(
                r,
                s,
                format!("sampling variance must be positive, got {v}"),
            ));
        }
        sigma2.push(v);
        for (k, &c) in xs.iter().enumerate() {
            x[(r, k + 1)] = t.f64_at(r, c)?;
        }
    }
    let design = AreaDesign::new(x, gamma, sigma2).map_err(|e| match e {
        Error::Rank(m) => Error::Rank(format!("{path}: {m}")),
        other => other,
    })?;
    Ok(AreaInput {
        domain_ids: ids,
        covariate_names: xs.iter().map(|&c| t.headers[c].clone()).collect(),
        design,
    })
}

pub fn write_area_csv(path: &Path, input: &AreaInput) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "domain_id".to_string(),
        "gamma_hat".into(),
        "sigma2_d".into(),
    ];
    header.extend(input.covariate_names.iter().cloned());
    w.write_record(&header)?;
    let des = &input.design;
    for (r, id) in input.domain_ids.iter().enumerate() {
        let mut rec = vec![id.clone(), num(des.gamma_hat[r]), num(des.sigma2[r])];
        for c in 1..des.x.ncols() {
            rec.push(num(des.x[(r, c)]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Combined direct estimates; readable back by [`ingest_area_csv`].
pub fn write_area_estimates(out: &mut impl Write, est: &[AreaEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "domain_id",
        "n_d",
        "gamma_hat",
        "sigma2_d",
        "within",
        "between",
        "l",
    ])?;
    for e in est {
        w.write_record([
            e.domain.to_string(),
            e.n_d.to_string(),
            num(e.gamma_hat),
            num(e.sigma2_d),
            num(e.within),
            num(e.between),
            e.l.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const FIT_COLUMNS: [&str; 13] = [
    "domain_id",
    "gamma_hat",
    "sigma2_d",
    "b",
    "synthetic",
    "eblup",
    "g1",
    "g2",
    "g3",
    "mse",
    "eer",
    "dif_rel",
    "u_hat",
];

/// Fit output: a `# key=value` header block followed by one row per area.
pub fn write_fit_csv(out: &mut impl Write, input: &AreaInput, fit: &FhFit) -> Result<()> {
    let beta: Vec<String> = fit.beta.iter().map(|b| num(*b)).collect();
    writeln!(out, "# method={}", fit.method)?;
    writeln!(out, "# sigma2_u={}", num(fit.sigma2_u))?;
    writeln!(out, "# var_sigma2_u={}", num(fit.var_sigma2_u))?;
    writeln!(out, "# beta={}", beta.join(";"))?;
    let mut names = vec!["intercept".to_string()];
    names.extend(input.covariate_names.iter().cloned());
    writeln!(out, "# beta_names={}", names.join(";"))?;
    let quality = fit.quality(&input.design)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIT_COLUMNS)?;
    let des = &input.design;
    for (r, id) in input.domain_ids.iter().enumerate() {
        w.write_record([
            id.clone(),
            num(des.gamma_hat[r]),
            num(des.sigma2[r]),
            num(fit.b[r]),
            num(fit.synthetic[r]),
            num(fit.eblup[r]),
            num(fit.g1[r]),
            num(fit.g2[r]),
            num(fit.g3[r]),
            num(fit.mse[r]),
            num(quality[r].0),
            num(quality[r].1),
            num(fit.u_hat[r]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Markdown rendering of a fit.
pub fn fit_markdown(input: &AreaInput, fit: &FhFit) -> Result<String> {
    let quality = fit.quality(&input.design)?;
    let mut s = format!(
        "method: {}, sigma2_u = {:.4}, var(sigma2_u) = {:.4}\n\n",
        fit.method, fit.sigma2_u, fit.var_sigma2_u
    );
    s.push_str(
        "| domain | gamma_hat | sigma2_d | B | EBLUP | g1 | g2 | g3 | MSE | EER % | Dif % |\n",
    );
    s.push_str("|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    let des = &input.design;
    for (r, id) in input.domain_ids.iter().enumerate() {
        s.push_str(&format!(
            "| {} | {:.2} | {:.4} | {:.4} | {:.2} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            id,
            des.gamma_hat[r],
            des.sigma2[r],
            fit.b[r],
            fit.eblup[r],
            fit.g1[r],
            fit.g2[r],
            fit.g3[r],
            fit.mse[r],
            quality[r].0,
            quality[r].1
        ));
    }
    Ok(s)
}
