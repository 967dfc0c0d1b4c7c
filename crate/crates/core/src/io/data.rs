//! Person-level files: responses, item banks, plausible values, and the
//! sample/domain inputs of the design-based estimators.
//!
//! Schemas:
//! - responses: `person_id,domain_id`, optional `z_*` covariates, then one
//!   column per item holding `1`, `0`, or `NA`/empty for missing
//! - bank: `item,a,b,c` with `# gamma=` and `# sigma2=` comment lines for the
//!   latent regression
//! - plausible values: `person_id,domain_id,weight,pv_1..pv_L`
//! - sample: `domain_id,y` and auxiliary columns `z_*`
//! - domains: `domain_id,population_size`, the population totals of the same
//!   `z_*` columns, and area covariates `x_*`

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::table::{num, Table};
use crate::error::{Error, Result};
use crate::irt::{
    ItemBank, ItemParams, LatentRegression, PlausibleValueSet, Response, ResponseMatrix,
};
use crate::survey::{self, SampleDomain};

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFile {
    pub person_ids: Vec<String>,
    pub item_names: Vec<String>,
    pub covariate_names: Vec<String>,
    /// `N × k`, `None` when the file has no `z_*` columns.
    pub covariates: Option<DMatrix<f64>>,
    pub responses: ResponseMatrix,
}

pub fn read_responses(path: &Path) -> Result<ResponseFile> {
    let t = Table::read(path)?;
    let pid = t.col("person_id")?;
    let did = t.col("domain_id")?;
    let zs = t.prefixed("z_");
    let items: Vec<usize> = (0..t.headers.len())
        .filter(|c| *c != pid && *c != did && !zs.contains(c))
        .collect();
    if items.is_empty() {
        return Err(Error::Schema {
            path: t.path.clone(),
            message: "no item columns".into(),
        });
    }
    let n = t.n_rows();
    let mut cells = Vec::with_capacity(n * items.len());
    let mut domain_of = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut cov = DMatrix::zeros(n, zs.len());
    for r in 0..n {
        ids.push(t.str_at(r, pid).to_string());
        domain_of.push(t.usize_at(r, did)?);
        for (k, &c) in zs.iter().enumerate() {
            cov[(r, k)] = t.f64_at(r, c)?;
        }
        for &c in &items {
            cells.push(match t.str_at(r, c) {
                "1" => Response::Correct,
                "0" => Response::Incorrect,
                "" | "NA" | "na" | "." => Response::Missing,
                other => return Err(t.value_error(r, c, format!("`{other}` is not 0, 1 or NA"))),
            });
        }
    }
    Ok(ResponseFile {
        person_ids: ids,
        item_names: items.iter().map(|&c| t.headers[c].clone()).collect(),
        covariate_names: zs.iter().map(|&c| t.headers[c].clone()).collect(),
        covariates: if zs.is_empty() { None } else { Some(cov) },
        responses: ResponseMatrix::new(items.len(), cells, domain_of)?,
    })
}

pub fn write_responses(path: &Path, f: &ResponseFile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["person_id".to_string(), "domain_id".into()];
    header.extend(f.covariate_names.iter().cloned());
    header.extend(f.item_names.iter().cloned());
    w.write_record(&header)?;
    for j in 0..f.responses.n_persons() {
        let mut rec = vec![
            f.person_ids[j].clone(),
            f.responses.domain_of()[j].to_string(),
        ];
        if let Some(c) = &f.covariates {
            rec.extend((0..c.ncols()).map(|k| num(c[(j, k)])));
        }
        rec.extend(f.responses.person(j).iter().map(|r| match r {
            Response::Correct => "1".to_string(),
            Response::Incorrect => "0".to_string(),
            Response::Missing => "NA".to_string(),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bank(
    out: &mut impl Write,
    bank: &ItemBank,
    names: &[String],
    reg: &LatentRegression,
) -> Result<()> {
    let gamma: Vec<String> = reg.gamma.iter().map(|g| num(*g)).collect();
    writeln!(out, "# gamma={}", gamma.join(";"))?;
    writeln!(out, "# sigma2={}", num(reg.sigma2))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item", "a", "b", "c"])?;
    for (it, name) in bank.items.iter().zip(names) {
        w.write_record([name.clone(), num(it.a), num(it.b), num(it.c)])?;
    }
    w.flush()?;
    Ok(())
}

/// Bank, item names, and the latent regression when the file carries one.
pub fn read_bank(path: &Path) -> Result<(ItemBank, Vec<String>, Option<LatentRegression>)> {
    let text = std::fs::read_to_string(path)?;
    let p = path.display().to_string();
    let t = Table::parse(&p, &text)?;
    let (ci, ca, cb, cc) = (t.col("item")?, t.col("a")?, t.col("b")?, t.col("c")?);
    let mut items = Vec::with_capacity(t.n_rows());
    let mut names = Vec::with_capacity(t.n_rows());
    for r in 0..t.n_rows() {
        names.push(t.str_at(r, ci).to_string());
        let it = ItemParams::new(t.f64_at(r, ca)?, t.f64_at(r, cb)?, t.f64_at(r, cc)?)
            .map_err(|e| t.value_error(r, ca, e.to_string()))?;
        items.push(it);
    }
    let comments: BTreeMap<String, String> = Table::comments(&text).into_iter().collect();
    let reg = match (comments.get("gamma"), comments.get("sigma2")) {
        (Some(g), Some(s)) => {
            let parse = |v: &str| {
                v.trim().parse::<f64>().map_err(|_| Error::Schema {
                    path: p.clone(),
                    message: format!("bad number `{v}` in header"),
                })
            };
            let gamma = g.split(';').map(parse).collect::<Result<Vec<_>>>()?;
            Some(LatentRegression::new(gamma, parse(s)?)?)
        }
        _ => None,
    };
    Ok((ItemBank::new(items)?, names, reg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvFile {
    pub person_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub pvs: PlausibleValueSet,
}

pub fn write_pvs(out: &mut impl Write, f: &PvFile) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["person_id".to_string(), "domain_id".into(), "weight".into()];
    header.extend((1..=f.pvs.l()).map(|k| format!("pv_{k}")));
    w.write_record(&header)?;
    for j in 0..f.pvs.n_persons() {
        let mut rec = vec![
            f.person_ids[j].clone(),
            f.pvs.domain_of()[j].to_string(),
            num(f.weights[j]),
        ];
        rec.extend(f.pvs.person(j).iter().map(|v| num(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The `weight` column is optional and defaults to 1.
pub fn read_pvs(path: &Path) -> Result<PvFile> {
    let t = Table::read(path)?;
    let pid = t.col("person_id")?;
    let did = t.col("domain_id")?;
    let wc = t.find("weight");
    let pv_cols = t.prefixed("pv_");
    let n = t.n_rows();
    let mut draws = Vec::with_capacity(n * pv_cols.len());
    let mut domain_of = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for r in 0..n {
        ids.push(t.str_at(r, pid).to_string());
        domain_of.push(t.usize_at(r, did)?);
        let w = match wc {
            Some(c) => {
                let w = t.f64_at(r, c)?;
                if w <= 0.0 {
                    return Err(t.value_error(r, c, "weight must be positive"));
                }
                w
            }
            None => 1.0,
        };
        weights.push(w);
        for &c in &pv_cols {
            draws.push(t.f64_at(r, c)?);
        }
    }
    Ok(PvFile {
        person_ids: ids,
        weights,
        pvs: PlausibleValueSet::new(draws, pv_cols.len(), domain_of)?,
    })
}

/// Per-domain HT, GREG and composite estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignEstimates {
    pub domain_id: String,
    pub ht: (f64, f64),
    pub cal: (f64, f64),
    pub comp: (f64, f64),
}

/// Read a sample file and a domain file and compute the three design-based
/// estimators for every domain in the domain file.
pub fn estimate_from_files(sample: &Path, domains: &Path) -> Result<Vec<DesignEstimates>> {
    let s = Table::read(sample)?;
    let d = Table::read(domains)?;
    let s_id = s.col("domain_id")?;
    let s_y = s.col("y")?;
    let zs = s.prefixed("z_");
    let d_id = d.col("domain_id")?;
    let d_n = d.col("population_size")?;
    let d_z: Vec<usize> = zs
        .iter()
        .map(|&c| d.col(&s.headers[c]))
        .collect::<Result<_>>()?;
    let d_x = d.prefixed("x_");

    let mut by_domain: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in 0..s.n_rows() {
        by_domain
            .entry(s.str_at(r, s_id).to_string())
            .or_default()
            .push(r);
    }
    let k = d.n_rows();
    let mut doms = Vec::with_capacity(k);
    for r in 0..k {
        let id = d.str_at(r, d_id).to_string();
        let rows = by_domain.get(&id).cloned().unwrap_or_default();
        if rows.is_empty() {
            return Err(Error::EmptyDomain { domain: r });
        }
        let values = rows
            .iter()
            .map(|&j| s.f64_at(j, s_y))
            .collect::<Result<Vec<_>>>()?;
        let mut aux = DMatrix::zeros(rows.len(), zs.len());
        for (a, &j) in rows.iter().enumerate() {
            for (b, &c) in zs.iter().enumerate() {
                aux[(a, b)] = s.f64_at(j, c)?;
            }
        }
        let totals = d_z
            .iter()
            .map(|&c| d.f64_at(r, c))
            .collect::<Result<Vec<_>>>()?;
        let size = d.f64_at(r, d_n)?;
        doms.push((id, SampleDomain::srs(r, values, size, aux, totals)?));
    }
    let mut x = DMatrix::from_element(k, d_x.len() + 1, 1.0);
    for r in 0..k {
        for (c, &col) in d_x.iter().enumerate() {
            x[(r, c + 1)] = d.f64_at(r, col)?;
        }
    }
    let ht = doms
        .iter()
        .map(|(_, s)| survey::ht_mean(s))
        .collect::<Result<Vec<_>>>()?;
    let direct: Vec<f64> = ht.iter().map(|h| h.0).collect();
    let synthetic = survey::regression_synthetic(&x, &direct)?;
    let n_bar = doms.iter().map(|(_, s)| s.n() as f64).sum::<f64>() / k as f64;
    doms.iter()
        .zip(ht)
        .zip(synthetic)
        .map(|(((id, s), h), syn)| {
            Ok(DesignEstimates {
                domain_id: id.clone(),
                ht: h,
                cal: survey::greg_mean(s)?,
                comp: survey::composite_mean(s, syn, n_bar),
            })
        })
        .collect()
}

pub fn write_design_estimates(out: &mut impl Write, est: &[DesignEstimates]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "domain_id",
        "ht",
        "ht_var",
        "cal",
        "cal_var",
        "comp",
        "comp_var",
    ])?;
    for e in est {
        w.write_record([
            e.domain_id.clone(),
            num(e.ht.0),
            num(e.ht.1),
            num(e.cal.0),
            num(e.cal.1),
            num(e.comp.0),
            num(e.comp.1),
        ])?;
    }
    w.flush()?;
    Ok(())
}
