//! Simulation config (TOML) and result tables.

use std::io::Write;
use std::path::Path;

use super::table::num;
use crate::error::{Error, Result};
use crate::sim::{CellResult, Estimator, SimGrid};

pub fn parse_sim_config(text: &str) -> Result<SimGrid> {
    let grid: SimGrid = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    grid.validate()?;
    Ok(grid)
}

pub fn read_sim_config(path: &Path) -> Result<SimGrid> {
    parse_sim_config(&std::fs::read_to_string(path)?)
}

pub fn sim_config_toml(grid: &SimGrid) -> Result<String> {
    toml::to_string(grid).map_err(|e| Error::Config(e.to_string()))
}

pub const TABLE_COLUMNS: [&str; 15] = [
    "missing_rate",
    "corr_level",
    "f_d",
    "f_n",
    "eerp_dir",
    "eerp_cal",
    "eerp_comp",
    "eerp_p",
    "sbr_p",
    "sbr_dir",
    "sbr_cal",
    "sbr_comp",
    "replicates",
    "failed",
    "skipped_domains",
];

/// One row per design cell; EERP and SBR in percent.
pub fn write_sim_table(out: &mut impl Write, rows: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_COLUMNS)?;
    for r in rows {
        let m = &r.metrics;
        let mut rec = vec![
            num(r.missing_rate),
            r.corr_level.to_string(),
            num(r.f_d),
            num(r.f_n),
        ];
        rec.extend(Estimator::ALL.iter().map(|&e| num(m.eerp_of(e))));
        rec.push(num(m.sbr_of(Estimator::Proposed)));
        rec.extend(Estimator::ALL[..3].iter().map(|&e| num(m.sbr_of(e))));
        rec.push(m.per_replicate.len().to_string());
        rec.push(m.failed.to_string());
        rec.push(m.skipped_domains().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format for plotting: one row per cell, replicate and estimator.
pub fn write_plot_csv(out: &mut impl Write, rows: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "missing_rate",
        "corr_level",
        "f_d",
        "f_n",
        "replicate",
        "estimator",
        "sbp",
        "eerp",
    ])?;
    for r in rows {
        for (k, rep) in r.metrics.per_replicate.iter().enumerate() {
            for e in Estimator::ALL {
                w.write_record([
                    num(r.missing_rate),
                    r.corr_level.to_string(),
                    num(r.f_d),
                    num(r.f_n),
                    k.to_string(),
                    e.name().to_string(),
                    num(rep.sbp[e as usize]),
                    num(rep.eerp[e as usize]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn sim_table_markdown(rows: &[CellResult]) -> String {
    let mut s = String::from(
        "| missing | corr | f_d | f_n | EERP Dir | EERP Cal | EERP Comp | EERP P | SBR P |\n\
         |---:|---|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in rows {
        let m = &r.metrics;
        s.push_str(&format!(
            "| {:.0}% | {} | {:.0}% | {:.0}% | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
            r.missing_rate * 100.0,
            r.corr_level,
            r.f_d * 100.0,
            r.f_n * 100.0,
            m.eerp_of(Estimator::Direct),
            m.eerp_of(Estimator::Calibration),
            m.eerp_of(Estimator::Composite),
            m.eerp_of(Estimator::Proposed),
            m.sbr_of(Estimator::Proposed),
        ));
    }
    s
}
