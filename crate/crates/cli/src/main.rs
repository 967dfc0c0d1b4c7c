//! `pvsae`: calibrate, impute, combine, fit and simulate from the command line.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for
//! numerical failures (non-convergence, singular systems).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pvsae_core::fh::{self, VarianceMethod};
use pvsae_core::io::{self as pio, data, simout, RunManifest};
use pvsae_core::irt::{self, EmConfig, GuessingMode, LatentRegression, McmcConfig};
use pvsae_core::pv::{self, SrsWithinDomain};
use pvsae_core::{sim, Error};

const DEFAULT_SEED: u64 = 2015;

#[derive(Parser)]
#[command(name = "pvsae", version, about = "Small-area estimation from plausible values")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate item parameters and the latent regression by EM.
    Calibrate(CalibrateArgs),
    /// Draw plausible values for every person.
    Pv(PvArgs),
    /// Combine plausible values into direct domain estimates.
    Combine(CombineArgs),
    /// Fit the Fay-Herriot model to an area file.
    FitFh(FitArgs),
    /// Horvitz-Thompson, GREG and composite estimates from a sample.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo design from a TOML config.
    Simulate(SimulateArgs),
    /// Recompute the bundled PISA 2015 country table.
    ReplayPisa(ReplayArgs),
    /// Render a fit or simulation CSV as a Markdown table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Csv,
    Md,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    PrasadRao,
    Ml,
    Reml,
}

impl From<Method> for VarianceMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::PrasadRao => VarianceMethod::PrasadRao,
            Method::Ml => VarianceMethod::Ml,
            Method::Reml => VarianceMethod::Reml,
        }
    }
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; falls back to PVSAE_SEED, then 2015.
    #[arg(long, env = "PVSAE_SEED")]
    seed: Option<u64>,
}

impl SeedArg {
    fn value(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Response file: person_id, domain_id, optional z_* covariates, items.
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Estimate guessing parameters with a Beta(5, 17) penalty.
    #[arg(long)]
    guessing: bool,
}

#[derive(Args)]
struct PvArgs {
    #[arg(long)]
    responses: PathBuf,
    /// Bank written by `calibrate`.
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Plausible values per person.
    #[arg(long, default_value_t = 5)]
    l: usize,
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    #[arg(long, default_value_t = 50)]
    thin: usize,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct CombineArgs {
    /// Plausible-value file: person_id, domain_id, weight, pv_1..pv_L.
    #[arg(long)]
    pv: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Apply the finite population correction with f = n / Σw.
    #[arg(long)]
    fpc: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Area file: domain_id, gamma_hat, sigma2_d, x_*.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Reml)]
    method: Method,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct EstimateArgs {
    /// Sample file: domain_id, y, z_*.
    #[arg(long)]
    sample: PathBuf,
    /// Domain file: domain_id, population_size, z_* totals, x_*.
    #[arg(long)]
    domains: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-replicate long-format results here.
    #[arg(long)]
    emit_plots: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long, env = "PVSAE_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Md)]
    format: Format,
}

#[derive(Args)]
struct ReportArgs {
    /// A `fit-fh` or `simulate` CSV.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Pv(a) => plausible_values(a),
        Command::Combine(a) => combine(a),
        Command::FitFh(a) => fit_fh(a),
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::ReplayPisa(a) => replay(a),
        Command::Report(a) => report(a),
    }
}

/// Writer for `--out`, or stdout.
fn sink(out: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn config_bytes(parts: &[&str]) -> Vec<u8> {
    parts.join("\n").into_bytes()
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Write the sidecar manifest when output went to a file.
fn record(
    out: &Option<PathBuf>,
    command: &str,
    seed: Option<u64>,
    config: &[u8],
    inputs: &[&Path],
    extra_outputs: &[&Path],
) -> CliResult {
    if let Some(p) = out {
        let mut m = RunManifest::start(command, seed, config);
        m.inputs = inputs.iter().map(|p| path_str(p)).collect();
        m.outputs.push(path_str(p));
        m.outputs.extend(extra_outputs.iter().map(|p| path_str(p)));
        m.finish()?;
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> CliResult {
    let f = data::read_responses(&a.responses)?;
    let cfg = EmConfig {
        max_iter: a.max_iter,
        tol: a.tol,
        guessing: if a.guessing {
            GuessingMode::penalized()
        } else {
            GuessingMode::Fixed
        },
        ..EmConfig::default()
    };
    let fit = irt::calibrate_em(&f.responses, f.covariates.as_ref(), &cfg)?;
    if !fit.converged {
        eprintln!("warning: EM stopped at the iteration cap ({})", fit.iterations);
    }
    let mut w = sink(&a.out)?;
    data::write_bank(&mut w, &fit.bank, &f.item_names, &fit.regression)?;
    w.flush()?;
    drop(w);
    let cfg_text = format!("max_iter={} tol={} guessing={}", a.max_iter, a.tol, a.guessing);
    record(&a.out, "calibrate", None, cfg_text.as_bytes(), &[&a.responses], &[])
}

fn plausible_values(a: PvArgs) -> CliResult {
    let f = data::read_responses(&a.responses)?;
    let (bank, _, reg) = data::read_bank(&a.bank)?;
    let reg = reg.unwrap_or_else(LatentRegression::standard);
    let k = f.covariates.as_ref().map_or(0, |c| c.ncols());
    if reg.gamma.len() != k + 1 {
        return Err(Error::InvalidInput(format!(
            "latent regression has {} coefficients but the response file has {k} covariates",
            reg.gamma.len()
        ))
        .into());
    }
    let cfg = McmcConfig {
        burn_in: a.burn_in,
        thin: a.thin,
        ..McmcConfig::default()
    };
    let seed = a.seed.value();
    let pvs = irt::draw_plausible_values(&f.responses, &bank, &reg, f.covariates.as_ref(), a.l, &cfg, seed)?;
    let file = data::PvFile {
        person_ids: f.person_ids,
        weights: vec![1.0; pvs.n_persons()],
        pvs,
    };
    let mut w = sink(&a.out)?;
    data::write_pvs(&mut w, &file)?;
    w.flush()?;
    drop(w);
    let cfg_text = format!("l={} burn_in={} thin={} seed={seed}", a.l, a.burn_in, a.thin);
    record(&a.out, "pv", Some(seed), cfg_text.as_bytes(), &[&a.responses, &a.bank], &[])
}

fn combine(a: CombineArgs) -> CliResult {
    let f = data::read_pvs(&a.pv)?;
    let est = pv::combine_domains(&f.pvs, &f.weights, &SrsWithinDomain { fpc: a.fpc })?;
    let mut w = sink(&a.out)?;
    pio::area::write_area_estimates(&mut w, &est)?;
    w.flush()?;
    drop(w);
    record(&a.out, "combine", None, config_bytes(&[&format!("fpc={}", a.fpc)]).as_slice(), &[&a.pv], &[])
}

fn fit_fh(a: FitArgs) -> CliResult {
    let input = pio::ingest_area_csv(&a.input)?;
    let method: VarianceMethod = a.method.into();
    let fit = fh::fit(&input.design, method)?;
    let mut w = sink(&a.out)?;
    match a.format {
        Format::Csv => pio::area::write_fit_csv(&mut w, &input, &fit)?,
        Format::Md => w.write_all(pio::area::fit_markdown(&input, &fit)?.as_bytes())?,
    }
    w.flush()?;
    drop(w);
    let cfg_text = format!("method={method}");
    record(&a.out, "fit-fh", None, cfg_text.as_bytes(), &[&a.input], &[])
}

fn estimate(a: EstimateArgs) -> CliResult {
    let est = data::estimate_from_files(&a.sample, &a.domains)?;
    let mut w = sink(&a.out)?;
    data::write_design_estimates(&mut w, &est)?;
    w.flush()?;
    drop(w);
    record(&a.out, "estimate", None, b"", &[&a.sample, &a.domains], &[])
}

fn simulate(a: SimulateArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.config)?;
    let mut grid = simout::parse_sim_config(&text)?;
    if let Some(s) = a.seed {
        grid.seed = s;
    }
    let rows = sim::run_grid(&grid)?;
    let mut w = sink(&a.out)?;
    match a.format {
        Format::Csv => simout::write_sim_table(&mut w, &rows)?,
        Format::Md => w.write_all(simout::sim_table_markdown(&rows).as_bytes())?,
    }
    w.flush()?;
    drop(w);
    if let Some(p) = &a.emit_plots {
        let mut pw = BufWriter::new(File::create(p)?);
        simout::write_plot_csv(&mut pw, &rows)?;
        pw.flush()?;
    }
    // the effective configuration, seed included, is what gets hashed
    let effective = simout::sim_config_toml(&grid)?;
    let extra: Vec<&Path> = a.emit_plots.iter().map(PathBuf::as_path).collect();
    record(&a.out, "simulate", Some(grid.seed), effective.as_bytes(), &[&a.config], &extra)
}

fn replay(a: ReplayArgs) -> CliResult {
    let rep = pio::replay_pisa_fixture()?;
    let mut w = sink(&a.out)?;
    w.write_all(rep.render(a.format == Format::Md).as_bytes())?;
    let bad = rep.violations();
    if a.format == Format::Md {
        if bad.is_empty() {
            writeln!(w, "\nall {} countries within replay tolerances", rep.rows.len())?;
        } else {
            writeln!(w, "\n{} values outside tolerance:", bad.len())?;
            for b in &bad {
                writeln!(w, "- {b}")?;
            }
        }
    }
    w.flush()?;
    drop(w);
    record(&a.out, "replay-pisa", None, pio::pisa::FIXTURE_CSV.as_bytes(), &[], &[])
}

fn report(a: ReportArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.input)?;
    let header = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let heads: Vec<String> = rdr
        .headers()
        .map_err(Error::from)?
        .iter()
        .map(str::to_string)
        .collect();
    let wanted: &[&str] = if header.starts_with("missing_rate") {
        &["missing_rate", "corr_level", "f_d", "f_n", "eerp_dir", "eerp_cal", "eerp_comp", "eerp_p", "sbr_p"]
    } else if heads.iter().any(|h| h == "eblup") {
        &["domain_id", "gamma_hat", "sigma2_d", "b", "eblup", "g1", "g2", "g3", "mse", "eer", "dif_rel"]
    } else {
        return Err(Error::Schema {
            path: path_str(&a.input),
            message: "not a fit-fh or simulate output".into(),
        }
        .into());
    };
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            heads.iter().position(|h| h == w).ok_or_else(|| Error::Schema {
                path: path_str(&a.input),
                message: format!("missing column `{w}`"),
            })
        })
        .collect::<Result<_, _>>()?;
    let mut s = String::new();
    for line in text.lines().filter(|l| l.starts_with('#')) {
        s.push_str(&format!("{}\n", line.trim_start_matches('#').trim()));
    }
    if !s.is_empty() {
        s.push('\n');
    }
    s.push_str(&format!("| {} |\n", wanted.join(" | ")));
    s.push_str(&format!("|{}\n", "---|".repeat(wanted.len())));
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from)?;
        let cells: Vec<String> = idx
            .iter()
            .map(|&i| {
                let v = rec.get(i).unwrap_or("");
                match v.parse::<f64>() {
                    Ok(x) if v.contains('.') || v.contains('e') => format!("{x:.4}"),
                    _ => v.to_string(),
                }
            })
            .collect();
        s.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    let mut w = sink(&a.out)?;
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}
