//! Command-line front end. `run` parses arguments, executes one
//! subcommand and returns the process exit code.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::curve::CorrelationCurve;
use crate::error::{Error, Result};
use crate::fit::{fit_g2_dataset, fit_g2_staged, fit_g2_values, FitResult, G2FitSpec, ModelFamily};
use crate::indist::{
    cw_integral_extract, cw_integral_extract_histograms, CwExtractOptions,
    IndistinguishabilityResult,
};
use crate::io::{file_sha256, write_json};
use crate::pipeline::{
    apply_corrections, base_fit_spec, cw_point_from_curves, cw_point_from_histograms,
    extrapolate_points, pulsed_from_curves, pulsed_from_histograms, run_pipeline, simulate,
    write_report,
};
use crate::sim::CoincidenceHistogram;

#[derive(Parser, Debug)]
#[command(
    name = "indist",
    version,
    about = "Photon correlations and indistinguishability extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExtractMethod {
    Pulsed,
    Cw,
    Extrapolate,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Model curves, and histograms when the config has an acquisition block.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fits a model family to a histogram (`tau_s,counts`) or curve CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// hbt_eq9, cw_eq7, interferometer_cw or interferometer_pulsed.
        #[arg(long)]
        family: String,
        /// Supplies fixed rates, S, optics and the detector response.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Free parameter with its start value, `name=value`.
        #[arg(long = "free", value_parser = parse_assignment)]
        free: Vec<(String, f64)>,
        /// Fixed parameter, `name=value`.
        #[arg(long = "fix", value_parser = parse_assignment)]
        fix: Vec<(String, f64)>,
        /// Side dips first, then the central feature (interferometer families).
        #[arg(long)]
        staged: bool,
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Indistinguishability from parallel/perpendicular data files.
    Extract {
        /// Parallel data; repeat once per S value for `extrapolate`.
        #[arg(long, required = true)]
        par: Vec<PathBuf>,
        #[arg(long, required = true)]
        perp: Vec<PathBuf>,
        #[arg(long, value_enum)]
        method: ExtractMethod,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// simulate → fit → extract for every configured S value.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        allow_nonconverged: bool,
    },
}

fn parse_assignment(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse '{v}' as a number"))?;
    Ok((k.trim().to_string(), v))
}

/// `# key=value` header lines shared by every output file.
fn provenance(
    config_hash: Option<&str>,
    seed: Option<u64>,
    regime: Option<&str>,
) -> Vec<(String, String)> {
    let mut p = vec![
        ("tool".to_string(), "indist".to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "config_sha256".to_string(),
            config_hash.unwrap_or("none").to_string(),
        ),
    ];
    if let Some(s) = seed {
        p.push(("seed".into(), s.to_string()));
    }
    if let Some(r) = regime {
        p.push(("run_regime".into(), r.into()));
    }
    p
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<(RunConfig, String)> {
    let (mut cfg, hash) = RunConfig::load(path)?;
    if let Some(seed) = seed {
        match cfg.acquisition.as_mut() {
            Some(a) => a.seed = seed,
            None => log::warn!("--seed ignored: the config has no acquisition block"),
        }
    }
    Ok((cfg, hash))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let (cfg, hash) = load_config(config, seed)?;
    let prov = provenance(
        Some(&hash),
        cfg.acquisition.map(|a| a.seed),
        Some(cfg.regime.as_str()),
    );
    create_dir(out)?;
    let points: Vec<Option<f64>> = match cfg.regime {
        crate::config::RunRegime::Pulsed => vec![None],
        _ => cfg.s_values().into_iter().map(Some).collect(),
    };
    let many = points.len() > 1;
    for (k, s) in points.into_iter().enumerate() {
        let sim = simulate(&cfg, s, k)?;
        let prefix = if many {
            format!("s{k}_")
        } else {
            String::new()
        };
        let mut prov = prov.clone();
        if let Some(s) = s {
            prov.push(("s".into(), format!("{s}")));
        }
        for (tag, c) in &sim.curves {
            c.write_csv(&out.join(format!("{prefix}curve_{tag}.csv")), &prov)?;
        }
        for (tag, h) in &sim.histograms {
            h.write_csv(&out.join(format!("{prefix}histogram_{tag}.csv")), &prov)?;
        }
    }
    Ok(())
}

/// Coincidence data as read from disk.
enum Data {
    Histogram(CoincidenceHistogram),
    Curve(CorrelationCurve),
}

fn first_header(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim())
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("")
        .to_string())
}

fn read_data(path: &Path) -> Result<Data> {
    if first_header(path)? == "tau_s,value" {
        CorrelationCurve::read_csv(path).map(Data::Curve)
    } else {
        CoincidenceHistogram::read_csv(path).map(Data::Histogram)
    }
}

#[derive(Serialize)]
struct FitRecord<'a> {
    provenance: std::collections::BTreeMap<String, String>,
    family: ModelFamily,
    fit: &'a FitResult,
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    data: &Path,
    family: &str,
    config: Option<&Path>,
    out: &Path,
    free: &[(String, f64)],
    fix: &[(String, f64)],
    staged: bool,
) -> Result<FitResult> {
    let family = ModelFamily::parse(family).ok_or_else(|| {
        Error::argument(format!(
            "unknown model family '{family}' (hbt_eq9, cw_eq7, interferometer_cw, interferometer_pulsed)"
        ))
    })?;
    let (mut spec, hash) = match config {
        Some(p) => {
            let (cfg, hash) = load_config(p, None)?;
            (default_spec(&cfg, family), Some(hash))
        }
        None => (G2FitSpec::new(family), None),
    };
    for (k, v) in fix {
        spec.free.remove(k);
        spec.fixed.insert(k.clone(), *v);
    }
    for (k, v) in free {
        spec.fixed.remove(k);
        spec.free.insert(k.clone(), *v);
    }
    let fit = match read_data(data)? {
        Data::Histogram(h) if staged => fit_g2_staged(&h, &spec)?,
        Data::Histogram(h) => fit_g2_dataset(&h, &spec)?,
        Data::Curve(c) => {
            if staged {
                return Err(Error::argument("--staged needs histogram data"));
            }
            if c.regime() != family.regime() {
                return Err(Error::argument(format!(
                    "{} expects {} data, got {}",
                    family.as_str(),
                    family.regime().as_str(),
                    c.regime().as_str()
                )));
            }
            fit_g2_values(c.tau(), c.values(), &spec)?
        }
    };
    let mut prov: std::collections::BTreeMap<String, String> =
        provenance(hash.as_deref(), None, None)
            .into_iter()
            .collect();
    prov.insert("data_sha256".into(), file_sha256(data)?);
    write_json(
        out,
        &FitRecord {
            provenance: prov,
            family,
            fit: &fit,
        },
    )?;
    Ok(fit)
}

/// Fit defaults from a config: rates, S and optics fixed; the quantities
/// a measurement determines (V, and M or S) free.
fn default_spec(cfg: &RunConfig, family: ModelFamily) -> G2FitSpec {
    let s = cfg.s_values().first().copied();
    match family {
        ModelFamily::HbtEq9 => base_fit_spec(cfg, family, None)
            .free("s", s.unwrap_or(1.0))
            .free("v", 1.0),
        ModelFamily::InterferometerPulsed => base_fit_spec(cfg, family, None)
            .free("v", 1.0)
            .free("m", 0.5),
        _ => base_fit_spec(cfg, family, s).free("v", 1.0).free("m", 0.5),
    }
}

#[derive(Serialize)]
struct ExtractRecord<'a> {
    provenance: std::collections::BTreeMap<String, String>,
    result: &'a IndistinguishabilityResult,
}

fn cmd_extract(
    par: &[PathBuf],
    perp: &[PathBuf],
    method: ExtractMethod,
    config: Option<&Path>,
    out: &Path,
    allow_nonconverged: bool,
) -> Result<IndistinguishabilityResult> {
    if par.len() != perp.len() {
        return Err(Error::argument(
            "--par and --perp must be given the same number of times",
        ));
    }
    let (cfg, hash) = match config {
        Some(p) => {
            let (c, h) = load_config(p, None)?;
            (Some(c), Some(h))
        }
        None => (None, None),
    };
    let single = || -> Result<(Data, Data)> {
        if par.len() != 1 {
            return Err(Error::argument(
                "this method takes exactly one --par/--perp pair",
            ));
        }
        Ok((read_data(&par[0])?, read_data(&perp[0])?))
    };
    let mut result = match method {
        ExtractMethod::Pulsed => {
            let (a, b) = single()?;
            match (cfg.as_ref(), a, b) {
                (Some(cfg), Data::Histogram(a), Data::Histogram(b)) => {
                    pulsed_from_histograms(cfg, &a, &b)?.0
                }
                (Some(cfg), Data::Curve(a), Data::Curve(b)) => pulsed_from_curves(cfg, &a, &b)?,
                (None, Data::Histogram(a), Data::Histogram(b)) => {
                    crate::indist::pulsed_extract(&a, &b, None, None)?
                }
                (None, Data::Curve(a), Data::Curve(b)) => {
                    crate::indist::pulsed_extract(&a, &b, None, None)?
                }
                _ => return Err(Error::argument("--par and --perp are of different kinds")),
            }
        }
        ExtractMethod::Cw => {
            let (a, b) = single()?;
            let window = cfg.as_ref().and_then(|c| c.extraction.window_s);
            let opts = CwExtractOptions {
                window,
                ..Default::default()
            };
            let edge = cfg
                .as_ref()
                .map_or(crate::sim::ASYMPTOTE_EDGE_FRACTION, |c| {
                    c.extraction.edge_fraction
                });
            let mut r = match (a, b) {
                (Data::Histogram(a), Data::Histogram(b)) => {
                    cw_integral_extract_histograms(&a, &b, edge, &opts)?
                }
                (Data::Curve(a), Data::Curve(b)) => cw_integral_extract(&a, &b, &opts)?,
                _ => return Err(Error::argument("--par and --perp are of different kinds")),
            };
            if let Some(cfg) = &cfg {
                apply_corrections(cfg, &mut r)?;
            }
            r
        }
        ExtractMethod::Extrapolate => {
            let cfg = cfg
                .clone()
                .ok_or_else(|| Error::argument("--config is required for method extrapolate"))?;
            let s_values = cfg.s_values();
            if s_values.len() != par.len() {
                return Err(Error::argument(format!(
                    "{} --par/--perp pairs for {} configured S values",
                    par.len(),
                    s_values.len()
                )));
            }
            let mut points = Vec::new();
            for ((s, a), b) in s_values.iter().zip(par).zip(perp) {
                let p = match (read_data(a)?, read_data(b)?) {
                    (Data::Histogram(a), Data::Histogram(b)) => {
                        cw_point_from_histograms(&cfg, *s, &a, &b)?
                    }
                    (Data::Curve(a), Data::Curve(b)) => cw_point_from_curves(&cfg, *s, &a, &b)?,
                    _ => return Err(Error::argument("--par and --perp are of different kinds")),
                };
                for f in &p.fits {
                    if !f.fit.converged && !allow_nonconverged {
                        return Err(Error::numerical(format!(
                            "fit '{}' did not converge",
                            f.name
                        )));
                    }
                }
                points.push(p);
            }
            let mut r = extrapolate_points(&cfg, &points)?;
            for p in &points {
                r.warnings
                    .extend(p.warnings.iter().map(|w| format!("S={}: {w}", p.s)));
                r.details.insert(format!("i_tilde_at_s={}", p.s), p.i_tilde);
            }
            apply_corrections(&cfg, &mut r)?;
            r
        }
    };
    let mut prov: std::collections::BTreeMap<String, String> =
        provenance(hash.as_deref(), None, None)
            .into_iter()
            .collect();
    for (k, (a, b)) in par.iter().zip(perp).enumerate() {
        prov.insert(format!("par{k}_sha256"), file_sha256(a)?);
        prov.insert(format!("perp{k}_sha256"), file_sha256(b)?);
    }
    result.provenance.extend(prov.clone());
    write_json(
        out,
        &ExtractRecord {
            provenance: prov,
            result: &result,
        },
    )?;
    Ok(result)
}

fn cmd_pipeline(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    allow_nonconverged: bool,
) -> Result<()> {
    let (cfg, hash) = load_config(config, seed)?;
    let report = run_pipeline(&cfg)?;
    let prov = provenance(
        Some(&hash),
        cfg.acquisition.map(|a| a.seed),
        Some(cfg.regime.as_str()),
    );
    write_report(&report, &cfg, out, &prov)?;
    if !report.converged() && !allow_nonconverged {
        return Err(Error::numerical(format!(
            "fits did not converge: {}",
            report.nonconverged.join(", ")
        )));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::Fit {
            data,
            family,
            config,
            out,
            free,
            fix,
            staged,
            allow_nonconverged,
        } => {
            let fit = cmd_fit(&data, &family, config.as_deref(), &out, &free, &fix, staged)?;
            if !fit.converged && !allow_nonconverged {
                return Err(Error::numerical(format!(
                    "fit did not converge after {} iterations (result written to {})",
                    fit.n_iter,
                    out.display()
                )));
            }
            Ok(())
        }
        Command::Extract {
            par,
            perp,
            method,
            config,
            out,
            allow_nonconverged,
        } => cmd_extract(
            &par,
            &perp,
            method,
            config.as_deref(),
            &out,
            allow_nonconverged,
        )
        .map(|_| ()),
        Command::Pipeline {
            config,
            out,
            seed,
            allow_nonconverged,
        } => cmd_pipeline(&config, &out, seed, allow_nonconverged),
    }
}

/// Runs the command line and returns the exit code: 0 success,
/// 2 validation, 3 I/O, 4 numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}
