//! Command-line surface: read a source spec, run solvers and bounds, emit
//! plot-ready CSV or JSON.

mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rdcache::{
    DistortionTuple, GridOpts, SolverOpts, SourceLibrary, SourceSpec, TwoUserInstance,
};

use output::{OutputFormat, Table};

#[derive(Parser, Debug)]
#[command(
    name = "rdcache",
    version,
    about = "Rate-distortion-cache tradeoff curves and bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonOut {
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Seed for the random restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random restarts on top of the structured starts.
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    /// Cap on the auxiliary alphabet.
    #[arg(long)]
    aux_cap: Option<usize>,
}

impl SolverArgs {
    fn opts(&self) -> SolverOpts {
        SolverOpts {
            seed: self.seed,
            restarts: self.restarts,
            aux_cap: self.aux_cap,
            ..Default::default()
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Marginal rate-distortion curve of one source: rows (D, R).
    Rd {
        /// Source spec JSON path.
        #[arg(long)]
        spec: PathBuf,
        /// Which source (1-based).
        #[arg(long, default_value_t = 1)]
        source: usize,
        /// Distortion values, comma separated.
        #[arg(long = "D", value_delimiter = ',', required = true)]
        distortions: Vec<f64>,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Cache sweep of the tradeoff with all bounds:
    /// rows (C, R_solver, R_genie, R_superuser, R_supergenie, R_envelope,
    /// witness_aux_size, converged).
    Rdc {
        #[arg(long)]
        spec: PathBuf,
        /// Distortion target per source, comma separated.
        #[arg(long = "D", value_delimiter = ',', required = true)]
        distortions: Vec<f64>,
        /// Cache grid start:stop:steps.
        #[arg(long = "C-grid")]
        c_grid: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Common-information report: zero-distortion common part, component
    /// map, and closed-form values when the spec matches a known template.
    CommonInfo {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        out: CommonOut,
    },
    /// DSBS bound curve at zero distortion: rows (C, lower, upper, exact).
    Dsbs {
        #[arg(long)]
        rho: f64,
        #[arg(long = "C-grid")]
        c_grid: String,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Bivariate Gaussian tradeoff sweep:
    /// rows (D, C, region, rate_or_upper, superuser_lower).
    Gaussian {
        #[arg(long)]
        rho: f64,
        /// Distortion sweep values.
        #[arg(long = "D", value_delimiter = ',', required = true)]
        distortions: Vec<f64>,
        /// Cache capacities.
        #[arg(long = "C", value_delimiter = ',', required = true)]
        caches: Vec<f64>,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Two-user bounds over a cache grid:
    /// rows (C, lower_genie, lower_avg, upper, and DSBS closed forms when
    /// the instance matches).
    TwoUser {
        #[arg(long)]
        spec: PathBuf,
        /// User-1 demand set (1-based), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        demands1: Vec<usize>,
        /// User-2 demand set (1-based), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        demands2: Vec<usize>,
        /// User-1 distortion target per demand.
        #[arg(long = "D", value_delimiter = ',', required = true)]
        distortions: Vec<f64>,
        /// User-2 distortion target per demand (defaults to lossless).
        #[arg(long = "Delta", value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        /// Demand distribution for the average bound (defaults to uniform).
        #[arg(long = "p-i", value_delimiter = ',')]
        p_i: Option<Vec<f64>>,
        #[arg(long = "C-grid")]
        c_grid: String,
        /// Simplex grid resolution.
        #[arg(long, default_value_t = 8)]
        grid_steps: usize,
        #[command(flatten)]
        out: CommonOut,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.code())
        }
    }
}

#[derive(Debug)]
struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError {
            message: msg.into(),
            code: 2,
        }
    }
    fn solver(msg: impl Into<String>) -> Self {
        CliError {
            message: msg.into(),
            code: 3,
        }
    }
    fn code(&self) -> u8 {
        self.code
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

fn load_library(path: &PathBuf) -> Result<(SourceLibrary, SourceSpec), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {}", path.display(), e)))?;
    let spec: SourceSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("bad source spec: {}", e)))?;
    let lib = rdcache::validate_library(&spec)
        .map_err(|e| CliError::config(format!("invalid source: {}", e)))?;
    Ok((lib, spec))
}

/// Distortion transforms declared in the spec file, identity when absent.
fn transforms_of(
    spec: &SourceSpec,
    num_sources: usize,
) -> Result<Vec<rdcache::DistortionTransform>, CliError> {
    match &spec.f {
        None => Ok(vec![rdcache::DistortionTransform::Identity; num_sources]),
        Some(list) => {
            if list.len() != num_sources {
                return Err(CliError::config(format!(
                    "{} transforms for {} sources",
                    list.len(),
                    num_sources
                )));
            }
            list.iter()
                .map(|t| t.build().map_err(|e| CliError::config(e.to_string())))
                .collect()
        }
    }
}

/// Apply the spec transforms: returns the transformed library plus the
/// mapped distortion targets (generalized-mean criteria reduce to the
/// ordinary problem on the transformed instance).
fn apply_transforms(
    lib: &SourceLibrary,
    spec: &SourceSpec,
    targets: &[f64],
) -> Result<(SourceLibrary, Vec<f64>), CliError> {
    let transforms = transforms_of(spec, lib.num_sources())?;
    if transforms
        .iter()
        .all(|t| matches!(t, rdcache::DistortionTransform::Identity))
    {
        return Ok((lib.clone(), targets.to_vec()));
    }
    let (tlib, shifts) = rdcache::transform_library(lib, &transforms)
        .map_err(|e| CliError::config(e.to_string()))?;
    let mut mapped = Vec::with_capacity(targets.len());
    for ((f, &d), &shift) in transforms.iter().zip(targets.iter()).zip(shifts.iter()) {
        mapped.push(
            f.apply(d).map_err(|e| CliError::config(e.to_string()))? - shift,
        );
    }
    Ok((tlib, mapped))
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::config(format!(
            "grid {:?} must be start:stop:steps",
            s
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::config("bad grid start"))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::config("bad grid stop"))?;
    let steps: usize = parts[2]
        .parse()
        .map_err(|_| CliError::config("bad grid steps"))?;
    if steps < 1 || stop < start {
        return Err(CliError::config("grid needs steps >= 1 and stop >= start"));
    }
    Ok((0..=steps)
        .map(|k| {
            if steps == 0 {
                start
            } else {
                start + (stop - start) * k as f64 / steps as f64
            }
        })
        .collect())
}

fn one_based(demands: &[usize], len: usize) -> Result<Vec<usize>, CliError> {
    demands
        .iter()
        .map(|&d| {
            if d == 0 || d > len {
                Err(CliError::config(format!(
                    "source index {} out of 1..={}",
                    d, len
                )))
            } else {
                Ok(d - 1)
            }
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Rd {
            spec,
            source,
            distortions,
            out,
        } => {
            let (lib, sp) = load_library(&spec)?;
            let idx = one_based(&[source], lib.num_sources())?[0];
            let transforms = transforms_of(&sp, lib.num_sources())?;
            let f = &transforms[idx];
            let (dmat, shift) = rdcache::transform_distortion_matrix(&lib.distortion[idx], f)
                .map_err(|e| CliError::config(e.to_string()))?;
            let pmf = rdcache::marginal(&lib, &[idx])
                .map_err(|e| CliError::config(e.to_string()))?;
            let mut table = Table::new(
                "rd",
                &format!("spec={} source={}", spec.display(), source),
                0,
                vec!["D", "R", "converged"],
            );
            for &d in &distortions {
                let target = f
                    .apply(d)
                    .map_err(|e| CliError::config(e.to_string()))?
                    - shift;
                let r = rdcache::rd_function(&pmf, &dmat, target)
                    .map_err(|e| CliError::solver(e.to_string()))?;
                table.push(vec![
                    output::num(d),
                    output::num(r.rate),
                    r.converged.to_string(),
                ]);
            }
            table.write(&out.format, out.out.as_deref())
        }
        Command::Rdc {
            spec,
            distortions,
            c_grid,
            solver,
            out,
        } => {
            let (lib0, sp) = load_library(&spec)?;
            if distortions.len() != lib0.num_sources() {
                return Err(CliError::config(format!(
                    "{} distortion targets for {} sources",
                    distortions.len(),
                    lib0.num_sources()
                )));
            }
            let (lib, mapped) = apply_transforms(&lib0, &sp, &distortions)?;
            let grid = parse_grid(&c_grid)?;
            let targets = DistortionTuple(mapped);
            let opts = solver.opts();
            let curve = rdcache::rdc_curve(&lib, &targets, &grid, &opts)
                .map_err(|e| CliError::solver(e.to_string()))?;
            let mut table = Table::new(
                "rdc",
                &format!(
                    "spec={} D={:?} C-grid={} restarts={}",
                    spec.display(),
                    distortions,
                    c_grid,
                    solver.restarts
                ),
                solver.seed,
                vec![
                    "C",
                    "R_solver",
                    "R_genie",
                    "R_superuser",
                    "R_supergenie",
                    "R_envelope",
                    "witness_aux_size",
                    "converged",
                ],
            );
            for p in &curve.points {
                table.push(vec![
                    output::num(p.cache),
                    output::num(p.rate_raw),
                    output::num(p.genie),
                    output::num(p.superuser),
                    output::num(p.super_genie),
                    output::num(p.rate_envelope),
                    p.witness_aux_size.to_string(),
                    p.converged.to_string(),
                ]);
            }
            if curve.monotonicity_warning {
                eprintln!("warning: raw solver output violated monotonicity by more than 1e-4");
            }
            table.write(&out.format, out.out.as_deref())
        }
        Command::CommonInfo { spec, out } => {
            let (lib, _) = load_library(&spec)?;
            let gk = rdcache::gacs_korner_zero(&lib);
            let mut table = Table::new(
                "common-info",
                &format!("spec={}", spec.display()),
                0,
                vec!["quantity", "value", "detail"],
            );
            table.push(vec![
                "gacs_korner_zero".into(),
                output::num(gk.value),
                format!("{} components", gk.witness.num_components),
            ]);
            for l in 0..lib.num_sources() {
                let map: Vec<String> = (0..lib.alphabet_sizes[l])
                    .map(|x| gk.witness.component_of(l, x).to_string())
                    .collect();
                table.push(vec![
                    format!("component_map_source_{}", l + 1),
                    String::new(),
                    map.join(" "),
                ]);
            }
            if let Some(rho) = rdcache::dsbs_parameter(&lib) {
                let w = rdcache::wyner_ci_dsbs(rho)
                    .map_err(|e| CliError::solver(e.to_string()))?;
                table.push(vec![
                    "wyner_ci_dsbs".into(),
                    output::num(w),
                    format!("rho={}", output::num(rho)),
                ]);
            }
            table.write(&out.format, out.out.as_deref())
        }
        Command::Dsbs { rho, c_grid, out } => {
            let grid = parse_grid(&c_grid)?;
            let mut table = Table::new(
                "dsbs",
                &format!("rho={} C-grid={}", rho, c_grid),
                0,
                vec!["C", "lower", "upper", "exact"],
            );
            for &c in &grid {
                let b = rdcache::dsbs_rdc_bounds(rho, c)
                    .map_err(|e| CliError::config(e.to_string()))?;
                table.push(vec![
                    output::num(c),
                    output::num(b.lower),
                    output::num(b.upper),
                    b.exact.to_string(),
                ]);
            }
            table.write(&out.format, out.out.as_deref())
        }
        Command::Gaussian {
            rho,
            distortions,
            caches,
            out,
        } => {
            let cov = vec![vec![1.0, rho], vec![rho, 1.0]];
            let mut table = Table::new(
                "gaussian",
                &format!("rho={} D={:?} C={:?}", rho, distortions, caches),
                0,
                vec!["D", "C", "region", "rate_or_upper", "superuser_lower"],
            );
            for &d in &distortions {
                for &c in &caches {
                    let (rate, tag) = rdcache::bivariate_gaussian_rdc(rho, d, c)
                        .map_err(|e| CliError::config(e.to_string()))?;
                    let lb = rdcache::gaussian_superuser_lower(&cov, d, c)
                        .map_err(|e| CliError::config(e.to_string()))?;
                    table.push(vec![
                        output::num(d),
                        output::num(c),
                        tag.as_str().to_string(),
                        output::num(rate),
                        output::num(lb.raw),
                    ]);
                }
            }
            table.write(&out.format, out.out.as_deref())
        }
        Command::TwoUser {
            spec,
            demands1,
            demands2,
            distortions,
            deltas,
            p_i,
            c_grid,
            grid_steps,
            out,
        } => {
            let (lib, _) = load_library(&spec)?;
            let d1 = one_based(&demands1, lib.num_sources())?;
            let d2 = one_based(&demands2, lib.num_sources())?;
            if distortions.len() != d1.len() {
                return Err(CliError::config(format!(
                    "{} targets for {} user-1 demands",
                    distortions.len(),
                    d1.len()
                )));
            }
            let deltas = deltas.unwrap_or_else(|| vec![0.0; d2.len()]);
            if deltas.len() != d2.len() {
                return Err(CliError::config(format!(
                    "{} targets for {} user-2 demands",
                    deltas.len(),
                    d2.len()
                )));
            }
            let p_i = p_i.unwrap_or_else(|| vec![1.0 / d2.len() as f64; d2.len()]);
            if p_i.len() != d2.len() {
                return Err(CliError::config("p-i length must match demands2"));
            }
            let grid = parse_grid(&c_grid)?;
            let gopts = GridOpts {
                resolution: grid_steps,
                aux_size: 2,
                aux_resolution: grid_steps.min(8),
            };
            // DSBS closed-form columns apply to symmetric lossy user 1 /
            // lossless user 2 on a DSBS-shaped library.
            let dsbs_rho = rdcache::dsbs_parameter(&lib).filter(|_| {
                deltas.iter().all(|&t| t <= 1e-14)
                    && distortions.windows(2).all(|w| w[0] == w[1])
                    && !distortions.is_empty()
                    && distortions[0] <= 0.5
            });
            let mut cols = vec!["C", "lower_genie", "lower_avg", "upper", "converged"];
            if dsbs_rho.is_some() {
                cols.push("dsbs_lower");
                cols.push("dsbs_upper");
            }
            let mut table = Table::new(
                "two-user",
                &format!(
                    "spec={} demands1={:?} demands2={:?} D={:?} Delta={:?} grid={}",
                    spec.display(),
                    demands1,
                    demands2,
                    distortions,
                    deltas,
                    grid_steps
                ),
                0,
                cols,
            );
            for &c in &grid {
                let inst = TwoUserInstance::hamming(
                    lib.clone(),
                    d1.clone(),
                    d2.clone(),
                    distortions.clone(),
                    deltas.clone(),
                    c,
                )
                .map_err(|e| CliError::config(e.to_string()))?;
                let lower = rdcache::two_user_lower_genie(&inst, &gopts)
                    .map_err(|e| CliError::solver(e.to_string()))?;
                let avg = rdcache::two_user_avg_lower(&inst, &p_i, &gopts)
                    .map_err(|e| CliError::solver(e.to_string()))?;
                let upper = rdcache::two_user_upper(&inst, &gopts)
                    .map_err(|e| CliError::solver(e.to_string()))?;
                let mut row = vec![
                    output::num(c),
                    output::num(lower),
                    output::num(avg),
                    output::num(upper),
                    "true".to_string(),
                ];
                if let Some(rho) = dsbs_rho {
                    let (lo, up) = rdcache::two_user_dsbs_bounds(rho, distortions[0], c)
                        .map_err(|e| CliError::config(e.to_string()))?;
                    row.push(output::num(lo));
                    row.push(output::num(up));
                }
                table.push(row);
            }
            table.write(&out.format, out.out.as_deref())
        }
    }
}
