//! Command-line front door: simulate data, compute bounds, sweep the
//! sensitivity parameter, and run falsification tests. Output is JSON and
//! plot-ready CSV.
//!
//! Exit codes: 0 success, 2 usage/data error, 3 empty identified set,
//! 4 insufficient data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rdbounds::data::{
    estimate_density, load_csv, partition, DesignSpec, ObservationTable, TargetSpec,
};
use rdbounds::falsify::{global_parallel_test, local_derivative_test};
use rdbounds::interval::{bounds_intersect, IdentifiedInterval};
use rdbounds::multicut::{
    aggregate_bounds, bounds_bam, bounds_bpe, bounds_brm, bounds_sd, build_bias_model,
    point_estimate_constant_bias, BiasModel, MultiFits,
};
use rdbounds::regress::fit_with_loocv;
use rdbounds::simgen::{generate, DgpSpec};
use rdbounds::singlecut::{bounds_lipschitz, bounds_smoothness_single, ks_tau_bounds, KsModel};
use rdbounds::Error;

const SCHEMA_VERSION: u32 = 1;

const EXIT_USAGE: u8 = 2;
const EXIT_EMPTY_SET: u8 = 3;
const EXIT_INSUFFICIENT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "rdbounds",
    about = "Partially identified treatment effects away from the cutoff in sharp RD designs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the reference two-cutoff simulation data set.
    Simulate {
        /// Number of draws.
        #[arg(long)]
        n: usize,
        /// RNG seed (ChaCha8); identical flags give byte-identical files.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute an identified interval for one restriction and kappa.
    Bounds(BoundsArgs),
    /// Compute identified intervals over a kappa grid; emits CSV.
    Sweep(SweepArgs),
    /// Run the parallel-trend falsification tests (two-cutoff designs).
    Falsify(FalsifyArgs),
}

#[derive(Args, Clone)]
struct BoundsArgs {
    /// Input CSV with header y,x,c[,covariates...].
    #[arg(long)]
    data: PathBuf,
    /// Restriction class: bam|brm|sd|bpe|ib (two-cutoff) or lip|sd1|ks (single).
    #[arg(long)]
    restriction: String,
    /// Sensitivity parameter.
    #[arg(long)]
    kappa: Option<f64>,
    /// Per-order sensitivity parameters for bpe, comma separated (kappa_0,...,kappa_p).
    #[arg(long, value_delimiter = ',')]
    kappas: Option<Vec<f64>>,
    /// Member classes for ib, comma separated (e.g. bam,brm).
    #[arg(long, value_delimiter = ',')]
    members: Option<Vec<String>>,
    /// Extrapolation point.
    #[arg(long)]
    x_star: Option<f64>,
    /// Average-effect target: two comma-separated endpoints a,b.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    avg: Option<Vec<f64>>,
    /// Cap on the series order menu for LOOCV.
    #[arg(long, default_value_t = rdbounds::regress::DEFAULT_J_MAX)]
    j_max: usize,
    /// Grid size for suprema scans, envelopes, and average targets.
    #[arg(long, default_value_t = rdbounds::multicut::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// Override the estimated supremum of |B^(s)| as `s=value` (repeatable);
    /// use s=1.0 to read kappa_s as an absolute derivative bound.
    #[arg(long = "sup-override")]
    sup_overrides: Vec<String>,
    /// Covariate column names for the ks restriction, comma separated.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Declared lower end of the outcome support (ks only; required).
    #[arg(long)]
    y_min: Option<f64>,
    /// Declared upper end of the outcome support (ks only; required).
    #[arg(long)]
    y_max: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    bounds: BoundsArgs,
    /// Inclusive kappa grid `start:end:step`.
    #[arg(long)]
    kappa_grid: String,
}

#[derive(Args, Clone)]
struct FalsifyArgs {
    /// Input CSV with header y,x,c[,covariates...].
    #[arg(long)]
    data: PathBuf,
    /// Maximal polynomial order of the global test.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Run only the global polynomial test.
    #[arg(long)]
    global_only: bool,
    /// Run only the local derivative test.
    #[arg(long)]
    local_only: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InsufficientData(_) => ExitCode::from(EXIT_INSUFFICIENT),
                _ => ExitCode::from(EXIT_USAGE),
            }
        }
    }
}

/// RDX_THREADS caps rayon parallelism when set.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("RDX_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Simulate { n, seed, out } => {
            let table = generate(&DgpSpec { n, seed })?;
            table.write_csv(&out)?;
            let n_low = table
                .rows()
                .iter()
                .filter(|r| r.c == rdbounds::simgen::LOW_CUTOFF)
                .count();
            let y_min = table.rows().iter().map(|r| r.y).fold(f64::INFINITY, f64::min);
            let y_max = table
                .rows()
                .iter()
                .map(|r| r.y)
                .fold(f64::NEG_INFINITY, f64::max);
            println!(
                "wrote {} rows to {} ({} at cutoff {}, {} at cutoff {}); y range [{y_min:.2}, {y_max:.2}]",
                table.len(),
                out.display(),
                n_low,
                rdbounds::simgen::LOW_CUTOFF,
                table.len() - n_low,
                rdbounds::simgen::HIGH_CUTOFF,
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds(args) => cmd_bounds(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Falsify(args) => cmd_falsify(&args),
    }
}

#[derive(Serialize)]
struct Diagnostics {
    j_star: std::collections::BTreeMap<String, usize>,
    bias_sup: Vec<f64>,
    bias_anchor_at_low: Option<f64>,
    bias_linear_r2: Option<f64>,
    grid_size: usize,
    outer_region: bool,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct BoundsReport {
    schema_version: u32,
    design: String,
    target: serde_json::Value,
    restriction: String,
    kappa: Vec<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
    empty: bool,
    point_estimate_constant_bias: Option<f64>,
    diagnostics: Diagnostics,
}

struct LoadedData {
    table: ObservationTable,
    design: DesignSpec,
}

fn load(args: &BoundsArgs) -> Result<LoadedData, Error> {
    let covs = args.covariates.clone().unwrap_or_default();
    let table = load_csv(&args.data, &covs)?;
    let design = table.design()?;
    Ok(LoadedData { table, design })
}

fn target_of(args: &BoundsArgs, design: &DesignSpec) -> Result<TargetSpec, Error> {
    let t = match (args.x_star, &args.avg) {
        (Some(x), None) => TargetSpec::Point { x_star: x },
        (None, Some(ab)) => TargetSpec::Average { a: ab[0], b: ab[1] },
        _ => {
            return Err(Error::InvalidArgument(
                "exactly one of --x-star or --avg must be given".into(),
            ))
        }
    };
    t.validate(design)?;
    Ok(t)
}

/// What one restriction needs from the bias model.
fn required_order(restriction: &str, args: &BoundsArgs) -> Result<usize, Error> {
    Ok(match restriction {
        "bam" => 0,
        "brm" => 1,
        "sd" => 2,
        "bpe" => {
            args.kappas
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("bpe requires --kappas".into()))?
                .len()
                .saturating_sub(1)
        }
        "ib" => {
            let members = args
                .members
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("ib requires --members".into()))?;
            let mut p = 0;
            for m in members {
                p = p.max(required_order(m, args)?);
            }
            p
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown two-cutoff restriction `{other}`"
            )))
        }
    })
}

fn kappa_of(args: &BoundsArgs) -> Result<f64, Error> {
    args.kappa
        .ok_or_else(|| Error::InvalidArgument("this restriction requires --kappa".into()))
}

fn multi_interval(
    restriction: &str,
    fits: &MultiFits,
    bias: &BiasModel,
    x_star: f64,
    args: &BoundsArgs,
) -> Result<IdentifiedInterval, Error> {
    match restriction {
        "bam" => bounds_bam(fits, bias, x_star, kappa_of(args)?),
        "brm" => bounds_brm(fits, bias, x_star, kappa_of(args)?),
        "sd" => bounds_sd(fits, bias, x_star, kappa_of(args)?),
        "bpe" => bounds_bpe(fits, bias, x_star, args.kappas.as_deref().unwrap_or(&[])),
        "ib" => {
            let members = args.members.clone().unwrap_or_default();
            if members.is_empty() {
                return Err(Error::InvalidArgument("ib requires --members".into()));
            }
            let parts: Vec<IdentifiedInterval> = members
                .iter()
                .map(|m| multi_interval(m, fits, bias, x_star, args))
                .collect::<Result<_, _>>()?;
            bounds_intersect(&parts)
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown two-cutoff restriction `{other}`"
        ))),
    }
}

fn parse_sup_overrides(args: &BoundsArgs, bias: &mut BiasModel) -> Result<(), Error> {
    for spec in &args.sup_overrides {
        let (s, v) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("--sup-override `{spec}` must be s=value"))
        })?;
        let s: usize = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad order in `{spec}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad value in `{spec}`")))?;
        bias.set_sup_override(s, v)?;
    }
    Ok(())
}

struct Computed {
    interval: IdentifiedInterval,
    point_estimate: Option<f64>,
    diagnostics: Diagnostics,
    design_label: String,
}

fn compute(args: &BoundsArgs) -> Result<Computed, Error> {
    let data = load(args)?;
    let target = target_of(args, &data.design)?;
    let restriction = args.restriction.to_lowercase();

    match data.design {
        DesignSpec::Multi { low, high, .. } => {
            if matches!(restriction.as_str(), "lip" | "sd1" | "ks") {
                return Err(Error::InvalidArgument(format!(
                    "restriction `{restriction}` is for single-cutoff designs; data has cutoffs {{{low}, {high}}}"
                )));
            }
            let part = partition(&data.table, &data.design)?;
            let fits = MultiFits::from_partition(&data.table, &data.design, &part, args.j_max)?;
            let p = required_order(&restriction, args)?;
            let mut bias = build_bias_model(&fits, p, args.grid_size)?;
            parse_sup_overrides(args, &mut bias)?;

            let interval = match target {
                TargetSpec::Point { x_star } => {
                    multi_interval(&restriction, &fits, &bias, x_star, args)?
                }
                TargetSpec::Average { a, b } => {
                    let density = estimate_density(&data.table, args.grid_size.max(50))?
                        .restrict(a, b)?;
                    let m = args.grid_size.max(2);
                    let grid: Vec<f64> = (0..m)
                        .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
                        .collect();
                    let pointwise: Vec<IdentifiedInterval> = grid
                        .iter()
                        .map(|&x| multi_interval(&restriction, &fits, &bias, x, args))
                        .collect::<Result<_, _>>()?;
                    aggregate_bounds(&grid, &pointwise, &density)?
                }
            };
            let pe_at = match target {
                TargetSpec::Point { x_star } => x_star,
                TargetSpec::Average { a, b } => 0.5 * (a + b),
            };
            let mut j_star = std::collections::BTreeMap::new();
            j_star.insert("mu0_low".into(), fits.mu0_low.order());
            j_star.insert("mu1_low".into(), fits.mu1_low.order());
            j_star.insert("mu0_high".into(), fits.mu0_high.order());
            let diagnostics = Diagnostics {
                j_star,
                bias_sup: (0..=bias.max_order())
                    .map(|s| bias.sup(s).unwrap())
                    .collect(),
                bias_anchor_at_low: Some(bias.anchor(0)?),
                bias_linear_r2: Some(bias.linear_r2(&fits)?),
                grid_size: args.grid_size,
                outer_region: interval.outer_region,
                warnings: part.warnings.clone(),
            };
            Ok(Computed {
                interval,
                point_estimate: Some(point_estimate_constant_bias(&fits, &bias, pe_at)?),
                diagnostics,
                design_label: format!("multi(low={low}, high={high})"),
            })
        }
        DesignSpec::Single { c0, .. } => {
            if !matches!(restriction.as_str(), "lip" | "sd1" | "ks") {
                return Err(Error::InvalidArgument(format!(
                    "restriction `{restriction}` needs a two-cutoff design; data has the single cutoff {c0}"
                )));
            }
            let part = partition(&data.table, &data.design)?;
            let untreated_key = rdbounds::data::CellKey {
                subpop: rdbounds::data::Subpop::Single,
                treated: false,
            };
            let treated_key = rdbounds::data::CellKey {
                subpop: rdbounds::data::Subpop::Single,
                treated: true,
            };
            let (ux, uy) = part.cell_xy(&data.table, untreated_key);
            let (tx, ty) = part.cell_xy(&data.table, treated_key);
            let kappa = kappa_of(args)?;

            let point_target = |t: &TargetSpec| -> Result<f64, Error> {
                match t {
                    TargetSpec::Point { x_star } => Ok(*x_star),
                    TargetSpec::Average { .. } => Err(Error::InvalidArgument(
                        "average targets are not supported for the ks restriction".into(),
                    )),
                }
            };

            let (interval, j_star) = match restriction.as_str() {
                "ks" => {
                    let (y_min, y_max) = match (args.y_min, args.y_max) {
                        (Some(a), Some(b)) => (a, b),
                        _ => {
                            return Err(Error::InvalidArgument(
                                "ks requires a declared outcome support: --y-min and --y-max"
                                    .into(),
                            ))
                        }
                    };
                    let x_star = point_target(&target)?;
                    let model =
                        KsModel::build(&data.table, c0, y_min, y_max, x_star, args.j_max)?;
                    let mut j = std::collections::BTreeMap::new();
                    for cell in &model.cells {
                        j.insert(
                            format!("treated[{}]", cell.w.join(",")),
                            cell.treated_fit.order(),
                        );
                    }
                    (ks_tau_bounds(&model, kappa)?, j)
                }
                lip_or_sd1 => {
                    let j_cap = args.j_max.min(ux.len().saturating_sub(1)).max(1);
                    let untreated = fit_with_loocv(&ux, &uy, j_cap)?;
                    let t_cap = args.j_max.min(tx.len().saturating_sub(1)).max(1);
                    let treated = fit_with_loocv(&tx, &ty, t_cap)?;
                    let single_bound = |x_star: f64| -> Result<IdentifiedInterval, Error> {
                        match lip_or_sd1 {
                            "lip" => bounds_lipschitz(
                                &untreated,
                                &treated,
                                c0,
                                x_star,
                                kappa,
                                args.grid_size,
                            ),
                            _ => bounds_smoothness_single(&untreated, &treated, c0, x_star, kappa),
                        }
                    };
                    let interval = match target {
                        TargetSpec::Point { x_star } => single_bound(x_star)?,
                        TargetSpec::Average { a, b } => {
                            let density = estimate_density(&data.table, args.grid_size.max(50))?
                                .restrict(a, b)?;
                            let m = args.grid_size.max(2);
                            let grid: Vec<f64> = (0..m)
                                .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
                                .collect();
                            let pointwise: Vec<IdentifiedInterval> = grid
                                .iter()
                                .map(|&x| single_bound(x))
                                .collect::<Result<_, _>>()?;
                            aggregate_bounds(&grid, &pointwise, &density)?
                        }
                    };
                    let mut j = std::collections::BTreeMap::new();
                    j.insert("untreated".into(), untreated.order());
                    j.insert("treated".into(), treated.order());
                    (interval, j)
                }
            };
            let diagnostics = Diagnostics {
                j_star,
                bias_sup: vec![],
                bias_anchor_at_low: None,
                bias_linear_r2: None,
                grid_size: args.grid_size,
                outer_region: interval.outer_region,
                warnings: part.warnings.clone(),
            };
            Ok(Computed {
                interval,
                point_estimate: None,
                diagnostics,
                design_label: format!("single(c0={c0})"),
            })
        }
    }
}

fn target_json(args: &BoundsArgs) -> serde_json::Value {
    match (&args.x_star, &args.avg) {
        (Some(x), _) => serde_json::json!({ "kind": "point", "x_star": x }),
        (_, Some(ab)) => serde_json::json!({ "kind": "average", "a": ab[0], "b": ab[1] }),
        _ => serde_json::Value::Null,
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(Error::from),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn cmd_bounds(args: &BoundsArgs) -> Result<ExitCode, Error> {
    let computed = compute(args)?;
    let iv = &computed.interval;
    let report = BoundsReport {
        schema_version: SCHEMA_VERSION,
        design: computed.design_label,
        target: target_json(args),
        restriction: iv.restriction.clone(),
        kappa: iv.kappa.clone(),
        lower: (!iv.empty).then_some(iv.lower),
        upper: (!iv.empty).then_some(iv.upper),
        empty: iv.empty,
        point_estimate_constant_bias: computed.point_estimate,
        diagnostics: computed.diagnostics,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    emit(&args.out, &json)?;
    if iv.empty {
        eprintln!("identified set is empty: {}", iv.restriction);
        return Ok(ExitCode::from(EXIT_EMPTY_SET));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_kappa_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "--kappa-grid `{spec}` must be start:end:step"
        )));
    }
    let parse = |s: &str| -> Result<f64, Error> {
        s.parse()
            .map_err(|_| Error::InvalidArgument(format!("bad number `{s}` in --kappa-grid")))
    };
    let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if start < 0.0 || end < start || step <= 0.0 {
        return Err(Error::InvalidArgument(
            "kappa grid must be nonnegative, increasing, with positive step".into(),
        ));
    }
    let mut grid = Vec::new();
    let mut k = start;
    // Inclusive of the endpoint within 1e-12.
    while k <= end + 1e-12 {
        grid.push(k.min(end));
        k += step;
    }
    Ok(grid)
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode, Error> {
    use rayon::prelude::*;
    let grid = parse_kappa_grid(&args.kappa_grid)?;
    let rows: Vec<(f64, Result<Computed, Error>)> = grid
        .par_iter()
        .map(|&k| {
            let mut a = args.bounds.clone();
            a.kappa = Some(k);
            if let Some(ks) = &mut a.kappas {
                for v in ks.iter_mut() {
                    *v = k;
                }
            }
            (k, compute(&a))
        })
        .collect();

    let mut csv = String::from("kappa,lower,upper,empty\n");
    let mut any_empty = false;
    for (k, res) in rows {
        let c = res?;
        if c.interval.empty {
            any_empty = true;
            csv.push_str(&format!("{k},,,true\n"));
        } else {
            csv.push_str(&format!("{k},{},{},false\n", c.interval.lower, c.interval.upper));
        }
    }
    emit(&args.bounds.out, &csv)?;
    if any_empty {
        return Ok(ExitCode::from(EXIT_EMPTY_SET));
    }
    Ok(ExitCode::SUCCESS)
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn cmd_falsify(args: &FalsifyArgs) -> Result<ExitCode, Error> {
    let table = load_csv(&args.data, &[])?;
    let design = table.design()?;
    if matches!(design, DesignSpec::Single { .. }) {
        return Err(Error::InvalidArgument(
            "falsification tests require a two-cutoff design".into(),
        ));
    }
    let mut report = serde_json::Map::new();
    report.insert(
        "schema_version".into(),
        serde_json::json!(SCHEMA_VERSION),
    );

    if !args.local_only {
        let g = global_parallel_test(&table, &design, args.order)?;
        println!("Parallel trend test, global polynomial approach");
        println!("{:<22} {:>12} {:>12}", "", "Estimate", "Std Error");
        for c in &g.coefficients {
            println!(
                "{:<22} {:>9.2}{:<3} {:>11.2}",
                c.name,
                c.estimate,
                stars(c.p_value),
                c.std_error
            );
        }
        println!("{:<22} {:>12.2}", "R^2", g.r_squared);
        println!("{:<22} {:>12}", "Num. obs.", g.n);
        println!(
            "Wald({}) = {:.3}, p = {:.4}   (*** p<0.001; ** p<0.01; * p<0.05)\n",
            g.degrees_of_freedom, g.wald_statistic, g.p_value
        );
        report.insert("global".into(), serde_json::to_value(&g).unwrap());
    }
    if !args.global_only {
        let l = local_derivative_test(&table, &design, None)?;
        println!("Parallel trend test, local polynomial approach");
        println!(
            "{:<16} {:>10} {:>8} {:>9} {:>22}",
            "", "Estimate", "Bw", "p-value", "95% CI"
        );
        println!(
            "{:<16} {:>10.2} {:>8.2} {:>9.2} [{:>8.2}, {:>8.2}]",
            "slope at low",
            l.low_estimate,
            l.low_bandwidth,
            l.low_p_value,
            l.low_ci95.0,
            l.low_ci95.1
        );
        println!(
            "{:<16} {:>10.2} {:>8.2} {:>9.2} [{:>8.2}, {:>8.2}]",
            "slope at high",
            l.high_estimate,
            l.high_bandwidth,
            l.high_p_value,
            l.high_ci95.0,
            l.high_ci95.1
        );
        println!(
            "{:<16} {:>10.2} {:>8} {:>9.2} [{:>8.2}, {:>8.2}]",
            "difference", l.difference, "", l.p_value, l.ci95.0, l.ci95.1
        );
        report.insert("local".into(), serde_json::to_value(&l).unwrap());
    }
    let json = serde_json::to_string_pretty(&serde_json::Value::Object(report)).unwrap();
    match &args.out {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}
