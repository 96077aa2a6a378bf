//! `hsurf`: validate groups, scan surfaces, check identities, and compute
//! perimeters, variations and stability certificates.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad input.

mod config;
mod svg;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hsurf::algebra::{validation_report, AlgebraError, GroupSpec};
use hsurf::identities::{verify_identities, IdentityOptions, IdentityReport, IdentityResidual};
use hsurf::variation::{
    format_value, PatchSpec, QuadraturePatch, SecondVariation, TestFunction, VariationError, Verdict,
};
use hsurf::{CarnotGroup, GeometryError, LocalGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use config::{input, load_patch, GroupSource, InputError, RunConfig, Surface, DEFAULT_NODES};

#[derive(Parser)]
#[command(name = "hsurf", version, about = "Horizontal geometry of hypersurfaces in Carnot groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Group: heisenberg:N, engel, abelian:N, or a JSON group file.
    #[arg(long, global = true, default_value = "heisenberg:1")]
    group: String,
    /// Surface: vplane, nvplane, hparab, or an expression in x1..xn.
    #[arg(long, global = true, default_value = "hparab")]
    surface: String,
    /// Patch: a JSON file or inline JSON object.
    #[arg(long, global = true)]
    patch: Option<String>,
    /// Pass/fail tolerance (meaning depends on the command).
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Check the axioms of a stratified algebra.
    Validate,
    /// Per-node geometry over a patch (CSV, JSON or an SVG heatmap).
    Scan {
        /// Column drawn by --format svg.
        #[arg(long, default_value = "B_TS")]
        column: String,
    },
    /// Residuals of the structural identities at random surface points.
    Identities {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Tolerance for finite-difference jets (defaults to --tol if given,
        /// else 1e-4).
        #[arg(long)]
        fd_tol: Option<f64>,
        /// Skip the finite-difference pass.
        #[arg(long)]
        no_fd: bool,
        /// Treat an expression surface as having constant mean curvature.
        #[arg(long)]
        cmc: bool,
        /// Also check Green's formula on the patch.
        #[arg(long)]
        green: bool,
    },
    /// Stability certificate and second variation over a bump library.
    Stability {
        /// Random bumps added to the fixed library.
        #[arg(long, default_value_t = 4)]
        bumps: usize,
    },
    /// H-perimeter of a patch.
    Perimeter,
    /// First variation (integrand and perimeter flow) and second variation.
    Variation {
        #[arg(long, default_value_t = 4)]
        bumps: usize,
        /// Flow parameter of the finite-difference check.
        #[arg(long, default_value_t = 1e-4)]
        t: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) {
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {:#}", e);
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn output(cli: &Cli) -> Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| InputError(format!("cannot create {}: {}", p, e)))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_config(cli: &Cli, command: &str, patch: Option<&PatchSpec>) -> RunConfig {
    RunConfig {
        command: command.into(),
        group: GroupSource::parse(&cli.group),
        surface: (command != "validate").then(|| cli.surface.clone()),
        patch: patch.cloned(),
        tol: cli.tol,
        seed: cli.seed,
    }
}

fn run(cli: &Cli) -> Result<bool> {
    if let Command::Validate = cli.command {
        return validate(cli);
    }
    let group = GroupSource::parse(&cli.group).load()?;
    let surface = Surface::load(&cli.surface, &group)?;
    match &cli.command {
        Command::Validate => unreachable!(),
        Command::Scan { column } => scan(cli, &group, &surface, column),
        Command::Identities { samples, fd_tol, no_fd, cmc, green } => {
            identities(cli, &group, &surface, *samples, *fd_tol, *no_fd, *cmc, *green)
        }
        Command::Stability { bumps } => stability(cli, &group, &surface, *bumps),
        Command::Perimeter => perimeter(cli, &group, &surface),
        Command::Variation { bumps, t } => variation(cli, &group, &surface, *bumps, *t),
    }
}

fn violation_line(v: &AlgebraError) -> String {
    match v {
        AlgebraError::SkewSymmetryViolation(i, j, r) => {
            format!("SkewSymmetryViolation at ({},{},{})", i + 1, j + 1, r + 1)
        }
        AlgebraError::JacobiViolation(i, j, l, r) => {
            format!("JacobiViolation at ({},{},{},{})", i + 1, j + 1, l + 1, r + 1)
        }
        AlgebraError::GradingViolation(i, j, r) => format!("GradingViolation at ({},{},{})", i + 1, j + 1, r + 1),
        AlgebraError::GenerationFailure { stratum, rank, expected } => {
            format!("GenerationFailure at stratum {} (rank {}, expected {})", stratum, rank, expected)
        }
        other => other.to_string(),
    }
}

fn validate(cli: &Cli) -> Result<bool> {
    let source = GroupSource::parse(&cli.group);
    let (strata, violations) = match &source {
        GroupSource::File(path) => {
            let text = config::read(path)?;
            let spec: GroupSpec =
                serde_json::from_str(&text).map_err(|e| InputError(format!("{}: {}", path, e)))?;
            let c = spec.structure_constants().map_err(|e| InputError(format!("{}: {}", path, e)))?;
            let v = validation_report(&spec.strata, &c).map_err(|e| InputError(format!("{}: {}", path, e)))?;
            (spec.strata, v)
        }
        _ => (source.load()?.strata().to_vec(), Vec::new()),
    };
    let ok = violations.is_empty();
    let mut out = output(cli)?;
    let lines: Vec<String> = violations.iter().map(violation_line).collect();
    if cli.format == Some(Format::Json) {
        let mut report = json!({ "config": run_config(cli, "validate", None), "valid": ok, "violations": lines });
        if ok {
            let g = source.load()?;
            report["dimension"] = json!(g.dim());
            report["step"] = json!(g.step());
            report["homogeneous_dimension"] = json!(g.homogeneous_dimension());
            report["exact"] = json!(g.is_exact());
        }
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else if ok {
        let g = source.load()?;
        writeln!(
            out,
            "valid: strata {:?}, dimension {}, step {}, homogeneous dimension {}, {} constants",
            strata,
            g.dim(),
            g.step(),
            g.homogeneous_dimension(),
            if g.is_exact() { "exact" } else { "floating-point" }
        )?;
    } else {
        for l in &lines {
            writeln!(out, "{}", l)?;
        }
    }
    out.flush()?;
    Ok(ok)
}

fn build_patch(cli: &Cli, group: &CarnotGroup, surface: &Surface, nodes: usize) -> Result<QuadraturePatch> {
    let n = group.dim();
    let spec = load_patch(cli.patch.as_deref(), surface, n, nodes)?;
    let chart = surface.chart(n, &spec)?;
    QuadraturePatch::new(group, surface.field(), &chart, &spec).map_err(patch_error)
}

fn patch_error(e: VariationError) -> anyhow::Error {
    match e {
        VariationError::InvalidPatch(m) => InputError(format!("invalid patch: {}", m)).into(),
        other => other.into(),
    }
}

fn scan(cli: &Cli, group: &CarnotGroup, surface: &Surface, column: &str) -> Result<bool> {
    let patch = build_patch(cli, group, surface, DEFAULT_NODES)?;
    let per = patch.h_perimeter();
    eprintln!(
        "{} nodes, {} masked (fraction {:.6}), min |P_H nu| = {}",
        per.nodes,
        per.masked_nodes,
        per.masked_fraction,
        format_value(per.min_p_h_norm)
    );
    let mut out = output(cli)?;
    match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => patch.write_csv(&mut out)?,
        Format::Json => {
            let report = json!({
                "config": run_config(cli, "scan", Some(&patch.spec)),
                "columns": patch.csv_header(),
                "nodes": patch.nodes,
                "masked_fraction": per.masked_fraction,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Format::Svg => {
            let res = patch.resolution();
            if res.len() != 2 {
                return input(format!("svg needs a two-dimensional chart, this one has {}", res.len()));
            }
            let Some(values) = patch.column(column) else {
                return input(format!(
                    "unknown column {:?}; available: {}",
                    column,
                    patch.csv_header().join(", ")
                ));
            };
            let masked: Vec<bool> = patch.nodes.iter().map(|n| n.masked).collect();
            let title = format!("{} on {} in {}", column, surface.describe(), cli.group);
            let s = &patch.spec;
            out.write_all(
                svg::heatmap(&title, &values, &masked, res[0], res[1], [s.lo[0], s.lo[1]], [s.hi[0], s.hi[1]])
                    .as_bytes(),
            )?;
        }
    }
    out.flush()?;
    Ok(true)
}

/// Random non-characteristic surface points above the patch box.
fn sample_points(
    group: &CarnotGroup,
    surface: &Surface,
    spec: &PatchSpec,
    samples: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = group.dim();
    let chart = surface.chart(n, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(samples);
    let mut rejected = 0;
    for _ in 0..50 * samples.max(1) {
        if pts.len() == samples {
            break;
        }
        let u: Vec<f64> = spec.lo.iter().zip(&spec.hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
        let Ok(x) = chart.embed(&u) else {
            rejected += 1;
            continue;
        };
        match LocalGeometry::new(group, surface.field(), &x, 1) {
            Ok(g) if g.p_h_norm() >= 0.05 => pts.push(x),
            Ok(_) | Err(GeometryError::DegenerateDefiningFunction(_)) => rejected += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if pts.len() < samples {
        anyhow::bail!("found only {} usable sample points", pts.len());
    }
    Ok((pts, rejected))
}

#[derive(Serialize)]
struct IdentityTableRow {
    name: String,
    analytic: Option<f64>,
    finite_difference: Option<f64>,
    tolerance: f64,
    fd_tolerance: Option<f64>,
    pass: bool,
}

#[allow(clippy::too_many_arguments)]
fn identities(
    cli: &Cli,
    group: &CarnotGroup,
    surface: &Surface,
    samples: usize,
    fd_tol: Option<f64>,
    no_fd: bool,
    cmc: bool,
    green: bool,
) -> Result<bool> {
    let n = group.dim();
    let spec = load_patch(cli.patch.as_deref(), surface, n, DEFAULT_NODES)?;
    let tol = cli.tol.unwrap_or(1e-7);
    let fd_tol = fd_tol.or(cli.tol).unwrap_or(1e-4);
    let (pts, rejected) = sample_points(group, surface, &spec, samples, cli.seed)?;
    let opts = IdentityOptions::new(n, cmc || surface.known_cmc());
    let field = surface.field();
    let analytic = verify_identities(group, field, &pts, &opts, tol)?;
    let fd = if no_fd {
        None
    } else {
        Some(verify_identities(group, &field.to_finite_difference(None), &pts, &opts, fd_tol)?)
    };
    let mut rows: Vec<IdentityTableRow> = analytic
        .rows
        .iter()
        .map(|r| {
            let f = fd.as_ref().and_then(|f| f.rows.iter().find(|x| x.name == r.name));
            IdentityTableRow {
                name: r.name.to_string(),
                analytic: Some(r.max_residual),
                finite_difference: f.map(|f| f.max_residual),
                tolerance: tol,
                fd_tolerance: f.map(|_| fd_tol),
                pass: r.pass && f.map_or(true, |f| f.pass),
            }
        })
        .collect();
    if green {
        let patch = build_patch(cli, group, surface, DEFAULT_NODES)?;
        let mut report = IdentityReport::default();
        let green_tol = cli.tol.unwrap_or(1e-5).max(1e-5);
        for w in TestFunction::library(&spec.lo, &spec.hi, 2, cli.seed) {
            let g = patch.green_check(&w).map_err(patch_error)?;
            report.record(&IdentityResidual::new("green_formula", g.lhs, g.rhs), green_tol);
            report.rows[0].max_residual = report.rows[0].max_residual.max(g.relative_gap);
            report.rows[0].pass = report.rows[0].max_residual <= green_tol;
        }
        let r = &report.rows[0];
        rows.push(IdentityTableRow {
            name: r.name.to_string(),
            analytic: Some(r.max_residual),
            finite_difference: None,
            tolerance: green_tol,
            fd_tolerance: None,
            pass: r.pass,
        });
    }
    let ok = rows.iter().all(|r| r.pass);
    let mut out = output(cli)?;
    match cli.format {
        Some(Format::Json) => {
            let report = json!({
                "config": run_config(cli, "identities", Some(&spec)),
                "samples": pts.len(),
                "rejected_samples": rejected,
                "rows": rows,
                "pass": ok,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Some(Format::Csv) => {
            writeln!(out, "name,analytic,finite_difference,tolerance,fd_tolerance,pass")?;
            for r in &rows {
                let o = |v: Option<f64>| v.map(format_value).unwrap_or_default();
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.name,
                    o(r.analytic),
                    o(r.finite_difference),
                    format_value(r.tolerance),
                    o(r.fd_tolerance),
                    r.pass
                )?;
            }
        }
        Some(Format::Svg) => return input("identities has no svg output"),
        None => {
            writeln!(out, "{} samples on {} in {}", pts.len(), surface.describe(), cli.group)?;
            writeln!(out, "{:<24} {:>12} {:>12}  result", "identity", "analytic", "fin. diff.")?;
            for r in &rows {
                let o = |v: Option<f64>| v.map(|v| format!("{:.3e}", v)).unwrap_or_else(|| "-".into());
                writeln!(
                    out,
                    "{:<24} {:>12} {:>12}  {}",
                    r.name,
                    o(r.analytic),
                    o(r.finite_difference),
                    if r.pass { "PASS" } else { "FAIL" }
                )?;
            }
        }
    }
    out.flush()?;
    Ok(ok)
}

#[derive(Serialize)]
struct BumpResult {
    bump: TestFunction,
    #[serde(flatten)]
    second_variation: SecondVariation,
}

fn stability(cli: &Cli, group: &CarnotGroup, surface: &Surface, bumps: usize) -> Result<bool> {
    let patch = build_patch(cli, group, surface, DEFAULT_NODES)?;
    let q_tol = cli.tol.unwrap_or(1e-8);
    let cert = match patch.stability_certificate(1e-9) {
        Ok(c) => c,
        Err(e @ VariationError::NotHMinimalOnPatch(_)) => {
            eprintln!("{}", e);
            return Ok(false);
        }
        Err(e) => return Err(patch_error(e)),
    };
    let library = TestFunction::library(&patch.spec.lo, &patch.spec.hi, bumps, cli.seed);
    let results = library
        .into_iter()
        .map(|w| {
            let q = patch.second_variation(&w).map_err(patch_error)?;
            Ok(BumpResult { bump: w, second_variation: q })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_q = results.iter().map(|r| r.second_variation.value).fold(f64::INFINITY, f64::min);
    let consistent = matches!(cert.verdict, Verdict::Inconclusive) || min_q >= -q_tol;
    let report = json!({
        "config": run_config(cli, "stability", Some(&patch.spec)),
        "certificate": cert,
        "second_variation": results,
        "min_second_variation": min_q,
        "consistent": consistent,
    });
    let mut out = output(cli)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    out.flush()?;
    Ok(consistent)
}

fn perimeter(cli: &Cli, group: &CarnotGroup, surface: &Surface) -> Result<bool> {
    let patch = build_patch(cli, group, surface, DEFAULT_NODES)?;
    let per = patch.h_perimeter();
    let mut out = output(cli)?;
    if cli.format == Some(Format::Json) {
        let report = json!({
            "config": run_config(cli, "perimeter", Some(&patch.spec)),
            "h_perimeter": per,
            "riemannian_area": patch.riemannian_area(),
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        writeln!(out, "H-perimeter      {}", format_value(per.value))?;
        writeln!(out, "Riemannian area  {}", format_value(patch.riemannian_area()))?;
        writeln!(out, "nodes {}, masked {} (fraction {:.6})", per.nodes, per.masked_nodes, per.masked_fraction)?;
    }
    out.flush()?;
    Ok(true)
}

fn variation(cli: &Cli, group: &CarnotGroup, surface: &Surface, bumps: usize, t: f64) -> Result<bool> {
    // the flow quotient differentiates a quadrature sum, so it needs a
    // finer default grid than the other commands
    let patch = build_patch(cli, group, surface, 4 * DEFAULT_NODES)?;
    let tol = cli.tol.unwrap_or(1e-3);
    let library = TestFunction::library(&patch.spec.lo, &patch.spec.hi, bumps, cli.seed);
    let mut rows = Vec::new();
    let mut ok = true;
    for w in library {
        let flow = patch.first_variation_check(&w, t).map_err(patch_error)?;
        ok &= flow.relative_error <= tol;
        let second = match patch.second_variation(&w) {
            Ok(q) => Some((q, patch.second_variation_green(&w).map_err(patch_error)?)),
            Err(VariationError::NotHMinimalOnPatch(_)) => None,
            Err(e) => return Err(patch_error(e)),
        };
        rows.push(json!({
            "bump": w,
            "first_variation": flow,
            "second_variation": second.as_ref().map(|s| &s.0),
            "second_variation_green": second.as_ref().map(|s| &s.1),
        }));
    }
    let report = json!({
        "config": run_config(cli, "variation", Some(&patch.spec)),
        "bumps": rows,
        "pass": ok,
    });
    let mut out = output(cli)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report).context("serialising report")?)?;
    out.flush()?;
    Ok(ok)
}
