//! Subcommand implementations. Each writes its artifacts into the output
//! directory and returns a JSON summary.

use std::path::Path;

use flipdiff_core::augmented::{AugSpace, AugmentedError, Truncation};
use flipdiff_core::lattice::{ballistic_matrix, LatticeError, PeriodicPotential, QuadratureOptions};
use flipdiff_core::oracle::{cross_checks, CrossCheckConfig, OracleError};
use flipdiff_core::simulate::{
    ballistic_coefficient, clt_distance, deterministic_moments, fit_diffusion, run_ensemble, Domain, EnsembleConfig, SimulateError,
};
use flipdiff_core::spectral::{eta_moment_identity_check, DiffusionMatrix, FiberProblem, GapReport, SpectralError};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::{BoundaryMode, ConfigError, ExperimentConfig, FieldError};
use crate::output::{Artifacts, Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Spectral,
    Asymptotics,
    Ballistic,
    OracleCheck,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Spectral => "spectral",
            Command::Asymptotics => "asymptotics",
            Command::Ballistic => "ballistic",
            Command::OracleCheck => "oracle-check",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Spectral(SpectralError),
    #[error(transparent)]
    Oracle(OracleError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Augmented(#[from] AugmentedError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("report: {0}")]
    Report(String),
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::ValidationFailed(m) => CliError::ValidationFailed(m),
            other => CliError::Spectral(other),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            e @ OracleError::CheckFailed { .. } => CliError::CheckFailed(e.to_string()),
            other => CliError::Oracle(other),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        CliError::Config(ConfigError::Invalid(vec![e]))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ValidationFailed(_) | CliError::CheckFailed(_) => 1,
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Runs `command`, writing artifacts plus the manifest into `out`.
pub fn run(command: Command, cfg: Option<&ExperimentConfig>, out: &Path) -> Result<Value, CliError> {
    let mut art = Artifacts::create(out)?;
    let summary = match (command, cfg) {
        (Command::Report, _) => report(&mut art)?,
        (_, None) => return Err(FieldError::new("--config", format!("`{}` needs a configuration", command.name())).into()),
        (c, Some(cfg)) => {
            art.json("config.resolved.json", cfg)?;
            match c {
                Command::Simulate => simulate(cfg, &mut art)?,
                Command::Spectral => spectral(cfg, &mut art)?,
                Command::Asymptotics => asymptotics(cfg, &mut art)?,
                Command::Ballistic => ballistic(cfg, &mut art)?,
                Command::OracleCheck => oracle_check(cfg, &mut art)?,
                Command::Report => unreachable!(),
            }
        }
    };
    let passed = summary.get("passed").and_then(Value::as_bool);
    art.finish(command.name(), cfg.map_or(0, |c| c.run.seed))?;
    if passed == Some(false) {
        return Err(CliError::CheckFailed(format!("{} reported failing checks; see {}", command.name(), out.display())));
    }
    Ok(summary)
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn entry_names(prefix: &str, d: usize) -> Vec<String> {
    let mut v = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            v.push(format!("{prefix}_{i}_{j}"));
        }
    }
    v
}

fn lambda_of(cfg: &ExperimentConfig, command: &str) -> Result<f64, FieldError> {
    cfg.noise.lambda.ok_or_else(|| FieldError::new("noise.lambda", format!("`{command}` needs a coupling")))
}

fn simulate(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let lambda = lambda_of(cfg, "simulate")?;
    let d = cfg.model.dim;
    let mut ens = EnsembleConfig::periodic(cfg.hopping(), PeriodicPotential::zero(d), lambda, cfg.noise.rate, cfg.run.horizon);
    ens.model = cfg.model();
    if cfg.numerics.mode == BoundaryMode::Torus {
        ens.domain = Domain::Torus { size: cfg.numerics.torus.clone() };
    }
    ens.sample_times = cfg.sample_times();
    ens.trajectories = cfg.run.trajectories;
    ens.seed = cfg.run.seed;
    ens.blocks = cfg.run.blocks;
    ens.tolerance = cfg.numerics.propagation_tol;
    ens.initial = cfg.initial_state();
    ens.char_grid = cfg.clt_grid();
    let result = run_ensemble(&ens)?;
    let series = result.moment_series();
    let mut header = vec![String::from("t"), String::from("mass")];
    header.extend(entry_names("m", d));
    header.extend(entry_names("stderr", d));
    let mut moments = Table::new(header);
    for (s, t) in series.times.iter().enumerate() {
        let mut row = vec![Cell::from(*t), Cell::from(series.mass[s])];
        row.extend((0..d * d).map(|e| Cell::from(series.moments[s * d * d + e])));
        row.extend((0..d * d).map(|e| Cell::from(series.stderr[s * d * d + e])));
        moments.push(row);
    }
    if cfg.wants("csv") {
        art.csv("moments.csv", &moments)?;
    }
    let window = (cfg.run.fit_window[0], cfg.run.fit_window[1]);
    let fit = fit_diffusion(&series, window)?;
    let mut clt = Table::new(["t", "distance"]);
    let mut distances = Vec::new();
    for &t in &cfg.run.clt_times {
        let s = result.times.iter().position(|x| (x - t).abs() < 1e-12).expect("clt times are sampled");
        let (phi, _) = result.characteristic(s);
        let dist = clt_distance(&phi, &result.k_grid, &fit.matrix);
        clt.push(vec![Cell::from(t), Cell::from(dist)]);
        distances.push(json!({"t": t, "distance": dist}));
    }
    if cfg.wants("csv") {
        art.csv("clt.csv", &clt)?;
    }
    let summary = json!({
        "command": "simulate",
        "trajectories": result.trajectories,
        "fit_window": [window.0, window.1],
        "diffusion": matrix_rows(&fit.matrix),
        "diffusion_ci95": matrix_rows(&fit.ci95),
        "trace": fit.trace,
        "trace_ci95": fit.trace_ci95,
        "intercept": matrix_rows(&fit.intercept),
        "curvature": fit.curvature,
        "nonlinear": fit.nonlinear,
        "clt": distances,
    });
    if cfg.wants("json") {
        art.json("simulate.json", &summary)?;
    }
    Ok(summary)
}

fn truncation(cfg: &ExperimentConfig, radius: usize, order: usize) -> Truncation {
    match cfg.numerics.mode {
        BoundaryMode::Box => Truncation::boxed(radius, order),
        BoundaryMode::Torus => Truncation::torus(cfg.numerics.torus.clone(), order),
    }
}

struct SpectralRow {
    lambda: f64,
    gap: GapReport,
    diffusion: DiffusionMatrix,
    radius: usize,
    order: usize,
}

fn spectral_header(d: usize) -> Vec<String> {
    let mut h = vec![String::from("lambda"), String::from("trace")];
    h.extend(entry_names("d", d));
    h.extend(["g_num", "g_bound", "radius", "order"].map(String::from));
    h
}

fn spectral_cells(r: &SpectralRow) -> Vec<Cell> {
    let mut row = vec![Cell::from(r.lambda), Cell::from(r.diffusion.trace)];
    row.extend(r.diffusion.symmetric.transpose().iter().map(|v| Cell::from(*v)));
    row.extend([Cell::from(r.gap.g_num), Cell::from(r.gap.bound.g_bound), Cell::from(r.radius), Cell::from(r.order)]);
    row
}

fn solve_point(cfg: &ExperimentConfig, u: &PeriodicPotential, lambda: f64, radius: usize, order: usize) -> Result<SpectralRow, CliError> {
    let space = AugSpace::new(cfg.hopping(), u.clone(), truncation(cfg, radius, order))?;
    let problem = FiberProblem::new(&space, lambda, cfg.noise.rate).with_config(cfg.spectral_config());
    let gap = problem.gap_numeric()?;
    let diffusion = problem.diffusion_matrix()?;
    Ok(SpectralRow { lambda, gap, diffusion, radius, order })
}

fn positive_lambda(cfg: &ExperimentConfig, command: &str) -> Result<f64, FieldError> {
    let lambda = lambda_of(cfg, command)?;
    if lambda > 0.0 {
        Ok(lambda)
    } else {
        Err(FieldError::new("noise.lambda", format!("`{command}` needs λ > 0; the diffusion matrix diverges at zero coupling")))
    }
}

fn spectral(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let lambda = positive_lambda(cfg, "spectral")?;
    let u = cfg.periodic_potential("spectral")?;
    let (radius, order) = (cfg.numerics.radius, cfg.numerics.order);
    let d = cfg.model.dim;
    let base = solve_point(cfg, &u, lambda, radius, order)?;
    let space = AugSpace::new(cfg.hopping(), u.clone(), truncation(cfg, radius, order))?;
    let problem = FiberProblem::new(&space, lambda, cfg.noise.rate).with_config(cfg.spectral_config());
    let e0 = problem.track_eigenvalue(&vec![0.0; d], Some(base.gap.g_num))?;
    let hessian = problem.eigenvalue_hessian(Some(base.gap.g_num))?;
    let hessian_rel = (0..d * d)
        .map(|e| (hessian[e] - base.diffusion.entries[e]).norm())
        .fold(0.0, f64::max)
        / base.diffusion.trace.abs().max(f64::MIN_POSITIVE);
    let mut rows = vec![base];
    if cfg.numerics.refine && cfg.numerics.mode == BoundaryMode::Box {
        rows.push(solve_point(cfg, &u, lambda, radius + 2, order)?);
        rows.push(solve_point(cfg, &u, lambda, radius, order + 1)?);
    }
    let mut table = Table::new(spectral_header(d));
    for r in &rows {
        table.push(spectral_cells(r));
    }
    if cfg.wants("csv") {
        art.csv("spectral.csv", &table)?;
    }
    let b = &rows[0];
    let summary = json!({
        "command": "spectral",
        "lambda": lambda,
        "diffusion": matrix_rows(&b.diffusion.symmetric),
        "trace": b.diffusion.trace,
        "max_imag": b.diffusion.max_imag,
        "max_asymmetry": b.diffusion.max_asymmetry,
        "g_num": b.gap.g_num,
        "g_bound": b.gap.bound.g_bound,
        "c1": b.gap.bound.c1,
        "c2": b.gap.bound.c2,
        "low_spectrum": b.gap.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        "e0": [e0.re, e0.im],
        "hessian_vs_diffusion": hessian_rel,
        "refinement": rows.iter().skip(1).map(|r| json!({"radius": r.radius, "order": r.order, "trace": r.diffusion.trace})).collect::<Vec<_>>(),
    });
    if cfg.wants("json") {
        art.json("spectral.json", &summary)?;
    }
    Ok(summary)
}

/// Least-squares slope of `log y` against `log x`, or `None` without two
/// positive points.
pub fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

fn asymptotics(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let ladder = &cfg.noise.lambda_ladder;
    if ladder.is_empty() {
        return Err(FieldError::new("noise.lambda_ladder", "`asymptotics` needs a ladder of couplings").into());
    }
    let u = cfg.periodic_potential("asymptotics")?;
    let (radius, order) = (cfg.numerics.radius, cfg.numerics.order);
    let d = cfg.model.dim;
    let space = AugSpace::new(cfg.hopping(), u.clone(), truncation(cfg, radius, order))?;
    let limit = FiberProblem::new(&space, ladder[0], cfg.noise.rate).with_config(cfg.spectral_config()).asymptotic_diffusion()?;
    let d0 = &limit.matrix.symmetric;
    let mut rows = Vec::with_capacity(ladder.len());
    for &lambda in ladder {
        rows.push(solve_point(cfg, &u, lambda, radius, order)?);
    }
    let mut header = spectral_header(d);
    header.push(String::from("scaled_distance"));
    let mut table = Table::new(header);
    let mut distances = Vec::new();
    for r in &rows {
        let dist = (&r.diffusion.symmetric * (r.lambda * r.lambda) - d0).norm() / d0.norm();
        distances.push(dist);
        let mut cells = spectral_cells(r);
        cells.push(Cell::from(dist));
        table.push(cells);
    }
    if cfg.wants("csv") {
        art.csv("asymptotics.csv", &table)?;
    }
    let mut order_idx: Vec<usize> = (0..rows.len()).collect();
    order_idx.sort_by(|a, b| rows[*b].lambda.total_cmp(&rows[*a].lambda));
    let monotone = order_idx.windows(2).all(|w| distances[w[1]] < distances[w[0]]);
    let summary = json!({
        "command": "asymptotics",
        "d0": matrix_rows(d0),
        "d0_trace": limit.matrix.trace,
        "included_axes": limit.included,
        "excluded_axes": limit.excluded,
        "kernel_rank": limit.kernel_rank,
        "lambda": ladder,
        "trace": rows.iter().map(|r| r.diffusion.trace).collect::<Vec<_>>(),
        "g_num": rows.iter().map(|r| r.gap.g_num).collect::<Vec<_>>(),
        "scaled_distance": distances,
        "distance_monotone": monotone,
        "slope_log_trace": log_slope(&rows.iter().map(|r| (r.lambda, r.diffusion.trace)).collect::<Vec<_>>()),
        "slope_log_gap": log_slope(&rows.iter().map(|r| (r.lambda, r.gap.g_num)).collect::<Vec<_>>()),
    });
    if cfg.wants("json") {
        art.json("asymptotics.json", &summary)?;
    }
    Ok(summary)
}

fn ballistic(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let u = cfg.periodic_potential("ballistic")?;
    let h = cfg.hopping();
    let d = cfg.model.dim;
    let psi0 = cfg.initial_state();
    let opts = QuadratureOptions { rel_tol: cfg.numerics.quadrature_tol, ..QuadratureOptions::default() };
    let bloch = ballistic_matrix(&h, &u, &psi0, opts)?;
    let mut table = Table::new(["relaxation_time", "axis", "abel", "bloch"]);
    let mut per_t = Vec::new();
    let start = vec![0i64; d];
    let localized = psi0.len() == 1 && psi0[0].0 == start;
    if !localized {
        return Err(FieldError::new("run.initial", "`ballistic` compares against the evolution of δ₀").into());
    }
    for &big_t in &cfg.run.relaxation_times {
        let horizon = 10.0 * big_t;
        let steps = (horizon / (big_t / 40.0)).ceil() as usize;
        let times: Vec<f64> = (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
        let series = deterministic_moments(&h, &cfg.model(), &start, times)?;
        let coeff = ballistic_coefficient(&series, big_t)?;
        for (axis, c) in coeff.iter().enumerate() {
            table.push(vec![Cell::from(big_t), Cell::from(axis), Cell::from(*c), Cell::from(bloch.matrix[axis * d + axis])]);
        }
        per_t.push(json!({"relaxation_time": big_t, "coefficient": coeff}));
    }
    let eta = eta_moment_identity_check(&h, &u, &cfg.numerics.eta_ladder, cfg.numerics.eta_sites_per_inverse, &cfg.spectral_config())?;
    let mut eta_table = Table::new(["eta", "axis", "lhs", "rhs", "residual", "lhs_doubled"]);
    for p in &eta.points {
        for axis in 0..d {
            eta_table.push(vec![
                Cell::from(p.eta),
                Cell::from(axis),
                Cell::from(p.lhs[axis]),
                Cell::from(p.rhs[axis]),
                Cell::from((p.lhs[axis] - p.rhs[axis]).abs()),
                Cell::from(p.lhs_doubled[axis]),
            ]);
        }
    }
    if cfg.wants("csv") {
        art.csv("ballistic.csv", &table)?;
        art.csv("eta.csv", &eta_table)?;
    }
    let last = per_t.last().and_then(|v| v["coefficient"].as_array().cloned()).unwrap_or_default();
    let agreement: Vec<f64> = (0..d)
        .map(|axis| {
            let b = bloch.matrix[axis * d + axis];
            let a = last.get(axis).and_then(Value::as_f64).unwrap_or(f64::NAN);
            (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
        })
        .collect();
    let summary = json!({
        "command": "ballistic",
        "bloch": bloch.matrix,
        "bloch_points_per_axis": bloch.points_per_axis,
        "abel": per_t,
        "relative_difference": agreement,
        "eta_exponent": eta.exponent,
        "eta_max_residual": eta.points.iter().map(|p| p.residual).fold(0.0, f64::max),
    });
    if cfg.wants("json") {
        art.json("ballistic.json", &summary)?;
    }
    Ok(summary)
}

fn oracle_check(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Value, CliError> {
    let lambda = lambda_of(cfg, "oracle-check")?;
    if cfg.numerics.torus.is_empty() {
        return Err(FieldError::new("numerics.torus", "`oracle-check` runs on a torus; give its size").into());
    }
    let mut check = CrossCheckConfig::reference();
    check.hopping = cfg.hopping();
    check.potential = cfg.periodic_potential("oracle-check")?;
    check.lambda = lambda;
    check.rate = cfg.noise.rate;
    check.torus = cfg.numerics.torus.clone();
    check.initial = cfg.initial_state();
    check.times = cfg.run.oracle_times.clone();
    check.trajectories = cfg.run.trajectories;
    check.seed = cfg.run.seed;
    check.sigma_bound = cfg.run.sigma_bound;
    check.integrator_tol = cfg.numerics.integrator_tol;
    check.fourier_tol = cfg.numerics.fourier_tol;
    check.walsh_tol = cfg.numerics.walsh_tol;
    let report = cross_checks(&check)?;
    art.json("verdicts.json", &report)?;
    Ok(json!({"command": "oracle-check", "passed": report.passed(), "verdicts": report.verdicts}))
}

fn report(art: &mut Artifacts) -> Result<Value, CliError> {
    let dir = art.dir().to_path_buf();
    let mut merged: Option<Table> = None;
    let mut sources = Vec::new();
    let mut scan: Vec<(f64, f64)> = Vec::new();
    for name in ["spectral.csv", "asymptotics.csv"] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let table = Table::parse_csv(&text).map_err(|e| CliError::Report(format!("{name}: {e}")))?;
        let lambdas = table.column("lambda").ok_or_else(|| CliError::Report(format!("{name} has no lambda column")))?;
        let traces = table.column("trace").ok_or_else(|| CliError::Report(format!("{name} has no trace column")))?;
        for (l, t) in lambdas.iter().zip(&traces) {
            match scan.iter_mut().find(|p| p.0 == *l) {
                Some(p) => p.1 = *t,
                None => scan.push((*l, *t)),
            }
        }
        let target = merged.get_or_insert_with(|| {
            let mut h = vec![String::from("source")];
            h.extend(table.header.iter().filter(|c| *c != "scaled_distance").cloned());
            Table::new(h)
        });
        let keep: Vec<usize> = (0..table.header.len()).filter(|&i| table.header[i] != "scaled_distance").collect();
        if keep.len() + 1 != target.header.len() {
            return Err(CliError::Report(format!("{name} has incompatible columns")));
        }
        for row in &table.rows {
            let mut cells = vec![Cell::from(name.trim_end_matches(".csv"))];
            cells.extend(keep.iter().map(|&i| row[i].clone()));
            target.push(cells);
        }
        sources.push(name);
    }
    let verdicts = dir.join("verdicts.json");
    let checks: Option<Value> = if verdicts.exists() {
        let text = std::fs::read_to_string(&verdicts)?;
        Some(serde_json::from_str(&text).map_err(|e| CliError::Report(format!("verdicts.json: {e}")))?)
    } else {
        None
    };
    let merged = merged.ok_or_else(|| CliError::Report(format!("no spectral.csv or asymptotics.csv in {}", dir.display())))?;
    art.csv("merged.csv", &merged)?;
    scan.sort_by(|a, b| a.0.total_cmp(&b.0));
    let checks_passed = checks.as_ref().and_then(|c| c["verdicts"].as_array()).map(|v| v.iter().all(|x| x["passed"] == true));
    let summary = json!({
        "command": "report",
        "sources": sources,
        "rows": merged.rows.len(),
        "lambda": scan.iter().map(|p| p.0).collect::<Vec<_>>(),
        "trace": scan.iter().map(|p| p.1).collect::<Vec<_>>(),
        "slope_log_trace_vs_log_lambda": log_slope(&scan),
        "checks_passed": checks_passed,
    });
    art.json("summary.json", &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [0.4, 0.2, 0.1].iter().map(|l: &f64| (*l, 3.0 * l.powf(-2.0))).collect();
        assert!((log_slope(&pts).unwrap() + 2.0).abs() < 1e-12);
        assert_eq!(log_slope(&pts[..1]), None);
    }

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(CliError::CheckFailed(String::new()).exit_code(), 1);
        assert_eq!(CliError::from(SpectralError::ValidationFailed(String::new())).exit_code(), 1);
        assert_eq!(CliError::from(FieldError::new("a", "b")).exit_code(), 2);
        assert_eq!(CliError::Report(String::new()).exit_code(), 3);
    }
}
