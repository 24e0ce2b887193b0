use std::fmt;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use volterra_core::fraccalc::{default_holder_scales, estimate_holder_exponent};
use volterra_core::malliavin::{oracle_triangle, Direction};
use volterra_core::simulate::{
    covariance_rh, ensemble_covariance, fbm_kernel_ensemble_streaming, sample_brownian, v_h,
    PathEnsemble,
};
use volterra_core::solver::{SdeProblem, Solver, SolverConfig};
use volterra_core::{Grid, KernelMatrix, KernelSpec, Mode};

use crate::acceptance::{self, AcceptanceReport};
use crate::config::{Command, Format, RunConfig};
use crate::manifest::{Manifest, OutputDir};
use crate::CliError;

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub acceptance: Option<AcceptanceReport>,
}

/// Mean-reverting equation with bounded multiplicative noise:
/// `b = -x`, `sigma = 0.5 / sqrt(1 + x^2)`, `X_0 = 1`.
pub fn picard_test_problem(hurst: f64) -> Result<SdeProblem, CliError> {
    Ok(SdeProblem::new(1.0, KernelSpec::fbm(hurst)?)
        .with_drift(|_, x| -x, |_, _| -1.0)
        .with_diffusion(
            |_, x| 0.5 / (1.0 + x * x).sqrt(),
            |_, x| -0.5 * x / (1.0 + x * x).powf(1.5),
        ))
}

/// `b = -x + 0.5 sin x` from `X_0 = 0.5`, with either unit additive noise
/// or the bounded multiplicative noise of [`picard_test_problem`].
pub fn malliavin_test_problem(hurst: f64, multiplicative: bool) -> Result<SdeProblem, CliError> {
    let p = SdeProblem::new(0.5, KernelSpec::fbm(hurst)?)
        .with_drift(|_, x| -x + 0.5 * x.sin(), |_, x| -1.0 + 0.5 * x.cos());
    Ok(if multiplicative {
        p.with_diffusion(
            |_, x| 0.5 / (1.0 + x * x).sqrt(),
            |_, x| -0.5 * x / (1.0 + x * x).powf(1.5),
        )
    } else {
        p.with_diffusion(|_, _| 1.0, |_, _| 0.0)
    })
}

/// Direction `xi(t) = 1 + sin(2 pi t)` used by the Malliavin experiments.
pub fn test_direction(grid: Grid) -> Result<Direction, CliError> {
    Ok(Direction::from_fn(grid, |t| {
        1.0 + (2.0 * std::f64::consts::PI * t).sin()
    })?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Real(f64),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            Self::Real(v) => write!(f, "{v:e}"),
        }
    }
}

/// Column-labelled data written as CSV or as `{"columns": .., "rows": ..}`.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::to_string).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Writes `<stem>.csv` or `<stem>.json`.
    pub fn write(&self, out: &mut OutputDir, stem: &str, format: Format) -> Result<(), CliError> {
        match format {
            Format::Csv => out.write(&format!("{stem}.csv"), self.to_csv().as_bytes()),
            Format::Json => out.write_json(&format!("{stem}.json"), self),
        }
    }

    /// Nodes as rows, paths as columns, time first.
    pub fn from_ensemble(ens: &PathEnsemble) -> Self {
        let mut table = Self::new(
            std::iter::once("t".to_string()).chain((0..ens.len()).map(|k| format!("path_{k}"))),
        );
        for (i, t) in ens.grid().nodes().enumerate() {
            let mut row = vec![Cell::Real(t)];
            row.extend(ens.paths().iter().map(|p| Cell::Real(p[i])));
            table.push(row);
        }
        table
    }
}

fn seed_range(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|k| base.wrapping_add(k)).collect()
}

/// Executes `cfg.command`, writing data files and `manifest.json` under
/// `cfg.output_path`. A failing acceptance criterion is reported as
/// [`CliError::Failed`] after every artifact and the manifest are written.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = OutputDir::create(&cfg.output_path)?;
    let mut timings = Vec::new();
    let mut report = None;
    let grid = Grid::unit(cfg.n_steps)?;
    let seeds = match cfg.command {
        Command::Fbm => fbm(cfg, grid, &mut out)?,
        Command::Solve => solve(cfg, grid, &mut out)?,
        Command::Malliavin => malliavin(cfg, grid, &mut out)?,
        Command::VerifyCov => verify_cov(cfg, grid, &mut out)?,
        Command::Holder => holder(cfg, grid, &mut out)?,
        Command::KernelDump => kernel_dump(cfg, grid, &mut out)?,
        Command::Acceptance => {
            let r = acceptance::run_suite(cfg.seed, &mut out, &mut timings, |c| {
                println!("{}", c.line())
            })?;
            let seeds = acceptance::criterion_seeds(cfg.seed);
            report = Some(r);
            seeds
        }
    };
    timings.push((cfg.command.name().to_string(), start.elapsed().as_secs_f64()));
    let manifest = Manifest::build(&out, cfg, seeds, start.elapsed(), timings)?;
    manifest.write(out.root())?;
    if let Some(r) = &report {
        let failed = r.failed_ids();
        if !failed.is_empty() {
            return Err(CliError::Failed(format!("acceptance criteria failed: {failed:?}")));
        }
    }
    Ok(RunOutcome {
        manifest,
        acceptance: report,
    })
}

fn fbm(cfg: &RunConfig, grid: Grid, out: &mut OutputDir) -> Result<Vec<u64>, CliError> {
    let spec = KernelSpec::fbm(cfg.hurst)?;
    let ens = fbm_kernel_ensemble_streaming(&spec, grid, cfg.n_paths, cfg.seed)?;
    Table::from_ensemble(&ens).write(out, "paths", cfg.format)?;
    out.write_json("ensemble.json", &ens.metadata())?;
    Ok(ens.seeds().to_vec())
}

fn solve(cfg: &RunConfig, grid: Grid, out: &mut OutputDir) -> Result<Vec<u64>, CliError> {
    let problem = picard_test_problem(cfg.hurst)?;
    let sc = SolverConfig::new(grid, &problem.kernel).with_tol(cfg.tol);
    let solver = Solver::new(problem, sc)?;
    let sol = solver.solve_ensemble(cfg.n_paths, cfg.seed)?;
    Table::from_ensemble(&sol.ensemble).write(out, "paths", cfg.format)?;
    out.write_json("diagnostics.json", &sol.summary(sc.r_exponent))?;
    Ok(sol.ensemble.seeds().to_vec())
}

fn malliavin(cfg: &RunConfig, grid: Grid, out: &mut OutputDir) -> Result<Vec<u64>, CliError> {
    let problem = malliavin_test_problem(cfg.hurst, true)?;
    let sc = SolverConfig::new(grid, &problem.kernel).with_tol(cfg.tol);
    let solver = Solver::new(problem, sc)?;
    let bm = sample_brownian(grid, cfg.seed);
    let tri = oracle_triangle(&solver, &bm, &test_direction(grid)?, 1e-4)?;
    let mut table = Table::new(["t", "linear", "variation", "finite_difference"]);
    for (i, t) in grid.nodes().enumerate() {
        table.push(vec![
            Cell::Real(t),
            Cell::Real(tri.linear[i]),
            Cell::Real(tri.variation[i]),
            Cell::Real(tri.fd[i]),
        ]);
    }
    table.write(out, "derivatives", cfg.format)?;
    out.write_json("consistency.json", &tri.report)?;
    Ok(vec![cfg.seed])
}

fn verify_cov(cfg: &RunConfig, grid: Grid, out: &mut OutputDir) -> Result<Vec<u64>, CliError> {
    if cfg.n_paths < 2 {
        return Err(CliError::Usage("n_paths must be at least 2 for verify-cov".into()));
    }
    let spec = KernelSpec::fbm(cfg.hurst)?;
    let ens = fbm_kernel_ensemble_streaming(&spec, grid, cfg.n_paths, cfg.seed)?;
    let est = ensemble_covariance(&ens)?;
    let mut table = Table::new(["i", "j", "s", "t", "empirical", "exact", "se"]);
    let (mut max_abs, mut max_z, mut within) = (0.0f64, 0.0f64, 0usize);
    for i in 1..grid.n_nodes() {
        for j in i..grid.n_nodes() {
            let (s, t) = (grid.node(i), grid.node(j));
            let (emp, exact, se) = (est.cov(i, j), covariance_rh(cfg.hurst, s, t)?, est.se(i, j));
            let err = (emp - exact).abs();
            max_abs = max_abs.max(err);
            if se > 0.0 {
                max_z = max_z.max(err / se);
            }
            if err <= 4.0 * se + 0.03 * exact.abs() {
                within += 1;
            }
            table.push(vec![
                Cell::Int(i as u64),
                Cell::Int(j as u64),
                Cell::Real(s),
                Cell::Real(t),
                Cell::Real(emp),
                Cell::Real(exact),
                Cell::Real(se),
            ]);
        }
    }
    let entries = table.rows.len();
    table.write(out, "covariance", cfg.format)?;
    let n = grid.n_steps();
    out.write_json(
        "covariance_report.json",
        &json!({
            "H": cfg.hurst,
            "N": n,
            "n_paths": cfg.n_paths,
            "entries": entries,
            "max_abs_error": max_abs,
            "max_standard_errors": max_z,
            "fraction_within_4se_plus_3pct": within as f64 / entries as f64,
            "variance_at_horizon": est.cov(n, n),
            "v_h": v_h(cfg.hurst)?,
        }),
    )?;
    Ok(ens.seeds().to_vec())
}

fn holder(cfg: &RunConfig, grid: Grid, out: &mut OutputDir) -> Result<Vec<u64>, CliError> {
    let spec = KernelSpec::fbm(cfg.hurst)?;
    let ens = fbm_kernel_ensemble_streaming(&spec, grid, cfg.n_paths, cfg.seed)?;
    let scales = default_holder_scales(grid.n_steps());
    let estimates = ens
        .paths()
        .iter()
        .map(|p| estimate_holder_exponent(p, &scales))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(["seed", "estimate"]);
    for (seed, e) in ens.seeds().iter().zip(&estimates) {
        table.push(vec![Cell::Int(*seed), Cell::Real(*e)]);
    }
    table.write(out, "holder", cfg.format)?;
    out.write_json(
        "holder_summary.json",
        &json!({
            "H": cfg.hurst,
            "N": grid.n_steps(),
            "lags": scales,
            "median": median(&estimates),
            "min": estimates.iter().copied().fold(f64::INFINITY, f64::min),
            "max": estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }),
    )?;
    Ok(seed_range(cfg.seed, cfg.n_paths))
}

fn kernel_dump(cfg: &RunConfig, grid: Grid, out: &mut OutputDir) -> Result<Vec<u64>, CliError> {
    let spec = KernelSpec::fbm(cfg.hurst)?;
    for (mode, stem) in [
        (Mode::Deterministic, "kernel_deterministic"),
        (Mode::Stochastic, "kernel_stochastic"),
    ] {
        let kmat = KernelMatrix::build(&spec, grid, mode)?;
        match cfg.format {
            Format::Csv => {
                let mut bytes = Vec::new();
                kmat.write_csv(&mut bytes)?;
                out.write(&format!("{stem}.csv"), &bytes)?;
            }
            Format::Json => {
                let mut table = Table::new(["row", "col", "weight"]);
                for i in 0..grid.n_nodes() {
                    for (j, w) in kmat.row(i).iter().enumerate() {
                        table.push(vec![Cell::Int(i as u64), Cell::Int(j as u64), Cell::Real(*w)]);
                    }
                }
                table.write(out, stem, Format::Json)?;
            }
        }
    }
    Ok(Vec::new())
}

/// Median of a non-empty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}
