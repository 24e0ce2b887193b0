//! Directional Malliavin derivatives of the Picard solution.
//!
//! For a Cameron–Martin direction with density `xi`, `Y_t = <DX_t, xi>`
//! solves the linear Volterra equation
//!
//! ```text
//! Y_t = int_0^t K(t,s) sigma(X_s) xi_s ds
//!     + int_0^t K(t,s) b'(X_s) Y_s ds + int_0^t K(t,s) sigma'(X_s) Y_s dB_s.
//! ```
//!
//! Three discretisations are provided: Picard iteration on that equation
//! ([`derivative_linear_solve`]), the resolvent series
//! `L = sum_n V_n` ([`variation_series`], [`parameter_variation`]) and a
//! central difference along the shifted Brownian path
//! ([`cameron_martin_fd`]).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::kernel::{dot, LowerTriangular};
use crate::simulate::BrownianPath;
use crate::solver::Solver;

/// Density `xi` of a Cameron–Martin direction `h(t) = int_0^t xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    xi: GridFunction,
}

impl Direction {
    pub fn new(xi: GridFunction) -> Self {
        Self { xi }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Ok(Self::new(GridFunction::from_fn(grid, f)?))
    }

    pub fn xi(&self) -> &GridFunction {
        &self.xi
    }

    /// `h(t_i) = sum_{j<i} xi_j step`, the left-rectangle primitive.
    pub fn h(&self) -> GridFunction {
        let grid = *self.xi.grid();
        let mut acc = 0.0;
        let mut values = vec![0.0];
        for x in &self.xi.values()[..grid.n_steps()] {
            acc += x * grid.step();
            values.push(acc);
        }
        GridFunction::new(grid, values).expect("finite direction")
    }
}

/// Linearised coefficients along a solution path.
struct Linearisation {
    /// `b'(t_k, X_k)`
    db: Vec<f64>,
    /// `sigma'(t_k, X_k) dB_k`
    dsigma_db: Vec<f64>,
    /// `sigma(t_k, X_k)`
    sigma: Vec<f64>,
}

fn linearise(solver: &Solver, x: &GridFunction, bm: &BrownianPath) -> Result<Linearisation> {
    let grid = *solver.grid();
    grid.ensure_same(x.grid())?;
    grid.ensure_same(bm.grid())?;
    let p = solver.problem();
    let n = grid.n_steps();
    let mut lin = Linearisation {
        db: Vec::with_capacity(n),
        dsigma_db: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
    };
    for k in 0..n {
        let t = grid.node(k);
        lin.db.push((p.db_dx)(t, x[k]));
        lin.dsigma_db.push((p.dsigma_dx)(t, x[k]) * bm.increments()[k]);
        lin.sigma.push((p.sigma)(t, x[k]));
    }
    let all = lin.db.iter().chain(&lin.dsigma_db).chain(&lin.sigma);
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite coefficient along the path".into()));
    }
    Ok(lin)
}

/// `Y(t_i) = sum_{j<i} W_det[i][j] sigma_j xi_j
///        + sum_{j<i} (W_det[i][j] b'_j + W_sto[i][j] sigma'_j dB_j) Y_j`,
/// solved by Picard iteration with the solver's tolerance and iteration cap.
pub fn derivative_linear_solve(
    solver: &Solver,
    x: &GridFunction,
    bm: &BrownianPath,
    d: &Direction,
) -> Result<GridFunction> {
    let grid = *solver.grid();
    grid.ensure_same(d.xi().grid())?;
    let lin = linearise(solver, x, bm)?;
    let n = grid.n_steps();
    let det = solver.deterministic();
    let sto = solver.stochastic();
    let forcing: Vec<f64> = (0..n).map(|j| lin.sigma[j] * d.xi()[j]).collect();
    let source = det.apply(&forcing);

    let cfg = solver.config();
    let mut y = vec![0.0; n + 1];
    let mut next = vec![0.0; n + 1];
    let mut a = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut deltas = Vec::new();
    for _ in 0..cfg.max_picard_iters {
        for k in 0..n {
            a[k] = lin.db[k] * y[k];
            c[k] = lin.dsigma_db[k] * y[k];
        }
        let mut delta = 0.0f64;
        for i in 1..=n {
            next[i] = source[i] + dot(det.row(i), &a[..i]) + dot(sto.row(i), &c[..i]);
            delta = delta.max((next[i] - y[i]).abs());
        }
        std::mem::swap(&mut y, &mut next);
        deltas.push(delta);
        if !delta.is_finite() {
            return Err(Error::Numeric("derivative iterate became non-finite".into()));
        }
        if delta < cfg.tol {
            return GridFunction::new(grid, y);
        }
    }
    Err(Error::Convergence { deltas, last: y })
}

/// Truncated resolvent `L = V_0 + V_1 + ...` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationKernel {
    grid: Grid,
    l: LowerTriangular,
    v0: LowerTriangular,
    residual_norm: f64,
    /// Discrete `L^r` norm of every term added, `V_0` first.
    pub tail_norms: Vec<f64>,
    pub terms_used: usize,
    pub r_exponent: f64,
}

impl VariationKernel {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `L[i][j]`, the cell weight of `L(t_i, .)` on cell `j`.
    pub fn l(&self) -> &LowerTriangular {
        &self.l
    }

    pub fn v0(&self) -> &LowerTriangular {
        &self.v0
    }

    /// Norm of the last term added.
    pub fn tail_norm(&self) -> f64 {
        self.tail_norms.last().copied().unwrap_or(0.0)
    }

    /// Discrete `L^r` norm of `L - V_0 - A L`, the defect of the truncated
    /// series in the resolvent equation. It equals the norm of the first
    /// omitted term.
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn write_csv(&self, w: impl Write) -> std::io::Result<()> {
        self.l.write_csv(w, "l")
    }
}

/// Multiplies by the discrete linearised operator:
/// `(A V)[i][j] = sum_{j<k<i} (W_det[i][k] b'_k + W_sto[i][k] sigma'_k dB_k) V[k][j]`.
fn apply_operator(solver: &Solver, lin: &Linearisation, v: &LowerTriangular) -> LowerTriangular {
    let n_nodes = v.n_nodes();
    let det = solver.deterministic();
    let sto = solver.stochastic();
    let mut out = LowerTriangular::zeros(n_nodes);
    let mut coeff = vec![0.0; n_nodes];
    for i in 2..n_nodes {
        let (dr, sr) = (det.row(i), sto.row(i));
        for k in 0..i {
            coeff[k] = dr[k] * lin.db[k] + sr[k] * lin.dsigma_db[k];
        }
        let row = out.row_mut(i);
        for k in 1..i {
            let a = coeff[k];
            if a == 0.0 {
                continue;
            }
            for (o, vk) in row[..k].iter_mut().zip(v.row(k)) {
                *o += a * vk;
            }
        }
    }
    out
}

pub const DEFAULT_TERMS: usize = 25;
pub const DEFAULT_SERIES_TOL: f64 = 1e-10;
const DIVERGENCE_RUN: usize = 5;

/// `V_0 = W_det[i][j] g(t_j)` with `t_0` replaced by `step / 2`.
pub fn weighted_kernel_v0(solver: &Solver) -> Result<LowerTriangular> {
    let grid = *solver.grid();
    let g = g_on_grid(solver)?;
    let det = solver.deterministic();
    Ok(LowerTriangular::from_fn(grid.n_nodes(), |i, j| det.get(i, j) * g[j]))
}

fn g_on_grid(solver: &Solver) -> Result<Vec<f64>> {
    let grid = *solver.grid();
    grid.nodes()
        .enumerate()
        .map(|(j, t)| {
            let t = if j == 0 { 0.5 * grid.step() } else { t };
            solver.problem().kernel.g_weight(t)
        })
        .collect()
}

/// Sums `V_{n+1} = A V_n` until the discrete `L^r` norm of a term falls
/// below `tol`, `n_terms` terms have been added or the norms grow for five
/// terms in a row.
pub fn variation_series(
    solver: &Solver,
    x: &GridFunction,
    bm: &BrownianPath,
    v0: LowerTriangular,
    n_terms: usize,
    tol: f64,
) -> Result<VariationKernel> {
    let grid = *solver.grid();
    if v0.n_nodes() != grid.n_nodes() {
        return argument(format!("V_0 has {} nodes, grid has {}", v0.n_nodes(), grid.n_nodes()));
    }
    if !v0.is_finite() {
        return domain("V_0 has non-finite entries");
    }
    if n_terms == 0 {
        return argument("n_terms must be at least 1");
    }
    let lin = linearise(solver, x, bm)?;
    let r = solver.config().r_exponent;
    let step = grid.step();
    let mut l = v0.clone();
    let mut tail_norms = vec![v0.lr_norm(r, step)];
    let mut term = v0.clone();
    let residual_norm = loop {
        let next = apply_operator(solver, &lin, &term);
        let norm = next.lr_norm(r, step);
        if !norm.is_finite() {
            return Err(Error::Divergence { tail_norms });
        }
        if norm == 0.0 || tail_norms.len() == n_terms || tail_norms.last().is_some_and(|&t| t < tol) {
            break norm;
        }
        for i in 1..l.n_nodes() {
            for (a, b) in l.row_mut(i).iter_mut().zip(next.row(i)) {
                *a += b;
            }
        }
        tail_norms.push(norm);
        let growing = tail_norms.len() > DIVERGENCE_RUN
            && tail_norms[tail_norms.len() - DIVERGENCE_RUN - 1..]
                .windows(2)
                .all(|w| w[1] > w[0]);
        if growing {
            return Err(Error::Divergence { tail_norms });
        }
        term = next;
    };
    Ok(VariationKernel {
        grid,
        l,
        v0,
        residual_norm,
        terms_used: tail_norms.len(),
        tail_norms,
        r_exponent: r,
    })
}

/// Discrete `L^r` norm of `L - V_0 - A L`, recomputed from scratch.
pub fn resolvent_residual(
    solver: &Solver,
    x: &GridFunction,
    bm: &BrownianPath,
    vk: &VariationKernel,
) -> Result<f64> {
    let lin = linearise(solver, x, bm)?;
    let al = apply_operator(solver, &lin, vk.l());
    let defect = LowerTriangular::from_fn(vk.grid.n_nodes(), |i, j| {
        vk.l.get(i, j) - vk.v0.get(i, j) - al.get(i, j)
    });
    Ok(defect.lr_norm(vk.r_exponent, vk.grid.step()))
}

/// `Y(t_i) = sum_{j<i} L[i][j] sigma(t_j, X_j) g(t_j)^{-1} xi_j`, with `L`
/// built from `V_0 = K g`.
pub fn parameter_variation(
    vk: &VariationKernel,
    solver: &Solver,
    x: &GridFunction,
    d: &Direction,
) -> Result<GridFunction> {
    let grid = *vk.grid();
    grid.ensure_same(solver.grid())?;
    grid.ensure_same(x.grid())?;
    grid.ensure_same(d.xi().grid())?;
    let g = g_on_grid(solver)?;
    let p = solver.problem();
    let weighted: Vec<f64> = (0..grid.n_nodes())
        .map(|j| d.xi()[j] / g[j])
        .collect();
    // membership check: xi / g must have a finite discrete L^r norm
    let r = solver.config().r_exponent;
    let norm = weighted.iter().map(|v| v.abs().powf(r)).sum::<f64>() * grid.step();
    if !norm.is_finite() {
        return domain("xi / g has no finite L^r norm: direction outside the admissible space");
    }
    let forcing: Vec<f64> = (0..grid.n_nodes())
        .map(|j| (p.sigma)(grid.node(j), x[j]) * weighted[j])
        .collect();
    GridFunction::new(grid, vk.l().apply(&forcing))
}

/// `(X^+ - X^-) / (2 eps)` where `X^±` solve the equation driven by
/// `B ± eps h`.
pub fn cameron_martin_fd(
    solver: &Solver,
    bm: &BrownianPath,
    d: &Direction,
    eps: f64,
) -> Result<GridFunction> {
    if !(eps > 0.0) {
        return domain(format!("eps must be positive, got {eps}"));
    }
    let plus = solver.picard_solve(&bm.shifted(d.xi(), eps)?)?.path;
    let minus = solver.picard_solve(&bm.shifted(d.xi(), -eps)?)?.path;
    plus.combine(0.5 / eps, &minus, -0.5 / eps)
}

/// `sup |a - b| / min(sup |a|, sup |b|)`, zero when both vanish.
pub fn relative_gap(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    let d = a.sup_distance(b)?;
    let scale = a.sup_norm().min(b.sup_norm());
    Ok(if d == 0.0 { 0.0 } else { d / scale })
}

/// Pairwise gaps between the three derivative computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub linear_vs_variation: f64,
    pub linear_vs_fd: f64,
    pub variation_vs_fd: f64,
    pub tail_norms: Vec<f64>,
    pub terms_used: usize,
    pub resolvent_residual: f64,
    pub eps: f64,
}

impl ConsistencyReport {
    pub fn max_gap(&self) -> f64 {
        self.linear_vs_variation.max(self.linear_vs_fd).max(self.variation_vs_fd)
    }
}

/// The three derivatives of the solution on `bm` in direction `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTriangle {
    pub linear: GridFunction,
    pub variation: GridFunction,
    pub fd: GridFunction,
    pub report: ConsistencyReport,
}

pub fn oracle_triangle(
    solver: &Solver,
    bm: &BrownianPath,
    d: &Direction,
    eps: f64,
) -> Result<OracleTriangle> {
    let x = solver.picard_solve(bm)?.path;
    let linear = derivative_linear_solve(solver, &x, bm, d)?;
    let vk = variation_series(
        solver,
        &x,
        bm,
        weighted_kernel_v0(solver)?,
        DEFAULT_TERMS,
        DEFAULT_SERIES_TOL,
    )?;
    let variation = parameter_variation(&vk, solver, &x, d)?;
    let fd = cameron_martin_fd(solver, bm, d, eps)?;
    let report = ConsistencyReport {
        linear_vs_variation: relative_gap(&linear, &variation)?,
        linear_vs_fd: relative_gap(&linear, &fd)?,
        variation_vs_fd: relative_gap(&variation, &fd)?,
        resolvent_residual: resolvent_residual(solver, &x, bm, &vk)?,
        tail_norms: vk.tail_norms.clone(),
        terms_used: vk.terms_used,
        eps,
    };
    Ok(OracleTriangle {
        linear,
        variation,
        fd,
        report,
    })
}
