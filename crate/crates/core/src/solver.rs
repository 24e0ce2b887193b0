//! Picard iteration for
//!
//! ```text
//! X_t = x + int_0^t K(t, s) b(s, X_s) ds + int_0^t K(t, s) sigma(s, X_s) dB_s
//! ```
//!
//! on a uniform grid, with coefficients frozen at left endpoints.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::kernel::{dot, KernelMatrix, KernelSpec, Mode};
use crate::simulate::{sample_brownian, BrownianPath, PathEnsemble};

/// A coefficient `(t, x) -> value`.
pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

fn zero() -> Coefficient {
    Arc::new(|_, _| 0.0)
}

/// Data of the equation: initial value, drift `b`, diffusion `sigma`, their
/// `x`-derivatives and the kernel. The Lipschitz constant is the caller's
/// claim and is only reported, never checked.
#[derive(Clone)]
pub struct SdeProblem {
    pub x0: f64,
    pub b: Coefficient,
    pub sigma: Coefficient,
    pub db_dx: Coefficient,
    pub dsigma_dx: Coefficient,
    pub lipschitz_hint: f64,
    pub kernel: KernelSpec,
}

impl SdeProblem {
    /// `b = sigma = 0`; add coefficients with the `with_*` builders.
    pub fn new(x0: f64, kernel: KernelSpec) -> Self {
        Self {
            x0,
            b: zero(),
            sigma: zero(),
            db_dx: zero(),
            dsigma_dx: zero(),
            lipschitz_hint: 1.0,
            kernel,
        }
    }

    pub fn with_drift(
        mut self,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        db_dx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.b = Arc::new(b);
        self.db_dx = Arc::new(db_dx);
        self
    }

    pub fn with_diffusion(
        mut self,
        sigma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dsigma_dx: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.sigma = Arc::new(sigma);
        self.dsigma_dx = Arc::new(dsigma_dx);
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz_hint = l;
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("x0", &self.x0)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .field("kernel", &self.kernel)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: Grid,
    pub tol: f64,
    pub max_picard_iters: usize,
    /// Integrability exponent used for moment and norm diagnostics only.
    pub r_exponent: f64,
}

impl SolverConfig {
    /// Tolerance `1e-8`, at most 50 iterations and `r = max(2, 1/H) + 0.1`
    /// (`2.1` when the kernel has no Hurst parameter).
    pub fn new(grid: Grid, kernel: &KernelSpec) -> Self {
        let inv_h = kernel.hurst().map_or(0.0, |h| 1.0 / h);
        Self {
            grid,
            tol: 1e-8,
            max_picard_iters: 50,
            r_exponent: inv_h.max(2.0) + 0.1,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_picard_iters = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return argument(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_picard_iters < 1 {
            return argument("max_picard_iters must be at least 1");
        }
        if !(self.r_exponent > 2.0) {
            return argument(format!("r_exponent must exceed 2, got {}", self.r_exponent));
        }
        Ok(())
    }
}

/// Result of one Picard run.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardSolution {
    pub path: GridFunction,
    pub iters: usize,
    /// `sup_i |X^n(t_i) - X^{n-1}(t_i)|` for every iteration.
    pub deltas: Vec<f64>,
}

impl PicardSolution {
    pub fn final_delta(&self) -> f64 {
        self.deltas.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostics {
    pub seed: u64,
    pub iters: usize,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSolution {
    pub ensemble: PathEnsemble,
    pub diagnostics: Vec<PathDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDiagnostics {
    pub r_exponent: f64,
    pub max_iters: usize,
    pub mean_iters: f64,
    /// Empirical `E[sup_t |X_t|^r]`.
    pub sup_moment: f64,
    pub paths: Vec<PathDiagnostics>,
}

impl EnsembleSolution {
    pub fn summary(&self, r: f64) -> EnsembleDiagnostics {
        let n = self.diagnostics.len() as f64;
        EnsembleDiagnostics {
            r_exponent: r,
            max_iters: self.diagnostics.iter().map(|d| d.iters).max().unwrap_or(0),
            mean_iters: self.diagnostics.iter().map(|d| d.iters as f64).sum::<f64>() / n,
            sup_moment: self
                .ensemble
                .paths()
                .iter()
                .map(|p| p.sup_norm().powf(r))
                .sum::<f64>()
                / n,
            paths: self.diagnostics.clone(),
        }
    }
}

/// Paths started from several initial values on one Brownian path.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTable {
    pub x_values: Vec<f64>,
    pub paths: Vec<GridFunction>,
    /// `distances[a][b] = sup_t |X^{x_a}_t - X^{x_b}_t|`.
    pub distances: Vec<Vec<f64>>,
}

/// Kernel matrices for one problem and grid, ready to solve many paths.
pub struct Solver {
    problem: SdeProblem,
    cfg: SolverConfig,
    det: KernelMatrix,
    sto: KernelMatrix,
}

impl fmt::Debug for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Solver")
            .field("problem", &self.problem)
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl Solver {
    pub fn new(problem: SdeProblem, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let det = KernelMatrix::build(&problem.kernel, cfg.grid, Mode::Deterministic)?;
        let sto = KernelMatrix::build(&problem.kernel, cfg.grid, Mode::Stochastic)?;
        Ok(Self {
            problem,
            cfg,
            det,
            sto,
        })
    }

    pub fn problem(&self) -> &SdeProblem {
        &self.problem
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.cfg.grid
    }

    pub fn deterministic(&self) -> &KernelMatrix {
        &self.det
    }

    pub fn stochastic(&self) -> &KernelMatrix {
        &self.sto
    }

    /// Same matrices, different initial value.
    pub fn with_x0(&self, x0: f64) -> Self {
        Self {
            problem: self.problem.clone().with_x0(x0),
            cfg: self.cfg,
            det: self.det.clone(),
            sto: self.sto.clone(),
        }
    }

    /// Iterates from `X^0 = x` until the sup-norm change drops below `tol`.
    pub fn picard_solve(&self, bm: &BrownianPath) -> Result<PicardSolution> {
        self.picard_from(self.problem.x0, bm)
    }

    fn picard_from(&self, x0: f64, bm: &BrownianPath) -> Result<PicardSolution> {
        let grid = self.cfg.grid;
        grid.ensure_same(bm.grid())?;
        let n = grid.n_steps();
        let db = bm.increments();
        let p = &self.problem;
        let mut x = vec![x0; n + 1];
        let mut next = vec![x0; n + 1];
        let mut drift = vec![0.0; n];
        let mut noise = vec![0.0; n];
        let mut deltas = Vec::new();
        for iter in 1..=self.cfg.max_picard_iters {
            for j in 0..n {
                let t = grid.node(j);
                drift[j] = (p.b)(t, x[j]);
                noise[j] = (p.sigma)(t, x[j]) * db[j];
            }
            let mut delta = 0.0f64;
            for i in 1..=n {
                next[i] = x0 + dot(self.det.row(i), &drift[..i]) + dot(self.sto.row(i), &noise[..i]);
                delta = delta.max((next[i] - x[i]).abs());
            }
            if !delta.is_finite() {
                return Err(Error::Numeric(format!(
                    "Picard iterate became non-finite at iteration {iter} (seed {})",
                    bm.seed()
                )));
            }
            std::mem::swap(&mut x, &mut next);
            deltas.push(delta);
            if delta < self.cfg.tol {
                return Ok(PicardSolution {
                    path: GridFunction::new(grid, x)?,
                    iters: iter,
                    deltas,
                });
            }
        }
        Err(Error::Convergence { deltas, last: x })
    }

    /// One Picard solve per seed `base_seed + k`, in parallel.
    pub fn solve_ensemble(&self, n_paths: usize, base_seed: u64) -> Result<EnsembleSolution> {
        if n_paths == 0 {
            return argument("n_paths must be at least 1");
        }
        let seeds: Vec<u64> = (0..n_paths as u64).map(|k| base_seed.wrapping_add(k)).collect();
        let results: Vec<(u64, Result<PicardSolution>)> = seeds
            .par_iter()
            .map(|&seed| (seed, self.picard_solve(&sample_brownian(self.cfg.grid, seed))))
            .collect();
        let failed: Vec<u64> = results
            .iter()
            .filter(|(_, r)| r.is_err())
            .map(|(s, _)| *s)
            .collect();
        if !failed.is_empty() {
            return Err(Error::EnsembleFailure { seeds: failed });
        }
        let mut paths = Vec::with_capacity(n_paths);
        let mut diagnostics = Vec::with_capacity(n_paths);
        for (seed, r) in results {
            let sol = r?;
            diagnostics.push(PathDiagnostics {
                seed,
                iters: sol.iters,
                deltas: sol.deltas,
            });
            paths.push(sol.path);
        }
        Ok(EnsembleSolution {
            ensemble: PathEnsemble::new(paths, seeds, "picard")?,
            diagnostics,
        })
    }

    /// Solves from every `x` in `x_values` on the same Brownian path.
    pub fn initial_condition_sensitivity(
        &self,
        x_values: &[f64],
        bm: &BrownianPath,
    ) -> Result<SensitivityTable> {
        if x_values.len() < 2 {
            return argument("sensitivity needs at least two initial values");
        }
        let paths = x_values
            .iter()
            .map(|&x| self.picard_from(x, bm).map(|s| s.path))
            .collect::<Result<Vec<_>>>()?;
        let distances = paths
            .iter()
            .map(|a| paths.iter().map(|b| a.sup_distance(b)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(SensitivityTable {
            x_values: x_values.to_vec(),
            paths,
            distances,
        })
    }
}
