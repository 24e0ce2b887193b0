//! Gaussian path generation and ensemble statistics.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::kernel::{dot, KernelMatrix, KernelSpec, Mode, RowBuilder};
use crate::specialfn::gamma_fn;

/// Brownian increments `dB_j = B(t_{j+1}) - B(t_j)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: Grid,
    increments: Vec<f64>,
    seed: u64,
}

impl BrownianPath {
    pub fn from_increments(grid: Grid, increments: Vec<f64>, seed: u64) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return argument(format!(
                "{} increments for a grid with {} steps",
                increments.len(),
                grid.n_steps()
            ));
        }
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite Brownian increment".into()));
        }
        Ok(Self {
            grid,
            increments,
            seed,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `B(t_i)`, starting from zero.
    pub fn cumulative(&self) -> GridFunction {
        let mut values = Vec::with_capacity(self.grid.n_nodes());
        let mut acc = 0.0;
        values.push(acc);
        for d in &self.increments {
            acc += d;
            values.push(acc);
        }
        GridFunction::new(self.grid, values).expect("finite increments give a finite path")
    }

    /// The path shifted by `eps * h` with `h' = xi`: increments become
    /// `dB_j + eps * xi_j * step`.
    pub fn shifted(&self, xi: &GridFunction, eps: f64) -> Result<Self> {
        self.grid.ensure_same(xi.grid())?;
        let step = self.grid.step();
        let increments = self
            .increments
            .iter()
            .zip(xi.values())
            .map(|(d, x)| d + eps * x * step)
            .collect();
        Self::from_increments(self.grid, increments, self.seed)
    }
}

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// `N` independent `Normal(0, step)` increments drawn from a ChaCha8 stream
/// seeded with `seed`.
pub fn sample_brownian(grid: Grid, seed: u64) -> BrownianPath {
    let sd = grid.step().sqrt();
    let increments = normals(seed, grid.n_steps()).into_iter().map(|z| z * sd).collect();
    BrownianPath {
        grid,
        increments,
        seed,
    }
}

/// `V_H = Gamma(2 - 2H) cos(pi H) / (pi H (1 - 2H))`, the variance of
/// `W^H_1`. The removable point `H = 1/2` returns the limit 1.
pub fn v_h(hurst: f64) -> Result<f64> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return domain(format!("Hurst parameter {hurst} outside (0, 1)"));
    }
    let e = hurst - 0.5;
    if e.abs() < 1e-4 {
        // Taylor expansion of cos(pi H) / (1 - 2H) around 1/2, times the
        // remaining smooth factor Gamma(2 - 2H) / H
        let pi = std::f64::consts::PI;
        let ratio = 0.5 * pi * (1.0 - (pi * e).powi(2) / 6.0);
        return Ok(gamma_fn(2.0 - 2.0 * hurst)? * ratio / (pi * hurst));
    }
    let pi = std::f64::consts::PI;
    Ok(gamma_fn(2.0 - 2.0 * hurst)? * (pi * hurst).cos() / (pi * hurst * (1.0 - 2.0 * hurst)))
}

/// `R_H(s, t) = V_H / 2 (s^2H + t^2H - |t - s|^2H)`.
pub fn covariance_rh(hurst: f64, s: f64, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
        return domain(format!("covariance at ({s}, {t}) outside [0, 1]^2"));
    }
    let two_h = 2.0 * hurst;
    Ok(0.5 * v_h(hurst)? * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h)))
}

fn require_stochastic(kmat: &KernelMatrix, bm: &BrownianPath) -> Result<()> {
    if kmat.mode() != Mode::Stochastic {
        return argument("stochastic sums need a stochastic-mode kernel matrix");
    }
    kmat.grid().ensure_same(bm.grid())
}

/// `M(t_i) = sum_{j<i} W[i][j] u(t_j) dB_j`.
pub fn stochastic_convolution(
    kmat: &KernelMatrix,
    u: &GridFunction,
    bm: &BrownianPath,
) -> Result<GridFunction> {
    require_stochastic(kmat, bm)?;
    kmat.grid().ensure_same(u.grid())?;
    let weighted: Vec<f64> = bm
        .increments()
        .iter()
        .zip(u.values())
        .map(|(d, u)| d * u)
        .collect();
    GridFunction::new(*kmat.grid(), kmat.apply(&weighted))
}

/// `W^H(t_i) = sum_{j<i} W[i][j] dB_j` for a stochastic-mode fBm matrix.
pub fn fbm_from_kernel(kmat: &KernelMatrix, bm: &BrownianPath) -> Result<GridFunction> {
    require_stochastic(kmat, bm)?;
    GridFunction::new(*kmat.grid(), kmat.apply(bm.increments()))
}

/// Exact-in-law fBm sampler from the Cholesky factor of `[R_H(t_i, t_j)]`
/// on the nodes `t_1..t_N`.
#[derive(Debug, Clone)]
pub struct CholeskyFbm {
    grid: Grid,
    hurst: f64,
    factor: DMatrix<f64>,
    jitter: f64,
}

const CHOLESKY_JITTER: f64 = 1e-12;

impl CholeskyFbm {
    pub fn new(hurst: f64, grid: Grid) -> Result<Self> {
        let n = grid.n_steps();
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let c = covariance_rh(hurst, grid.node(i + 1), grid.node(j + 1))?;
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        let (factor, jitter) = match Cholesky::new(cov.clone()) {
            Some(c) => (c.unpack(), 0.0),
            None => {
                for i in 0..n {
                    cov[(i, i)] += CHOLESKY_JITTER;
                }
                let c = Cholesky::new(cov).ok_or_else(|| {
                    Error::Numeric(format!(
                        "fBm covariance not positive definite for H = {hurst}, N = {n} even with jitter {CHOLESKY_JITTER:e}"
                    ))
                })?;
                (c.unpack(), CHOLESKY_JITTER)
            }
        };
        Ok(Self {
            grid,
            hurst,
            factor,
            jitter,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Diagonal jitter that was needed for the factorisation (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample(&self, seed: u64) -> GridFunction {
        let z = normals(seed, self.grid.n_steps());
        let mut values = Vec::with_capacity(self.grid.n_nodes());
        values.push(0.0);
        for i in 0..self.grid.n_steps() {
            let row = self.factor.row(i);
            values.push((0..=i).map(|k| row[k] * z[k]).sum());
        }
        GridFunction::new(self.grid, values).expect("finite Cholesky sample")
    }
}

pub fn fbm_cholesky(hurst: f64, grid: Grid, seed: u64) -> Result<GridFunction> {
    Ok(CholeskyFbm::new(hurst, grid)?.sample(seed))
}

/// Paths on a shared grid together with the seeds that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: Grid,
    paths: Vec<GridFunction>,
    seeds: Vec<u64>,
    label: String,
}

/// JSON-friendly description of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub label: String,
    pub n_steps: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub seeds: Vec<u64>,
}

impl PathEnsemble {
    pub fn new(paths: Vec<GridFunction>, seeds: Vec<u64>, label: impl Into<String>) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::Argument("an ensemble needs at least one path".into()))?;
        let grid = *first.grid();
        for p in &paths {
            grid.ensure_same(p.grid())?;
        }
        if seeds.len() != paths.len() {
            return argument(format!("{} seeds for {} paths", seeds.len(), paths.len()));
        }
        Ok(Self {
            grid,
            paths,
            seeds,
            label: label.into(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn paths(&self) -> &[GridFunction] {
        &self.paths
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn metadata(&self) -> EnsembleMetadata {
        EnsembleMetadata {
            label: self.label.clone(),
            n_steps: self.grid.n_steps(),
            horizon: self.grid.horizon(),
            n_paths: self.paths.len(),
            seeds: self.seeds.clone(),
        }
    }

    /// One row per node: `t,path_0,path_1,...`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "t")?;
        for k in 0..self.paths.len() {
            write!(w, ",path_{k}")?;
        }
        writeln!(w)?;
        for (i, t) in self.grid.nodes().enumerate() {
            write!(w, "{t:e}")?;
            for p in &self.paths {
                write!(w, ",{:e}", p[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Sample variance at every node (unbiased).
    pub fn variance(&self) -> Result<Vec<f64>> {
        let cov = ensemble_covariance(self)?;
        Ok((0..self.grid.n_nodes()).map(|i| cov.cov(i, i)).collect())
    }
}

/// Independent Brownian paths with seeds `base_seed + k`, mapped through
/// `f`. Paths are generated in parallel and collected in seed order.
pub fn ensemble_from(
    grid: Grid,
    n_paths: usize,
    base_seed: u64,
    label: impl Into<String>,
    f: impl Fn(&BrownianPath) -> Result<GridFunction> + Sync,
) -> Result<PathEnsemble> {
    let seeds: Vec<u64> = (0..n_paths as u64).map(|k| base_seed.wrapping_add(k)).collect();
    let paths = seeds
        .par_iter()
        .map(|&seed| f(&sample_brownian(grid, seed)))
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::new(paths, seeds, label)
}

/// fBm ensemble through the kernel representation.
pub fn fbm_kernel_ensemble(kmat: &KernelMatrix, n_paths: usize, base_seed: u64) -> Result<PathEnsemble> {
    ensemble_from(*kmat.grid(), n_paths, base_seed, "fbm-kernel", |bm| fbm_from_kernel(kmat, bm))
}

/// fBm ensemble through the covariance factorisation.
pub fn fbm_cholesky_ensemble(
    hurst: f64,
    grid: Grid,
    n_paths: usize,
    base_seed: u64,
) -> Result<PathEnsemble> {
    let chol = CholeskyFbm::new(hurst, grid)?;
    let seeds: Vec<u64> = (0..n_paths as u64).map(|k| base_seed.wrapping_add(k)).collect();
    let paths = seeds.par_iter().map(|&s| chol.sample(s)).collect();
    PathEnsemble::new(paths, seeds, "fbm-cholesky")
}

/// Kernel fBm paths on grids too fine to hold the weight matrix: rows are
/// computed one at a time and applied to every path. Same numbers as
/// [`fbm_kernel_ensemble`].
pub fn fbm_kernel_ensemble_streaming(
    spec: &KernelSpec,
    grid: Grid,
    n_paths: usize,
    base_seed: u64,
) -> Result<PathEnsemble> {
    let builder = RowBuilder::new(spec, grid, Mode::Stochastic)?;
    let seeds: Vec<u64> = (0..n_paths as u64).map(|k| base_seed.wrapping_add(k)).collect();
    let increments: Vec<BrownianPath> = seeds.iter().map(|&s| sample_brownian(grid, s)).collect();
    let columns: Vec<Vec<f64>> = (0..grid.n_nodes())
        .into_par_iter()
        .map_init(
            || vec![0.0; grid.n_nodes()],
            |row, i| {
                let row = &mut row[..i];
                builder.fill(i, row);
                increments
                    .iter()
                    .map(|bm| dot(row, &bm.increments()[..i]))
                    .collect()
            },
        )
        .collect();
    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite weight for {}", spec.label())));
    }
    let paths = (0..n_paths)
        .map(|p| GridFunction::new(grid, columns.iter().map(|c| c[p]).collect()))
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::new(paths, seeds, "fbm-kernel")
}

/// Sample covariance of an ensemble with per-entry standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    n_nodes: usize,
    n_paths: usize,
    mean: Vec<f64>,
    cov: Vec<f64>,
    se: Vec<f64>,
}

impl CovarianceEstimate {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.n_nodes + j]
    }

    /// Standard error of `cov(i, j)`: the sample deviation of the centred
    /// products over `sqrt(n)`.
    pub fn se(&self, i: usize, j: usize) -> f64 {
        self.se[i * self.n_nodes + j]
    }
}

pub fn ensemble_covariance(ens: &PathEnsemble) -> Result<CovarianceEstimate> {
    let n = ens.len();
    if n < 2 {
        return argument("covariance needs at least two paths");
    }
    let m = ens.grid().n_nodes();
    let nf = n as f64;
    let mean: Vec<f64> = (0..m)
        .map(|i| ens.paths().iter().map(|p| p[i]).sum::<f64>() / nf)
        .collect();
    // node-major centred data keeps the inner loops contiguous
    let centred: Vec<Vec<f64>> = (0..m)
        .map(|i| ens.paths().iter().map(|p| p[i] - mean[i]).collect())
        .collect();
    let entries: Vec<(f64, f64)> = (0..m * m)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (&centred[k / m], &centred[k % m]);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for (x, y) in a.iter().zip(b) {
                let p = x * y;
                sum += p;
                sum_sq += p * p;
            }
            let cov = sum / (nf - 1.0);
            let mean_p = sum / nf;
            let var_p = ((sum_sq - nf * mean_p * mean_p) / (nf - 1.0)).max(0.0);
            (cov, (var_p / nf).sqrt())
        })
        .collect();
    let (cov, se) = entries.into_iter().unzip();
    Ok(CovarianceEstimate {
        n_nodes: m,
        n_paths: n,
        mean,
        cov,
        se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn brownian_increment_moments() {
        let grid = Grid::unit(1000).unwrap();
        let pooled: Vec<f64> = (0..100)
            .flat_map(|s| sample_brownian(grid, s).increments().to_vec())
            .collect();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let var = pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(mean.abs() <= 4.0 * se, "mean {mean}, se {se}");
        assert!((var / grid.step() - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn brownian_is_reproducible() {
        let grid = Grid::unit(64).unwrap();
        assert_eq!(sample_brownian(grid, 9), sample_brownian(grid, 9));
        assert_ne!(sample_brownian(grid, 9), sample_brownian(grid, 10));
    }

    #[test]
    fn v_h_values() {
        assert_eq!(v_h(0.5).unwrap(), 1.0);
        for h in [0.5 - 1e-6, 0.5 + 1e-6] {
            assert!((v_h(h).unwrap() - 1.0).abs() < 1e-4);
        }
        for k in 1..10 {
            assert!(v_h(k as f64 / 10.0).unwrap() > 0.0);
        }
        // these equal int_0^1 K_H(1, s)^2 ds
        assert_relative_eq!(v_h(0.25).unwrap(), 1.595_769_121_605_730_7, max_relative = 1e-12);
        assert_relative_eq!(v_h(0.75).unwrap(), 1.063_846_081_070_487_1, max_relative = 1e-12);
        // continuity across the branch switch
        let below = v_h(0.5 - 1.0001e-4).unwrap();
        let above = v_h(0.5 - 0.9999e-4).unwrap();
        assert!((below - above).abs() < 1e-7);
        assert!(v_h(0.0).is_err() && v_h(1.0).is_err());
    }

    #[test]
    fn covariance_examples() {
        for h in [0.25, 0.75] {
            let t = 0.6;
            assert_relative_eq!(
                covariance_rh(h, t, t).unwrap(),
                v_h(h).unwrap() * t.powf(2.0 * h),
                max_relative = 1e-14
            );
            assert_eq!(covariance_rh(h, 0.0, t).unwrap(), 0.0);
        }
        assert_relative_eq!(covariance_rh(0.5, 0.3, 0.7).unwrap(), 0.3, max_relative = 1e-14);
    }

    #[test]
    fn half_kernel_reproduces_brownian_path() {
        let grid = Grid::unit(128).unwrap();
        let kmat = KernelMatrix::build(&KernelSpec::fbm(0.5).unwrap(), grid, Mode::Stochastic).unwrap();
        let bm = sample_brownian(grid, 3);
        let w = fbm_from_kernel(&kmat, &bm).unwrap();
        assert!(w.sup_distance(&bm.cumulative()).unwrap() < 1e-12);
        let zero = BrownianPath::from_increments(grid, vec![0.0; 128], 0).unwrap();
        assert_eq!(fbm_from_kernel(&kmat, &zero).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn convolution_examples() {
        let grid = Grid::unit(64).unwrap();
        let kmat = KernelMatrix::build(&KernelSpec::fbm(0.3).unwrap(), grid, Mode::Stochastic).unwrap();
        let bm = sample_brownian(grid, 11);
        let one = GridFunction::constant(grid, 1.0);
        assert_eq!(
            stochastic_convolution(&kmat, &one, &bm).unwrap(),
            fbm_from_kernel(&kmat, &bm).unwrap()
        );
        let zero = GridFunction::zeros(grid);
        assert_eq!(stochastic_convolution(&kmat, &zero, &bm).unwrap().sup_norm(), 0.0);
        let id = KernelMatrix::build(&KernelSpec::Identity, grid, Mode::Stochastic).unwrap();
        let cum = stochastic_convolution(&id, &one, &bm).unwrap();
        assert!(cum.sup_distance(&bm.cumulative()).unwrap() < 1e-14);
        let det = KernelMatrix::build(&KernelSpec::Identity, grid, Mode::Deterministic).unwrap();
        assert!(stochastic_convolution(&det, &one, &bm).is_err());
    }

    #[test]
    fn convolution_is_linear_in_the_integrand() {
        let grid = Grid::unit(64).unwrap();
        let kmat = KernelMatrix::build(&KernelSpec::fbm(0.7).unwrap(), grid, Mode::Stochastic).unwrap();
        let bm = sample_brownian(grid, 5);
        let u = GridFunction::from_fn(grid, |t| (3.0 * t).sin() + 0.2).unwrap();
        let cu = GridFunction::from_fn(grid, |t| -2.5 * ((3.0 * t).sin() + 0.2)).unwrap();
        let m = stochastic_convolution(&kmat, &u, &bm).unwrap();
        let mc = stochastic_convolution(&kmat, &cu, &bm).unwrap();
        for i in 0..grid.n_nodes() {
            assert_relative_eq!(mc[i], -2.5 * m[i], epsilon = 1e-13, max_relative = 1e-13);
        }
    }

    #[test]
    fn covariance_of_identical_paths_is_zero() {
        let grid = Grid::unit(8).unwrap();
        let p = GridFunction::from_fn(grid, |t| t * t).unwrap();
        let ens = PathEnsemble::new(vec![p.clone(), p.clone(), p], vec![0, 1, 2], "same").unwrap();
        let c = ensemble_covariance(&ens).unwrap();
        assert!((0..9).all(|i| (0..9).all(|j| c.cov(i, j).abs() < 1e-15)));
        let single = PathEnsemble::new(vec![GridFunction::zeros(grid)], vec![0], "one").unwrap();
        assert!(matches!(ensemble_covariance(&single), Err(Error::Argument(_))));
    }

    #[test]
    fn brownian_ensemble_covariance_is_min() {
        let grid = Grid::unit(16).unwrap();
        let ens = ensemble_from(grid, 4000, 100, "bm", |bm| Ok(bm.cumulative())).unwrap();
        let c = ensemble_covariance(&ens).unwrap();
        for i in 1..=16 {
            for j in 1..=16 {
                let want = grid.node(i).min(grid.node(j));
                assert!((c.cov(i, j) - want).abs() <= 4.0 * c.se(i, j), "({i},{j})");
            }
        }
    }

    #[test]
    fn cholesky_oracle_matches_closed_form() {
        let grid = Grid::unit(16).unwrap();
        for h in [0.25, 0.5, 0.75] {
            let ens = fbm_cholesky_ensemble(h, grid, 20_000, 1).unwrap();
            let c = ensemble_covariance(&ens).unwrap();
            for i in 0..=16 {
                for j in 0..=16 {
                    let want = covariance_rh(h, grid.node(i), grid.node(j)).unwrap();
                    assert!(
                        (c.cov(i, j) - want).abs() <= 4.0 * c.se(i, j) + 1e-15,
                        "H = {h} ({i},{j}): {} vs {want}",
                        c.cov(i, j)
                    );
                }
            }
            assert!((c.cov(16, 16) / v_h(h).unwrap() - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn streaming_ensemble_matches_matrix_ensemble() {
        let grid = Grid::unit(64).unwrap();
        let spec = KernelSpec::fbm(0.3).unwrap();
        let kmat = KernelMatrix::build(&spec, grid, Mode::Stochastic).unwrap();
        let a = fbm_kernel_ensemble(&kmat, 5, 40).unwrap();
        let b = fbm_kernel_ensemble_streaming(&spec, grid, 5, 40).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensemble_csv_layout() {
        let grid = Grid::unit(4).unwrap();
        let ens = ensemble_from(grid, 3, 0, "bm", |bm| Ok(bm.cumulative())).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "t,path_0,path_1,path_2");
        assert!(lines[1].starts_with("0e0,0e0,"));
        assert_eq!(ens.metadata().seeds, vec![0, 1, 2]);
    }
}
