//! Volterra kernels and their lower-triangular discretisation.
//!
//! The fractional Brownian motion kernel is
//!
//! ```text
//! K_H(t, s) = (t - s)^(H - 1/2) / Gamma(H + 1/2)
//!             * F(1/2 - H, H - 1/2; H + 1/2; 1 - t/s),   0 < s < t,
//! ```
//!
//! and vanishes for `s >= t`. [`kh_eval`] evaluates it literally through
//! [`hyp2f1`]. [`FbmKernel`] is the evaluator used to fill matrices: it
//! folds the Pfaff and connection transformations into two fixed series with
//! precomputed coefficients and takes `t - s` as an explicit argument.
//!
//! A [`KernelMatrix`] holds one weight per grid cell `[t_j, t_{j+1})` and
//! node `t_i`, `j < i`:
//!
//! * deterministic mode: `W[i][j] = int_cell K(t_i, s) ds`;
//! * stochastic mode: the L2 cell mean `sqrt(int_cell K(t_i, s)^2 ds / step)`,
//!   so that `sum_j W[i][j]^2 step` reproduces `int_0^{t_i} K(t_i, s)^2 ds`.
//!   More than 32 cells away from both singular ends the midpoint value is
//!   used instead; the two differ at second order.
//!
//! Cells touching `s = 0` or `s = t_i` are integrated with a tanh–sinh rule,
//! the rest with low-order Gauss–Legendre.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::Grid;
use crate::quadrature::{GaussLegendre, TanhSinh};
use crate::specialfn::{gamma_fn, hyp2f1, HypergeometricParams};

/// `K_H(t, s)` evaluated through the hypergeometric function.
pub fn kh_eval(hurst: f64, t: f64, s: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if !(s > 0.0) {
        return domain(format!("K_H: s = {s} must be positive"));
    }
    if !(t > 0.0 && t <= 1.0 && s <= 1.0) {
        return domain(format!("K_H: (t, s) = ({t}, {s}) outside (0, 1]"));
    }
    if s >= t {
        return Ok(0.0);
    }
    let p = HypergeometricParams::new(0.5 - hurst, hurst - 0.5, hurst + 0.5, 1.0 - t / s);
    Ok((t - s).powf(hurst - 0.5) / gamma_fn(hurst + 0.5)? * hyp2f1(p)?)
}

/// `g(s) = s^|H - 1/2|`, the weight that makes `K_H(t, s) g(s)` bounded
/// near `s = 0`.
pub fn g_weight(hurst: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return domain(format!("g: s = {s} must be positive"));
    }
    Ok(s.powf((hurst - 0.5).abs()))
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return domain(format!("Hurst parameter {hurst} outside (0, 1)"));
    }
    Ok(())
}

const SERIES_LEN: usize = 240;

/// Fast evaluator for `K_H`.
///
/// For `s / t >= 1/2` it sums `F(1/2 - H, 1; H + 1/2; (t - s)/t)` (Pfaff
/// form); below that it uses the connection formula
///
/// ```text
/// K_H(t, s) Gamma(H + 1/2) = A (t (t - s) / s)^(H - 1/2) F(1/2 - H, 1; 2 - 2H; s/t)
///                            + B s^(H - 1/2)
/// ```
///
/// Both series arguments stay in `[0, 1/2]`.
#[derive(Debug, Clone)]
pub struct FbmKernel {
    hurst: f64,
    inv_gamma: f64,
    a: f64,
    b: f64,
    pfaff: PiecewiseSeries,
    connection: PiecewiseSeries,
}

impl FbmKernel {
    pub fn new(hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        let inv_gamma = 1.0 / gamma_fn(hurst + 0.5)?;
        if hurst == 0.5 {
            return Ok(Self {
                hurst,
                inv_gamma,
                a: 1.0,
                b: 0.0,
                pfaff: PiecewiseSeries::default(),
                connection: PiecewiseSeries::default(),
            });
        }
        let g = |x: f64| gamma_fn(x);
        let a = g(hurst + 0.5)? * g(2.0 * hurst - 1.0)? / (g(2.0 * hurst)? * g(hurst - 0.5)?);
        let b = g(hurst + 0.5)? * g(1.0 - 2.0 * hurst)? / g(0.5 - hurst)?;
        let coeffs = |c: f64| {
            let first = 0.5 - hurst;
            let mut out = Vec::with_capacity(SERIES_LEN);
            let mut acc = 1.0;
            for k in 0..SERIES_LEN {
                let k = k as f64;
                acc *= (first + k) / (c + k);
                out.push(acc);
            }
            out
        };
        Ok(Self {
            hurst,
            inv_gamma,
            a,
            b,
            pfaff: PiecewiseSeries::new(&coeffs(hurst + 0.5)),
            connection: PiecewiseSeries::new(&coeffs(2.0 - 2.0 * hurst)),
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// `K_H(t, s)` with `gap = t - s` supplied by the caller.
    #[inline]
    pub fn eval_gap(&self, t: f64, s: f64, gap: f64) -> f64 {
        if gap <= 0.0 {
            return 0.0;
        }
        if self.hurst == 0.5 {
            return 1.0;
        }
        let e = self.hurst - 0.5;
        let rho = s / t;
        if rho >= 0.5 {
            (gap / rho).powf(e) * self.pfaff.eval(gap / t) * self.inv_gamma
        } else {
            let singular = self.a * (gap / rho).powf(e) * self.connection.eval(rho);
            (singular + self.b * s.powf(e)) * self.inv_gamma
        }
    }

    /// `K_H(t, s)`, zero for `s >= t`.
    #[inline]
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        self.eval_gap(t, s, t - s)
    }
}

const PIECES: usize = 16;
const PIECE_DEGREE: usize = 12;

/// `1 + sum_k c_k x^k` on `[0, 1/2]`, re-expanded in Taylor polynomials
/// around the centres of 16 equal pieces. The series has radius of
/// convergence 1, so 12 terms per piece reach rounding level.
#[derive(Debug, Clone, Default)]
struct PiecewiseSeries {
    coeffs: Vec<[f64; PIECE_DEGREE]>,
}

impl PiecewiseSeries {
    fn new(tail: &[f64]) -> Self {
        let mut a = Vec::with_capacity(tail.len() + 1);
        a.push(1.0);
        a.extend_from_slice(tail);
        let width = 0.5 / PIECES as f64;
        let coeffs = (0..PIECES)
            .map(|p| {
                let c = (p as f64 + 0.5) * width;
                let mut d = [0.0; PIECE_DEGREE];
                // d_k = sum_n a_n binom(n, k) c^(n - k), summed from the top
                for (k, dk) in d.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for n in (k..a.len()).rev() {
                        acc = acc * c + a[n] * binom(n, k);
                    }
                    *dk = acc;
                }
                d
            })
            .collect();
        Self { coeffs }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        let width = 0.5 / PIECES as f64;
        let p = ((x / width) as usize).min(PIECES - 1);
        let dx = x - (p as f64 + 0.5) * width;
        self.coeffs[p].iter().rev().fold(0.0, |acc, c| acc * dx + c)
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Callback kernel with a hint of its diagonal behaviour
/// `K(t, s) ~ (t - s)^exponent`.
#[derive(Clone)]
pub struct Tabulated {
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    diag_exponent: f64,
}

impl Tabulated {
    pub fn new(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        diag_exponent: f64,
    ) -> Result<Self> {
        if !(diag_exponent > -0.5 && diag_exponent <= 0.5) {
            return domain(format!(
                "singularity exponent {diag_exponent} outside (-1/2, 1/2]"
            ));
        }
        Ok(Self {
            f: Arc::new(f),
            diag_exponent,
        })
    }

    pub fn diag_exponent(&self) -> f64 {
        self.diag_exponent
    }
}

impl fmt::Debug for Tabulated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tabulated")
            .field("diag_exponent", &self.diag_exponent)
            .finish_non_exhaustive()
    }
}

/// Which Volterra kernel drives an equation.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    Fbm { hurst: f64 },
    Identity,
    Tabulated(Tabulated),
}

impl KernelSpec {
    pub fn fbm(hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        Ok(Self::Fbm { hurst })
    }

    pub fn hurst(&self) -> Option<f64> {
        match self {
            Self::Fbm { hurst } => Some(*hurst),
            Self::Identity => Some(0.5),
            Self::Tabulated(_) => None,
        }
    }

    /// `K(t, s)`, zero for `s >= t`.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        match self {
            Self::Fbm { hurst } => kh_eval(*hurst, t, s),
            Self::Identity => Ok(if s < t { 1.0 } else { 0.0 }),
            Self::Tabulated(tab) => Ok(if s < t { (tab.f)(t, s) } else { 0.0 }),
        }
    }

    /// The positive weight `g` pairing with this kernel: `s^|H - 1/2|` for
    /// fBm, one otherwise.
    pub fn g_weight(&self, s: f64) -> Result<f64> {
        match self {
            Self::Fbm { hurst } => g_weight(*hurst, s),
            _ if s > 0.0 => Ok(1.0),
            _ => domain(format!("g: s = {s} must be positive")),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Fbm { hurst } => format!("fbm(H={hurst})"),
            Self::Identity => "identity".into(),
            Self::Tabulated(t) => format!("tabulated(exponent={})", t.diag_exponent),
        }
    }

    fn evaluator(&self) -> Result<Evaluator> {
        Ok(match self {
            Self::Fbm { hurst } => Evaluator::Fbm(FbmKernel::new(*hurst)?),
            Self::Identity => Evaluator::Identity,
            Self::Tabulated(t) => Evaluator::Tabulated(t.clone()),
        })
    }
}

enum Evaluator {
    Fbm(FbmKernel),
    Identity,
    Tabulated(Tabulated),
}

impl Evaluator {
    #[inline]
    fn eval(&self, t: f64, s: f64, gap: f64) -> f64 {
        match self {
            Self::Fbm(k) => k.eval_gap(t, s, gap),
            Self::Identity => 1.0,
            // nodes closer to the diagonal than one ulp of t are dropped
            Self::Tabulated(tab) if s < t => (tab.f)(t, s),
            Self::Tabulated(_) => 0.0,
        }
    }

    /// Whether the kernel can take negative values.
    fn signed(&self) -> bool {
        matches!(self, Self::Tabulated(_))
    }

    fn origin_singular(&self) -> bool {
        matches!(self, Self::Fbm(k) if k.hurst != 0.5)
    }

    fn diag_singular(&self) -> bool {
        match self {
            Self::Fbm(k) => k.hurst != 0.5,
            Self::Identity => false,
            Self::Tabulated(t) => t.diag_exponent != 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Weights for `int K(t, s) f(s) ds`.
    Deterministic,
    /// Weights for `int K(t, s) u_s dB_s`, multiplying Brownian increments.
    Stochastic,
}

/// Packed strictly lower-triangular array over grid nodes: row `i` holds
/// entries `j = 0..i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n_nodes: usize,
    data: Vec<f64>,
}

#[inline]
fn row_offset(i: usize) -> usize {
    i * i.saturating_sub(1) / 2
}

impl LowerTriangular {
    pub fn zeros(n_nodes: usize) -> Self {
        Self {
            n_nodes,
            data: vec![0.0; row_offset(n_nodes)],
        }
    }

    pub fn from_fn(n_nodes: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n_nodes);
        for i in 1..n_nodes {
            for (j, v) in m.row_mut(i).iter_mut().enumerate() {
                *v = f(i, j);
            }
        }
        m
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let o = row_offset(i);
        &self.data[o..o + i]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let o = row_offset(i);
        &mut self.data[o..o + i]
    }

    /// Entry `(i, j)`; zero on and above the diagonal.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j < i {
            self.data[row_offset(i) + j]
        } else {
            0.0
        }
    }

    pub fn rows_mut(&mut self) -> Vec<&mut [f64]> {
        let mut rest = self.data.as_mut_slice();
        let mut rows = Vec::with_capacity(self.n_nodes);
        for i in 0..self.n_nodes {
            let (head, tail) = rest.split_at_mut(i);
            rows.push(head);
            rest = tail;
        }
        rows
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(Ax)_i = sum_{j<i} A[i][j] x_j`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_nodes).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `(sum_{i,j} |A[i][j] / step|^r step^2)^(1/r)`: the discrete
    /// `L^r([0,1]^2)` norm of the kernel whose cell-integrated weights are
    /// stored here.
    pub fn lr_norm(&self, r: f64, step: f64) -> f64 {
        let s: f64 = self.data.iter().map(|v| (v / step).abs().powf(r)).sum();
        (s * step * step).powf(1.0 / r)
    }

    /// CSV with header `row,col,value`.
    pub fn write_csv(&self, mut w: impl Write, header: &str) -> std::io::Result<()> {
        writeln!(w, "row,col,{header}")?;
        for i in 1..self.n_nodes {
            for (j, v) in self.row(i).iter().enumerate() {
                writeln!(w, "{i},{j},{v:e}")?;
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorises; fixed order keeps results
    // reproducible
    let n = a.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Computes one row of a kernel matrix at a time. Used directly when the
/// full matrix would not fit in memory.
pub struct RowBuilder {
    kernel: Evaluator,
    grid: Grid,
    mode: Mode,
    near: GaussLegendre,
    far: GaussLegendre,
    singular: TanhSinh,
    first_rms: f64,
}

const NEAR_CELLS: usize = 4;
const FAR_CELLS: usize = 32;

impl RowBuilder {
    pub fn new(spec: &KernelSpec, grid: Grid, mode: Mode) -> Result<Self> {
        let mut builder = Self {
            kernel: spec.evaluator()?,
            grid,
            mode,
            near: GaussLegendre::new(6),
            far: GaussLegendre::new(2),
            singular: TanhSinh::new(1.0 / 6.0),
            first_rms: 0.0,
        };
        if mode == Mode::Stochastic {
            let mut first = [0.0];
            builder.fill_plain(1, &mut first);
            builder.first_rms = first[0];
        }
        Ok(builder)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Fills `out` (length `i`) with row `i`.
    pub fn fill(&self, i: usize, out: &mut [f64]) {
        self.fill_plain(i, out);
        if self.mode == Mode::Stochastic && i >= 2 && self.first_rms > 0.0 {
            // Column 0: geometric mean of the L2 weight and the projection on
            // the t_1 row. Pure L2 weights overstate cov(t_1, t_i), which
            // only sees this cell.
            let step = self.grid.step();
            let t = self.grid.node(i);
            let t1 = self.grid.node(1);
            let inner = self.cell(0, 1, true, |s, g| {
                self.kernel.eval(t1, s, g) * self.kernel.eval(t, s, t - s)
            });
            let proj = inner / (self.first_rms * step);
            if proj > 0.0 && out[0] > 0.0 {
                out[0] = (out[0] * proj).sqrt();
            }
        }
    }

    fn fill_plain(&self, i: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), i);
        let t = self.grid.node(i);
        let step = self.grid.step();
        for (j, w) in out.iter_mut().enumerate() {
            let diag = j + 1 == i;
            *w = match self.mode {
                Mode::Deterministic => self.cell(j, i, false, |s, g| {
                    self.kernel.eval(t, s, if diag { g } else { t - s })
                }),
                Mode::Stochastic if j.min(i - 1 - j) > FAR_CELLS => {
                    // far from both singular ends the L2 mean and the
                    // midpoint value agree to O((step / distance)^2)
                    let mid = self.grid.node(j) + 0.5 * step;
                    self.kernel.eval(t, mid, t - mid)
                }
                Mode::Stochastic => {
                    let sq = self.cell(j, i, false, |s, g| {
                        let k = self.kernel.eval(t, s, if diag { g } else { t - s });
                        k * k
                    });
                    let rms = (sq / step).sqrt();
                    let mid = self.grid.node(j) + 0.5 * step;
                    if self.kernel.signed() && self.kernel.eval(t, mid, t - mid) < 0.0 {
                        -rms
                    } else {
                        rms
                    }
                }
            };
        }
    }

    /// Integral of `f` over cell `j` in row `i`; `force_right` marks the
    /// right end as singular regardless of the row.
    fn cell(&self, j: usize, i: usize, force_right: bool, f: impl FnMut(f64, f64) -> f64) -> f64 {
        let a = self.grid.node(j);
        let b = self.grid.node(j + 1);
        let left = j == 0 && self.kernel.origin_singular();
        let right = (j + 1 == i || force_right) && self.kernel.diag_singular();
        if left || right {
            return self.singular.integrate(a, b, left, right, f);
        }
        let dist = j.min(i - 1 - j);
        if dist <= NEAR_CELLS {
            self.near.integrate(a, b, f)
        } else {
            self.far.integrate(a, b, f)
        }
    }
}

/// Cell weights of a kernel on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    grid: Grid,
    mode: Mode,
    weights: LowerTriangular,
}

impl KernelMatrix {
    pub fn build(spec: &KernelSpec, grid: Grid, mode: Mode) -> Result<Self> {
        let builder = RowBuilder::new(spec, grid, mode)?;
        let mut weights = LowerTriangular::zeros(grid.n_nodes());
        weights
            .rows_mut()
            .into_par_iter()
            .enumerate()
            .for_each(|(i, row)| builder.fill(i, row));
        if let Some(pos) = weights.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite kernel weight at packed index {pos} for {}",
                spec.label()
            )));
        }
        Ok(Self {
            grid,
            mode,
            weights,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn weights(&self) -> &LowerTriangular {
        &self.weights
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.weights.row(i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    /// `sum_{j<i} W[i][j] x_j` for every node `i`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights.apply(x)
    }

    pub fn write_csv(&self, w: impl Write) -> std::io::Result<()> {
        self.weights.write_csv(w, "weight")
    }
}

/// Outcome of [`bound_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Smallest `c` with `K_H(t,s) <= c (t-s)^(H-1/2) s^(-|H-1/2|)` on the samples.
    pub c_fit: f64,
    /// Smallest observed ratio to the envelope.
    pub min_ratio: f64,
    /// Samples with `K_H < 0` or a non-finite value.
    pub violations: usize,
    pub samples: usize,
}

const BOUND_S_MIN: f64 = 1e-6;

/// Samples `0 < s < t <= 1` on a Halton sequence and fits the constant of
/// the envelope `(t - s)^(H - 1/2) s^(-|H - 1/2|)`.
pub fn bound_check(hurst: f64, samples: usize) -> Result<BoundReport> {
    check_hurst(hurst)?;
    if samples < 100 {
        return Err(Error::Argument(format!("need at least 100 samples, got {samples}")));
    }
    let e = hurst - 0.5;
    let mut report = BoundReport {
        c_fit: 0.0,
        min_ratio: f64::INFINITY,
        violations: 0,
        samples: 0,
    };
    let mut index = 1u64;
    while report.samples < samples {
        let u = halton(index, 2);
        let v = halton(index, 3);
        index += 1;
        let (s, t) = if u < v { (u, v) } else { (v, u) };
        if s < BOUND_S_MIN || t - s < 1e-9 {
            continue;
        }
        let k = kh_eval(hurst, t, s)?;
        report.samples += 1;
        if !(k >= 0.0) || !k.is_finite() {
            report.violations += 1;
            continue;
        }
        let ratio = k / ((t - s).powf(e) * s.powf(-e.abs()));
        report.c_fit = report.c_fit.max(ratio);
        report.min_ratio = report.min_ratio.min(ratio);
    }
    Ok(report)
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}
