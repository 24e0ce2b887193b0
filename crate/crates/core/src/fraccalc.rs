//! Riemann–Liouville fractional integrals on a uniform grid, their duality
//! residual, and discrete Hölder diagnostics.
//!
//! Fractional integrals use first-order product integration: the data is
//! piecewise constant on each cell (value at the cell end farthest from the
//! evaluation point) and `(x - t)^(alpha - 1)` is integrated exactly. On a
//! uniform grid the resulting weights only depend on the lag, so both
//! integrals are discrete convolutions.

use crate::error::{argument, domain, Error, Result};
use crate::grid::GridFunction;
use crate::specialfn::gamma_fn;

/// `w_m = step^alpha / Gamma(alpha + 1) * (m^alpha - (m - 1)^alpha)`, `m = 1..=n`.
fn lag_weights(alpha: f64, step: f64, n: usize) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return domain(format!("fractional order must be positive, got {alpha}"));
    }
    let scale = step.powf(alpha) / gamma_fn(alpha + 1.0)?;
    Ok((1..=n)
        .map(|m| {
            let m = m as f64;
            scale * (m.powf(alpha) - (m - 1.0).powf(alpha))
        })
        .collect())
}

/// Left-sided integral `(I^alpha_{0+} f)(x)` at every node.
pub fn frac_integral_left(f: &GridFunction, alpha: f64) -> Result<GridFunction> {
    let grid = *f.grid();
    let n = grid.n_steps();
    let w = lag_weights(alpha, grid.step(), n)?;
    let v = f.values();
    let out = (0..=n)
        .map(|i| (1..=i).map(|m| w[m - 1] * v[i - m]).sum())
        .collect();
    GridFunction::new(grid, out)
}

/// Right-sided integral `(I^alpha_{b-} f)(x)` for `x <= b`, where `b` must be
/// a grid node. Nodes beyond `b` are set to zero.
pub fn frac_integral_right(f: &GridFunction, alpha: f64, b: f64) -> Result<GridFunction> {
    let grid = *f.grid();
    let n = grid.n_steps();
    let end = (b / grid.step()).round();
    if !(end >= 1.0 && end <= n as f64) || (end * grid.step() - b).abs() > 1e-12 {
        return argument(format!("right endpoint {b} is not a grid node in (0, horizon]"));
    }
    let end = end as usize;
    let w = lag_weights(alpha, grid.step(), n)?;
    let v = f.values();
    let out = (0..=n)
        .map(|i| {
            if i > end {
                0.0
            } else {
                (1..=end - i).map(|m| w[m - 1] * v[i + m]).sum()
            }
        })
        .collect();
    GridFunction::new(grid, out)
}

/// `| int f (I^alpha_{0+} g) - int (I^alpha_{T-} f) g |` with trapezoid
/// quadrature. Zero in the continuum.
pub fn duality_residual(f: &GridFunction, g: &GridFunction, alpha: f64) -> Result<f64> {
    f.grid().ensure_same(g.grid())?;
    let horizon = f.grid().horizon();
    let ig = frac_integral_left(g, alpha)?;
    let if_ = frac_integral_right(f, alpha, horizon)?;
    let lhs = product(f, &ig).trapezoid();
    let rhs = product(&if_, g).trapezoid();
    Ok((lhs - rhs).abs())
}

fn product(a: &GridFunction, b: &GridFunction) -> GridFunction {
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
    GridFunction::new(*a.grid(), values).expect("product of finite grid functions")
}

/// Discrete Hölder seminorm `max_{s != t} |f(t) - f(s)| / |t - s|^nu` over
/// node pairs, after shifting `f` so that `f(0) = 0`.
pub fn holder_norm(f: &GridFunction, nu: f64) -> Result<f64> {
    if !(nu > 0.0 && nu < 1.0) {
        return domain(format!("Hölder exponent {nu} outside (0, 1)"));
    }
    let v = f.values();
    let step = f.grid().step();
    let mut best = 0.0f64;
    for lag in 1..v.len() {
        let max_inc = max_increment(v, lag);
        best = best.max(max_inc / (lag as f64 * step).powf(nu));
    }
    Ok(best)
}

fn max_increment(v: &[f64], lag: usize) -> f64 {
    v.iter()
        .zip(&v[lag..])
        .fold(0.0f64, |m, (a, b)| m.max((b - a).abs()))
}

/// Default dyadic lags `1, 2, 4, ..., 2^floor(log2(n) / 2)`, capped at `n / 4`.
///
/// The maximal increment over a lag `h` carries a `sqrt(log(1 / h))`
/// modulus factor which flattens the log-log slope once `h` is a sizeable
/// fraction of the horizon; stopping at `sqrt(n)` keeps that factor nearly
/// constant over the fitted lags.
pub fn default_holder_scales(n_steps: usize) -> Vec<usize> {
    let top = (n_steps as f64).sqrt().max(1.0);
    let cap = n_steps / 4;
    std::iter::successors(Some(1usize), |l| Some(l * 2))
        .take_while(|&l| l as f64 <= top && l <= cap)
        .collect()
}

/// Least-squares slope of `log max_i |f(t_{i+lag}) - f(t_i)|` against
/// `log(lag * step)`.
pub fn estimate_holder_exponent(f: &GridFunction, scales: &[usize]) -> Result<f64> {
    let n = f.grid().n_steps();
    if scales.len() < 3 {
        return argument(format!("need at least 3 lags, got {}", scales.len()));
    }
    let mut sorted = scales.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != scales.len() {
        return argument("duplicate lags");
    }
    if let Some(&bad) = scales.iter().find(|&&l| l == 0 || l > n / 4) {
        return argument(format!("lag {bad} outside [1, n/4 = {}]", n / 4));
    }
    let step = f.grid().step();
    let mut xs = Vec::with_capacity(scales.len());
    let mut ys = Vec::with_capacity(scales.len());
    for &lag in scales {
        let inc = max_increment(f.values(), lag);
        if inc <= 0.0 {
            return Err(Error::Numeric(format!(
                "degenerate Hölder fit: zero increment at lag {lag}"
            )));
        }
        xs.push((lag as f64 * step).ln());
        ys.push(inc.ln());
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Numeric("degenerate Hölder fit: zero lag variance".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn grid(n: usize) -> Grid {
        Grid::unit(n).unwrap()
    }

    #[test]
    fn left_integral_of_one() {
        let g = grid(64);
        let one = GridFunction::constant(g, 1.0);
        let half = frac_integral_left(&one, 0.5).unwrap();
        let gamma = gamma_fn(1.5).unwrap();
        let tol = 2.0 * g.step().sqrt();
        for (i, t) in g.nodes().enumerate() {
            assert!((half[i] - t.sqrt() / gamma).abs() <= tol);
        }
        let full = frac_integral_left(&one, 1.0).unwrap();
        for (i, t) in g.nodes().enumerate() {
            assert!((full[i] - t).abs() < 1e-14);
        }
    }

    #[test]
    fn left_integral_of_identity_is_first_order() {
        let g = grid(256);
        let id = GridFunction::from_fn(g, |t| t).unwrap();
        let out = frac_integral_left(&id, 1.0).unwrap();
        for (i, t) in g.nodes().enumerate() {
            assert!((out[i] - t * t / 2.0).abs() <= g.step());
        }
    }

    #[test]
    fn right_integral_examples() {
        let g = Grid::new(50, 0.8).unwrap();
        let one = GridFunction::constant(g, 1.0);
        let full = frac_integral_right(&one, 1.0, 0.8).unwrap();
        for (i, t) in g.nodes().enumerate() {
            assert!((full[i] - (0.8 - t)).abs() < 1e-14);
        }
        let half = frac_integral_right(&one, 0.5, 0.8).unwrap();
        let gamma = gamma_fn(1.5).unwrap();
        for (i, t) in g.nodes().enumerate() {
            assert!((half[i] - (0.8 - t).sqrt() / gamma).abs() <= 2.0 * g.step().sqrt());
        }
        let zero = frac_integral_right(&GridFunction::zeros(g), 0.3, 0.8).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn right_integral_to_interior_node() {
        let g = grid(10);
        let one = GridFunction::constant(g, 1.0);
        let out = frac_integral_right(&one, 1.0, 0.5).unwrap();
        assert!((out[2] - 0.3).abs() < 1e-14);
        assert_eq!(out[7], 0.0);
        assert!(frac_integral_right(&one, 1.0, 0.55).is_err());
    }

    #[test]
    fn non_positive_order_is_a_domain_error() {
        let f = GridFunction::constant(grid(8), 1.0);
        assert!(matches!(frac_integral_left(&f, 0.0), Err(Error::Domain(_))));
        assert!(matches!(frac_integral_right(&f, -1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn duality_examples() {
        let g = grid(128);
        let zero = GridFunction::zeros(g);
        let some = GridFunction::from_fn(g, |t| (5.0 * t).cos()).unwrap();
        assert_eq!(duality_residual(&zero, &some, 0.4).unwrap(), 0.0);
        let one = GridFunction::constant(g, 1.0);
        assert!(duality_residual(&one, &one, 1.0).unwrap() <= g.step());
        let other = GridFunction::zeros(grid(64));
        assert!(matches!(duality_residual(&one, &other, 0.5), Err(Error::Argument(_))));
    }

    #[test]
    fn duality_linear_pair() {
        let g = grid(1 << 12);
        let f = GridFunction::from_fn(g, |t| t).unwrap();
        let h = GridFunction::from_fn(g, |t| 1.0 - t).unwrap();
        assert!(duality_residual(&f, &h, 0.5).unwrap() <= 1e-3);
    }

    #[test]
    fn duality_residual_shrinks_for_smooth_pair() {
        let residual = |n: usize| {
            let g = grid(n);
            let f = GridFunction::from_fn(g, |t| (3.0 * t).sin()).unwrap();
            let h = GridFunction::from_fn(g, f64::exp).unwrap();
            duality_residual(&f, &h, 0.5).unwrap()
        };
        let r: Vec<f64> = (6..=10).map(|k| residual(1 << k)).collect();
        assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
        assert!(r[4] < 1e-3);
    }

    #[test]
    fn semigroup_error_halves() {
        // I^a I^b t vs I^(a+b) t = t^(1+a+b) / Gamma(2+a+b)
        let err = |n: usize| {
            let g = grid(n);
            let id = GridFunction::from_fn(g, |t| t).unwrap();
            let two = frac_integral_left(&frac_integral_left(&id, 0.4).unwrap(), 0.7).unwrap();
            let exact = GridFunction::from_fn(g, |t| {
                t.powf(2.1) / gamma_fn(3.1).unwrap()
            })
            .unwrap();
            two.sup_distance(&exact).unwrap()
        };
        let e: Vec<f64> = [64, 128, 256, 512].iter().map(|&n| err(n)).collect();
        for w in e.windows(2) {
            assert!(w[1] <= 0.55 * w[0], "{e:?}");
        }
    }

    #[test]
    fn holder_norm_examples() {
        let g = Grid::new(64, 0.5).unwrap();
        assert_eq!(holder_norm(&GridFunction::zeros(g), 0.5).unwrap(), 0.0);
        let id = GridFunction::from_fn(g, |t| t).unwrap();
        assert!((holder_norm(&id, 0.5).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((holder_norm(&id, 0.99).unwrap() - 0.5f64.powf(0.01)).abs() < 1e-12);
        assert!(matches!(holder_norm(&id, 1.0), Err(Error::Domain(_))));
        assert!(matches!(holder_norm(&id, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn holder_exponent_of_linear_function() {
        let g = grid(1 << 10);
        let id = GridFunction::from_fn(g, |t| t).unwrap();
        let est = estimate_holder_exponent(&id, &default_holder_scales(g.n_steps())).unwrap();
        assert!((est - 1.0).abs() <= 0.02);
    }

    #[test]
    fn holder_exponent_argument_checks() {
        let g = grid(64);
        let id = GridFunction::from_fn(g, |t| t).unwrap();
        assert!(estimate_holder_exponent(&id, &[1, 2]).is_err());
        assert!(estimate_holder_exponent(&id, &[1, 2, 32]).is_err());
        assert!(estimate_holder_exponent(&id, &[1, 2, 2]).is_err());
        let flat = GridFunction::constant(g, 3.0);
        assert!(matches!(
            estimate_holder_exponent(&flat, &[1, 2, 4]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn default_scales() {
        assert_eq!(default_holder_scales(1 << 14), vec![1, 2, 4, 8, 16, 32, 64, 128]);
        assert_eq!(default_holder_scales(16), vec![1, 2, 4]);
    }

    proptest! {
        #[test]
        fn left_integral_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, alpha in 0.05f64..2.0, w in 0.5f64..8.0) {
            let g = grid(40);
            let f = GridFunction::from_fn(g, |t| (w * t).sin()).unwrap();
            let h = GridFunction::from_fn(g, |t| t * t - 0.3).unwrap();
            let lhs = frac_integral_left(&f.combine(a, &h, b).unwrap(), alpha).unwrap();
            let rhs = frac_integral_left(&f, alpha).unwrap()
                .combine(a, &frac_integral_left(&h, alpha).unwrap(), b).unwrap();
            prop_assert!(lhs.sup_distance(&rhs).unwrap() <= 1e-12);
        }

        #[test]
        fn left_integral_preserves_positivity(alpha in 0.05f64..2.0, seed in 0u64..1000) {
            let g = grid(32);
            let f = GridFunction::from_fn(g, |t| ((t * 37.0 + seed as f64).sin()).abs()).unwrap();
            let out = frac_integral_left(&f, alpha).unwrap();
            prop_assert!(out.values().iter().all(|&v| v >= 0.0));
        }
    }
}
