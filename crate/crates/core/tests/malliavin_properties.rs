use volterra_core::malliavin::{
    cameron_martin_fd, derivative_linear_solve, oracle_triangle, relative_gap, resolvent_residual,
    variation_series, weighted_kernel_v0, Direction,
};
use volterra_core::simulate::sample_brownian;
use volterra_core::solver::{SdeProblem, Solver, SolverConfig};
use volterra_core::{Error, Grid, GridFunction, KernelSpec, LowerTriangular};

fn nonlinear(h: f64, multiplicative: bool) -> SdeProblem {
    let p = SdeProblem::new(0.5, KernelSpec::fbm(h).unwrap())
        .with_drift(|_, x| -x + 0.5 * x.sin(), |_, x| -1.0 + 0.5 * x.cos());
    if multiplicative {
        p.with_diffusion(
            |_, x| 0.5 / (1.0 + x * x).sqrt(),
            |_, x| -0.5 * x / (1.0 + x * x).powf(1.5),
        )
    } else {
        p.with_diffusion(|_, _| 1.0, |_, _| 0.0)
    }
}

fn solver(problem: SdeProblem, n: usize) -> Solver {
    let grid = Grid::unit(n).unwrap();
    let cfg = SolverConfig::new(grid, &problem.kernel).with_tol(1e-12);
    Solver::new(problem, cfg).unwrap()
}

#[test]
fn derivative_is_linear_in_direction() {
    let s = solver(nonlinear(0.75, true), 256);
    let grid = *s.grid();
    let bm = sample_brownian(grid, 6);
    let x = s.picard_solve(&bm).unwrap().path;
    let d1 = Direction::from_fn(grid, |t| (5.0 * t).cos()).unwrap();
    let d2 = Direction::from_fn(grid, |t| t * t - 0.3).unwrap();
    let mix = Direction::new(d1.xi().combine(2.0, d2.xi(), -0.7).unwrap());
    let y1 = derivative_linear_solve(&s, &x, &bm, &d1).unwrap();
    let y2 = derivative_linear_solve(&s, &x, &bm, &d2).unwrap();
    let ymix = derivative_linear_solve(&s, &x, &bm, &mix).unwrap();
    let want = y1.combine(2.0, &y2, -0.7).unwrap();
    assert!(ymix.sup_distance(&want).unwrap() <= 1e-10);
}

#[test]
fn oracle_triangle_on_test_matrix() {
    for h in [0.5, 0.75] {
        for multiplicative in [false, true] {
            let s = solver(nonlinear(h, multiplicative), 256);
            let grid = *s.grid();
            let d = Direction::from_fn(grid, |t| 1.0 + (2.0 * std::f64::consts::PI * t).sin()).unwrap();
            for seed in [0, 1] {
                let tri = oracle_triangle(&s, &sample_brownian(grid, seed), &d, 1e-4).unwrap();
                let r = &tri.report;
                assert!(r.max_gap() <= 1e-2, "H = {h}, mult = {multiplicative}: {r:?}");
                assert!(r.linear_vs_variation <= 1e-6f64.max(*r.tail_norms.last().unwrap()));
                assert!(r.resolvent_residual <= r.tail_norms.last().unwrap() + 1e-10);
                let t = &r.tail_norms;
                assert!(t[3..].windows(2).all(|w| w[1] < w[0]), "{t:?}");
            }
        }
    }
}

#[test]
fn fd_error_does_not_grow_when_eps_halves() {
    let s = solver(nonlinear(0.75, true), 1024);
    let grid = *s.grid();
    let bm = sample_brownian(grid, 9);
    let x = s.picard_solve(&bm).unwrap().path;
    let d = Direction::from_fn(grid, |t| (3.0 * t).cos()).unwrap();
    let exact = derivative_linear_solve(&s, &x, &bm, &d).unwrap();
    let errors: Vec<f64> = [4e-4, 2e-4, 1e-4]
        .iter()
        .map(|&eps| relative_gap(&cameron_martin_fd(&s, &bm, &d, eps).unwrap(), &exact).unwrap())
        .collect();
    assert!(errors[2] <= 1e-2, "{errors:?}");
    // once the central-difference error is below the discretisation gap it
    // stays flat; allow rounding noise on top
    for w in errors.windows(2) {
        assert!(w[1] <= w[0] * 1.01 + 1e-9, "{errors:?}");
    }
}

#[test]
fn term_norms_eventually_decrease() {
    let s = solver(nonlinear(0.75, true), 256);
    let grid = *s.grid();
    let bm = sample_brownian(grid, 2);
    let x = s.picard_solve(&bm).unwrap().path;
    let vk = variation_series(&s, &x, &bm, weighted_kernel_v0(&s).unwrap(), 25, 1e-10).unwrap();
    let psi: Vec<f64> = vk.tail_norms.iter().map(|t| t.powf(vk.r_exponent)).collect();
    assert!(psi.iter().all(|p| p.is_finite()));
    assert!(psi[2..].windows(2).all(|w| w[1] < w[0]), "{psi:?}");
    // the stored defect is the norm of the first omitted term
    let recomputed = resolvent_residual(&s, &x, &bm, &vk).unwrap();
    assert!((recomputed - vk.residual_norm()).abs() <= 1e-12);
    assert!(vk.residual_norm() <= vk.tail_norm());
}

#[test]
fn identity_v0_is_a_valid_series_seed() {
    // V_0 = K itself (g = 1) gives the resolvent of the linear equation
    let s = solver(nonlinear(0.5, false), 128);
    let grid = *s.grid();
    let bm = sample_brownian(grid, 0);
    let x = s.picard_solve(&bm).unwrap().path;
    let v0 = s.deterministic().weights().clone();
    let vk = variation_series(&s, &x, &bm, v0, 25, 1e-10).unwrap();
    let ones = GridFunction::constant(grid, 1.0);
    let y = vk.l().apply(ones.values());
    let lin = derivative_linear_solve(&s, &x, &bm, &Direction::new(ones)).unwrap();
    for i in 0..y.len() {
        assert!((y[i] - lin[i]).abs() < 1e-9);
    }
}

#[test]
fn growing_series_is_reported() {
    let grid = Grid::unit(64).unwrap();
    let problem = SdeProblem::new(0.0, KernelSpec::Identity).with_drift(|_, x| 400.0 * x, |_, _| 400.0);
    let s = Solver::new(problem, SolverConfig::new(grid, &KernelSpec::Identity)).unwrap();
    let bm = sample_brownian(grid, 0);
    let x = GridFunction::zeros(grid);
    let err = variation_series(&s, &x, &bm, weighted_kernel_v0(&s).unwrap(), 25, 1e-10).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    let bad = LowerTriangular::from_fn(65, |_, _| f64::NAN);
    assert!(variation_series(&s, &x, &bm, bad, 25, 1e-10).is_err());
}
