use volterra_core::fraccalc::{default_holder_scales, estimate_holder_exponent};
use volterra_core::simulate::{
    covariance_rh, ensemble_covariance, fbm_cholesky_ensemble, fbm_kernel_ensemble,
    fbm_kernel_ensemble_streaming, sample_brownian, v_h,
};
use volterra_core::{Grid, KernelMatrix, KernelSpec, Mode};

#[test]
fn kernel_and_cholesky_ensembles_share_a_law() {
    let grid = Grid::unit(64).unwrap();
    for h in [0.25, 0.75] {
        let kmat = KernelMatrix::build(&KernelSpec::fbm(h).unwrap(), grid, Mode::Stochastic).unwrap();
        let kernel = ensemble_covariance(&fbm_kernel_ensemble(&kmat, 20_000, 0).unwrap()).unwrap();
        let chol = ensemble_covariance(&fbm_cholesky_ensemble(h, grid, 20_000, 1_000_000).unwrap()).unwrap();
        for i in 1..=64 {
            for j in 1..=64 {
                let r = covariance_rh(h, grid.node(i), grid.node(j)).unwrap();
                let kc = kernel.cov(i, j);
                assert!(
                    (kc - r).abs() <= 4.0 * kernel.se(i, j) + 0.03 * r.abs(),
                    "H = {h} ({i},{j}): {kc} vs {r}"
                );
                let pooled = kernel.se(i, j).hypot(chol.se(i, j));
                assert!((kc - chol.cov(i, j)).abs() <= 5.0 * pooled, "H = {h} ({i},{j})");
            }
        }
        let var_end = kernel.cov(64, 64);
        assert!((var_end - v_h(h).unwrap()).abs() <= 4.0 * kernel.se(64, 64), "H = {h}: {var_end}");
    }
}

#[test]
fn brownian_paths_are_half_holder() {
    let n = 1 << 14;
    let grid = Grid::unit(n).unwrap();
    for seed in 0..20 {
        let path = sample_brownian(grid, seed).cumulative();
        let est = estimate_holder_exponent(&path, &default_holder_scales(n)).unwrap();
        assert!((0.40..=0.58).contains(&est), "seed {seed}: {est}");
    }
}

#[test]
fn smooth_fbm_paths_have_exponent_near_three_quarters() {
    let n = 1 << 14;
    let grid = Grid::unit(n).unwrap();
    let ens = fbm_kernel_ensemble_streaming(&KernelSpec::fbm(0.75).unwrap(), grid, 10, 500).unwrap();
    for path in ens.paths() {
        let est = estimate_holder_exponent(path, &default_holder_scales(n)).unwrap();
        assert!((0.62..=0.83).contains(&est), "{est}");
    }
}
