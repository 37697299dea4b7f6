use carnot_core::statespace::{
    free_energy, DensityFunctionals, GaussianState, Grid, GridDensity, PhysicalConstants,
};
use carnot_core::transport::{
    optimal_map, path_length, w2_gaussian, w2_grid, DisplacementInterpolation,
    DEFAULT_QUANTILE_NODES,
};
use proptest::prelude::*;

fn c() -> PhysicalConstants {
    PhysicalConstants::default()
}

fn grid() -> Grid {
    Grid::symmetric(12.0, 1024).unwrap()
}

/// Two-component Gaussian mixture on the shared test grid.
fn mixture(m1: f64, s1: f64, m2: f64, s2: f64, w: f64) -> GridDensity {
    let pdf = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / s;
    GridDensity::from_fn(grid(), |x| w * pdf(x, m1, s1) + (1.0 - w) * pdf(x, m2, s2)).unwrap()
}

fn arb_mixture() -> impl Strategy<Value = GridDensity> {
    (
        -3.0..3.0f64,
        0.3..1.5f64,
        -3.0..3.0f64,
        0.3..1.5f64,
        0.05..0.95f64,
    )
        .prop_map(|(m1, s1, m2, s2, w)| mixture(m1, s1, m2, s2, w))
}

fn w2(a: &GridDensity, b: &GridDensity) -> f64 {
    w2_grid(a, b, DEFAULT_QUANTILE_NODES).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn entropy_of_gaussian_samples(sigma in 0.2..4.0f64) {
        let g = Grid::symmetric(8.0 * sigma, 4096).unwrap();
        let rho = GridDensity::gaussian(g, 0.0, sigma * sigma).unwrap();
        let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
        prop_assert!((rho.entropy(&c()) - exact).abs() < 1e-4);
    }

    #[test]
    fn fisher_information_nonnegative(rho in arb_mixture()) {
        prop_assert!(rho.fisher_information() >= 0.0);
    }

    #[test]
    fn fisher_information_of_gaussian(sigma in 0.3..3.0f64) {
        let g = Grid::symmetric(10.0 * sigma, 4096).unwrap();
        let rho = GridDensity::gaussian(g, 0.0, sigma * sigma).unwrap();
        let rel = (rho.fisher_information() * sigma * sigma - 1.0).abs();
        prop_assert!(rel < 1e-3, "rel {rel}");
    }

    #[test]
    fn gibbs_minimizes_free_energy(
        a in 0.2..3.0f64, b in 0.0..0.5f64, f in -1.0..1.0f64, t in 0.3..3.0f64, rho in arb_mixture(),
    ) {
        let u = grid().sample(|x| a * x * x / 2.0 + b * x.powi(4) / 4.0 + f * x);
        let gibbs = GridDensity::gibbs(grid(), &u, t, &c()).unwrap();
        let f_gibbs = free_energy(&gibbs, &u, t, &c()).unwrap();
        prop_assert!(f_gibbs <= free_energy(&rho, &u, t, &c()).unwrap() + 1e-12);
    }

    #[test]
    fn w2_is_symmetric(a in arb_mixture(), b in arb_mixture()) {
        prop_assert!((w2(&a, &b) - w2(&b, &a)).abs() <= 1e-6);
    }

    #[test]
    fn w2_triangle_inequality(a in arb_mixture(), b in arb_mixture(), m in arb_mixture()) {
        prop_assert!(w2(&a, &b) <= w2(&a, &m) + w2(&m, &b) + 1e-6);
    }

    #[test]
    fn optimal_map_is_monotone(a in arb_mixture(), b in arb_mixture()) {
        let t = optimal_map(&a, &b).on_source_centers();
        prop_assert!(t.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn geodesic_has_constant_speed(a in arb_mixture(), b in arb_mixture(), t in 0.05..0.95f64) {
        let interp = DisplacementInterpolation::with_output_grid(&a, &b, grid());
        let mid = interp.at(t).unwrap();
        let total = w2(&a, &b);
        let d = w2(&a, &mid);
        prop_assert!((d - t * total).abs() < 5e-3 + 1e-2 * total, "t {t}: {d} vs {}", t * total);
        prop_assert!((w2(&mid, &b) - (1.0 - t) * total).abs() < 5e-3 + 1e-2 * total);
    }

    #[test]
    fn perturbed_path_is_no_shorter_than_w2(
        a in arb_mixture(), b in arb_mixture(), eps in 0.0..0.5f64, freq in 0.5..3.0f64,
    ) {
        let interp = DisplacementInterpolation::with_output_grid(&a, &b, grid());
        let mut path = vec![a.clone()];
        for k in 1..8 {
            let mid = interp.at(k as f64 / 8.0).unwrap();
            let bent: Vec<f64> = grid()
                .centers()
                .iter()
                .zip(mid.values())
                .map(|(x, r)| r * (1.0 + eps * (freq * x + k as f64).sin()))
                .collect();
            path.push(GridDensity::from_fn(grid(), |x| {
                let i = (((x - grid().x_min) / grid().dx()) as usize).min(grid().n_cells - 1);
                bent[i]
            }).unwrap());
        }
        path.push(b.clone());
        prop_assert!(path_length(&path, DEFAULT_QUANTILE_NODES).unwrap() >= w2(&a, &b) - 1e-9);
    }
}

#[test]
fn moments_and_entropy_stable_under_refinement() {
    let coarse = mixture(-1.0, 0.6, 1.5, 0.9, 0.4);
    let fine_grid = Grid::symmetric(12.0, 4096).unwrap();
    let pdf = |x: f64, m: f64, s: f64| (-(x - m).powi(2) / (2.0 * s * s)).exp() / s;
    let fine = GridDensity::from_fn(fine_grid, |x| {
        0.4 * pdf(x, -1.0, 0.6) + 0.6 * pdf(x, 1.5, 0.9)
    })
    .unwrap();
    let (mc, vc) = coarse.moments();
    let (mf, vf) = fine.moments();
    assert!((mc - mf).abs() < 1e-3 && (vc - vf).abs() < 1e-3);
    assert!((coarse.entropy(&c()) - fine.entropy(&c())).abs() < 1e-3);
}

#[test]
fn geodesic_chords_sum_to_distance() {
    let g = Grid::symmetric(16.0, 2048).unwrap();
    let a = GridDensity::gaussian(g, 0.0, 1.0).unwrap();
    let b = GridDensity::gaussian(g, 0.0, 4.0).unwrap();
    let interp = DisplacementInterpolation::with_output_grid(&a, &b, g);
    let path: Vec<GridDensity> = (0..=10)
        .map(|k| interp.at(k as f64 / 10.0).unwrap())
        .collect();
    assert!((path_length(&path, DEFAULT_QUANTILE_NODES).unwrap() - 1.0).abs() < 1e-2);
    let still = vec![a.clone(), a.clone(), a];
    assert!(path_length(&still, DEFAULT_QUANTILE_NODES).unwrap().abs() < 1e-12);
}

#[test]
fn w2_grid_converges_with_quantile_nodes() {
    let g = Grid::symmetric(16.0, 16384).unwrap();
    let a = GridDensity::gaussian(g, 0.0, 1.0).unwrap();
    let b = GridDensity::gaussian(g, 0.0, 4.0).unwrap();
    let exact = w2_gaussian(
        &GaussianState::new(1.0).unwrap(),
        &GaussianState::new(4.0).unwrap(),
    );
    let errs: Vec<f64> = [128, 256, 512, 1024]
        .iter()
        .map(|&n| (w2_grid(&a, &b, n).unwrap() - exact).abs())
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] <= 0.6 * w[0], "errors {errs:?}");
    }
}
