use carnot_core::optima::{
    first_variation_probe, jko_step, optimal_sigma_b, PerturbationFamily, ProximalProblem,
};
use carnot_core::statespace::{Grid, GridDensity, PhysicalConstants};
use carnot_core::transport::{midpoint_nodes, Cdf};
use proptest::prelude::*;

fn c() -> PhysicalConstants {
    PhysicalConstants::default()
}

/// `∑(Q_a − Q)²Δu − h ∑ log(ΔQ/Δu)Δu`, evaluated independently of the solver.
fn discrete_objective(qa: &[f64], q: &[f64], h: f64) -> f64 {
    let du = 1.0 / qa.len() as f64;
    let fit: f64 = qa.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * du;
    fit - h * q.windows(2).map(|w| ((w[1] - w[0]) / du).ln()).sum::<f64>() * du
}

struct Solved {
    objective: f64,
    at_scaled_quantiles: f64,
    continuum: f64,
}

fn solve_gaussian(sa: f64, t: f64, n_nodes: usize) -> Solved {
    let grid = Grid::symmetric(48.0 * sa, 4096).unwrap();
    let a = GridDensity::gaussian(grid, 0.0, sa * sa).unwrap();
    let mut p = ProximalProblem::for_cycle(a.clone(), 2.0, 1.0, t, &c()).unwrap();
    p.n_nodes = n_nodes;
    let r = jko_step(&p, None).unwrap();
    assert!(r.log.windows(2).all(|w| w[1].objective <= w[0].objective));
    let sb = optimal_sigma_b(sa, 2.0, 1.0, t, &c());
    let cdf = Cdf::new(&a);
    let qa: Vec<f64> = midpoint_nodes(n_nodes)
        .iter()
        .map(|&u| cdf.quantile(u))
        .collect();
    let scaled: Vec<f64> = qa.iter().map(|x| sb / sa * x).collect();
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    Solved {
        objective: r.objective,
        at_scaled_quantiles: discrete_objective(&qa, &scaled, p.h),
        continuum: (sb - sa).powi(2) - p.h * 0.5 * (two_pi_e * sb * sb).ln(),
    }
}

#[test]
fn jko_reaches_gaussian_optimum() {
    for (sa, t) in [(1.0, 16.0), (0.7, 4.0), (1.5, 40.0)] {
        let s = solve_gaussian(sa, t, 16384);
        // The Gaussian scaling is feasible, so the solver can only do better.
        assert!(s.objective <= s.at_scaled_quantiles + 1e-12 * s.objective.abs());
        assert!(
            (s.objective / s.continuum - 1.0).abs() < 1e-3,
            "{} vs {}",
            s.objective,
            s.continuum
        );
    }
}

#[test]
fn jko_objective_converges_with_nodes() {
    let errs: Vec<f64> = [1024, 4096, 16384]
        .iter()
        .map(|&n| {
            let s = solve_gaussian(1.0, 16.0, n);
            (s.objective / s.continuum - 1.0).abs()
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gaussian_is_first_order_stationary(
        sa in 0.5..2.0f64, t in 2.0..30.0f64, c2 in -1.0..1.0f64, c3 in -1.0..1.0f64, c4 in -1.0..1.0f64,
    ) {
        let v = sa * sa;
        let fam = PerturbationFamily::from_fn(
            move |x| (-x * x / (2.0 * v)).exp() * (c2 * x * x + c3 * x.powi(3) + c4 * x.powi(4) / sa),
            vec![0.01 * sa],
        );
        let sb = optimal_sigma_b(sa, 2.0, 1.0, t, &c());
        let d = first_variation_probe(sa, sb, 2.0, 1.0, t, &fam, &c()).unwrap();
        prop_assert!(d.abs() < 1e-4, "derivative {d}");
    }
}
