//! Executes one experiment and collects its artifacts in memory.

use std::collections::BTreeMap;

use carnot_core::bounds::{
    achievability_sweep, constrained_lower_bound, constrained_upper_bound,
    dimensionless_grid_search, dimensionless_optimum, efficiency_at_constrained_optimum,
    entropy_rate_audit, fisher_power_bound, quadratic_engine_finite_cycle, ConstraintBudget,
    QuadraticEngine, SweepGrid,
};
use carnot_core::cycle::{
    eta_at_max_power, gaussian_cycle_closed_forms, optimal_times, optimize_times, run_cycle,
    write_reports_csv, CycleBudget, CycleMode, CycleReport, CycleSpec, FpSettings,
};
use carnot_core::dynamics::{
    jarzynski_estimate, simulate_ensemble, write_ledger_csv, write_work_csv, QuadraticProtocol,
};
use carnot_core::optima::{
    dirac_train_infimum, jko_step, mixture_sequence_power, optimal_sigma_b, second_variation_probe,
    stationarity_residual, write_iteration_log, write_probe_csv, PerturbationFamily,
    ProximalProblem,
};
use carnot_core::statespace::{
    entropy, DensityFunctionals, GaussianState, Grid, GridDensity, State,
};
use carnot_core::transport::{w2_grid, DEFAULT_QUANTILE_NODES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{CycleModeName, ExperimentConfig, Kind};
use crate::error::CliError;

/// Headline numbers under stable keys; a `BTreeMap` keeps the output order fixed.
pub type Summary = BTreeMap<String, Value>;

#[derive(Debug, Default)]
pub struct Outcome {
    /// `(file name, CSV bytes)` in emission order.
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Summary,
}

impl Outcome {
    fn put(&mut self, key: &str, v: impl Into<Value>) {
        self.summary.insert(key.to_string(), v.into());
    }

    /// Non-finite numbers have no JSON form; they are emitted as `null`.
    fn num(&mut self, key: &str, v: f64) {
        self.put(
            key,
            if v.is_finite() {
                Value::from(v)
            } else {
                Value::Null
            },
        );
    }

    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }
}

fn rows_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.into_inner()
        .map_err(|e| CliError::Output(e.to_string()))
}

fn buffer(f: impl FnOnce(&mut Vec<u8>) -> carnot_core::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let mut out = Outcome::default();
    out.put("kind", serde_json::to_value(cfg.kind)?);
    match cfg.kind {
        Kind::Cycle => cycle(cfg, &mut out)?,
        Kind::Jko => jko(cfg, &mut out)?,
        Kind::Bounds => bounds(cfg, &mut out)?,
        Kind::Jarzynski => jarzynski(cfg, &mut out)?,
        Kind::Sweep => sweep(cfg, &mut out)?,
        Kind::Pathologies => pathologies(cfg, &mut out)?,
    }
    Ok(out)
}

fn report_summary(r: &CycleReport, out: &mut Outcome) {
    out.put("mode", r.mode);
    out.put(
        "regime",
        serde_json::to_value(r.regime).unwrap_or(Value::Null),
    );
    out.num("power", r.power);
    out.num("q_h", r.heat_uptake_qh);
    out.num("work_out", r.total_work_output);
    out.put(
        "eta",
        r.efficiency
            .filter(|e| e.is_finite())
            .map(Value::from)
            .unwrap_or(Value::Null),
    );
    out.num("eta_ss", eta_at_max_power(r.t_hot, r.t_cold));
    out.num("eta_carnot", 1.0 - r.t_cold / r.t_hot);
    out.num("delta_s", r.delta_s);
    out.num("w2", r.w2);
    out.num("w_irr_1", r.w_irr_1);
    out.num("w_irr_3", r.w_irr_3);
    out.num("t1", r.t1);
    out.num("t3", r.t3);
    out.num("t_cycle", r.t_cycle);
    out.num("closure_residual", r.closure_residual);
}

fn cycle(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<(), CliError> {
    let c = cfg.consts()?;
    let temps = cfg.temperatures()?;
    let (th, tc) = (temps.t_hot, temps.t_cold);
    let s = cfg.cycle_section()?;
    let tm = cfg.timing();
    let report = if let (Some(w2), Some(ds)) = (s.w2, s.delta_s) {
        let (t1, t3) = match (tm.t1, tm.t3) {
            (Some(t1), Some(t3)) => (t1, t3),
            _ => {
                let ts = optimal_times(w2, ds, th, tc, &c, tm.t_cycle)?;
                (ts.t1, ts.t3)
            }
        };
        CycleBudget {
            w2,
            delta_s: ds,
            s_a: s.s_a,
            t_hot: th,
            t_cold: tc,
            t1,
            t3,
        }
        .evaluate(&c)?
    } else {
        let (sa, sb) = (s.sigma_a.unwrap_or(1.0), s.sigma_b.unwrap_or(1.0));
        let grid = cfg.grid()?;
        let (rho_a, rho_b) = match (s.mode, grid) {
            (CycleModeName::Analytic, Some(g)) => (
                State::Grid(GridDensity::gaussian(g, 0.0, sa * sa)?),
                State::Grid(GridDensity::gaussian(g, 0.0, sb * sb)?),
            ),
            _ => (
                State::Gaussian(GaussianState::from_std(sa)?),
                State::Gaussian(GaussianState::from_std(sb)?),
            ),
        };
        let (t1, t3) = match (tm.t1, tm.t3) {
            (Some(t1), Some(t3)) => (t1, t3),
            _ => {
                let ts = optimize_times(&rho_a, &rho_b, th, tc, &c, tm.t_cycle)?;
                (ts.t1, ts.t3)
            }
        };
        let mode = match s.mode {
            CycleModeName::Analytic => CycleMode::Analytic,
            CycleModeName::FokkerPlanck => CycleMode::FokkerPlanck(FpSettings {
                grid: grid.unwrap_or(FpSettings::default().grid),
                slices_per_phase: s.slices_per_phase,
                ..FpSettings::default()
            }),
        };
        let spec = CycleSpec {
            rho_a: rho_a.clone(),
            rho_b: rho_b.clone(),
            t_hot: th,
            t_cold: tc,
            t1,
            t3,
            consts: c,
        };
        let r = run_cycle(&spec, mode)?;
        let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
        out.num("s_a", entropy(&rho_a, &c));
        out.num("s_b", entropy(&rho_b, &c));
        out.num("s_a_closed_form", 0.5 * c.k_b * (two_pi_e * sa * sa).ln());
        out.num("s_b_closed_form", 0.5 * c.k_b * (two_pi_e * sb * sb).ln());
        out.num("w2_closed_form", (sb - sa).abs());
        out.num("fisher_bound", fisher_power_bound(&rho_a, th, tc, &c));
        if sb > sa {
            let cf = gaussian_cycle_closed_forms(sa, sb, th, tc, &c)?;
            out.num("power_closed_form", cf.power);
            out.num("q_h_closed_form", cf.q_h);
            out.num("work_out_closed_form", cf.work_out);
            out.num("t_cycle_closed_form", cf.t_cycle);
        }
        if s.mode == CycleModeName::FokkerPlanck {
            out.num("w_irr_1_geodesic", c.gamma * r.w2 * r.w2 / t1);
            out.num("w_irr_3_geodesic", c.gamma * r.w2 * r.w2 / t3);
        }
        r
    };
    report_summary(&report, out);
    out.file(
        "cycle.csv",
        buffer(|b| write_reports_csv(std::slice::from_ref(&report), b))?,
    );
    Ok(())
}

/// A strictly increasing random quantile vector spanning roughly `±4·scale`.
fn random_quantiles(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.random_range(0.5..3.0);
    let mut x = -scale * 4.0 + rng.random_range(-1.0..1.0);
    (0..n)
        .map(|_| {
            x += scale * 8.0 / n as f64 * rng.random_range(0.2..1.8);
            x
        })
        .collect()
}

fn jko(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<(), CliError> {
    let c = cfg.consts()?;
    let temps = cfg.temperatures()?;
    let t = cfg.t_cycle()?;
    let s = cfg.jko_section()?;
    let grid = match cfg.grid()? {
        Some(g) => g,
        None => Grid::symmetric(12.0 * s.sigma_a, 4096)?,
    };
    let a = GridDensity::gaussian(grid, 0.0, s.sigma_a * s.sigma_a)?;
    let mut problem = ProximalProblem::for_cycle(a.clone(), temps.t_hot, temps.t_cold, t, &c)?;
    problem.n_nodes = s.n_nodes;
    let r = jko_step(&problem, None)?;
    let sigma_b = r.density.moments().1.sqrt();
    let closed = optimal_sigma_b(s.sigma_a, temps.t_hot, temps.t_cold, t, &c);
    out.num("objective", r.objective);
    out.num("sigma_b", sigma_b);
    out.num("sigma_b_closed_form", closed);
    out.num("sigma_b_rel_err", (sigma_b / closed - 1.0).abs());
    out.num(
        "stationarity_residual",
        stationarity_residual(&a, &r.density, temps.t_hot, temps.t_cold, t, &c)?,
    );
    out.put("iterations", r.log.len());
    if s.random_starts > 0 {
        let mut worst = 0.0f64;
        for k in 0..s.random_starts {
            let init = random_quantiles(problem.n_nodes, cfg.seed.wrapping_add(k as u64));
            let other = jko_step(&problem, Some(&init))?;
            worst = worst.max(w2_grid(&r.density, &other.density, DEFAULT_QUANTILE_NODES)?);
        }
        out.num("uniqueness_w2", worst);
    }
    out.file("density.csv", buffer(|b| r.density.write_csv(b))?);
    out.file(
        "iterations.csv",
        buffer(|b| write_iteration_log(&r.log, b))?,
    );
    Ok(())
}

#[derive(Serialize)]
struct AuditRow {
    t_cycle: f64,
    delta_s: f64,
    bound: f64,
    slack: f64,
    constraint_max: f64,
    holds: bool,
}

fn bounds(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<(), CliError> {
    let c = cfg.consts()?;
    let temps = cfg.temperatures()?;
    let (th, tc) = (temps.t_hot, temps.t_cold);
    let s = cfg.bounds_section()?;
    let budget = ConstraintBudget::new(s.m)?;
    out.num("upper", constrained_upper_bound(s.m, th, tc)?);
    out.num("lower", constrained_lower_bound(s.m, th, tc)?);

    let grid = SweepGrid {
        n_sigma: s.n_sigma,
        n_lambda: s.n_lambda,
        ..SweepGrid::default()
    };
    let sweep = achievability_sweep(&budget, th, tc, &c, &grid)?;
    out.num("best_found", sweep.summary.best_found);
    out.num("ratio", sweep.summary.ratio);
    out.num("best_sigma", sweep.best_sigma);
    out.num("best_lambda", sweep.best_lambda);
    out.put("n_feasible", sweep.n_feasible);
    out.put("below_upper", sweep.below_upper);

    let eff = efficiency_at_constrained_optimum(th, tc)?;
    out.num("eta", eff.eta);
    out.num("eta_ss", eff.eta_ss);
    out.num("eta_ca", eff.eta_ca);
    out.num("eta_carnot", eff.eta_carnot);
    out.put("efficiency_ordered", eff.ordered);

    let opt = dimensionless_optimum(th, tc, &budget, &c)?;
    out.num("p_star", opt.p_star);
    out.num("sigma_star", opt.sigma_star);
    out.num("lambda_star", opt.lambda_star);
    out.put("branch", serde_json::to_value(opt.branch)?);
    if s.grid_search_n > 0 {
        let (f, _, _) = dimensionless_grid_search(th, tc, s.grid_search_n, s.grid_search_rounds)?;
        out.num("grid_search_p", f);
        out.num("grid_search_rel_err", (f / opt.p_star - 1.0).abs());
    }

    let engine = QuadraticEngine::optimal(&budget, th, tc, c)?;
    let fin =
        quadratic_engine_finite_cycle(&engine, s.finite_cycle_t, s.finite_cycle_steps, &budget)?;
    out.num("finite_cycle_t", s.finite_cycle_t);
    out.num("finite_cycle_power", fin.power);
    out.num("constraint_max", fin.constraint_max);
    out.num("constraint_max_hot", fin.constraint_max_hot);
    out.num("constraint_max_cold", fin.constraint_max_cold);

    if !s.entropy_audit_t_cycle.is_empty() {
        let fp_grid = Grid::symmetric(12.0 * engine.sigma, 600)?;
        let mut rows = Vec::new();
        for &t in &s.entropy_audit_t_cycle {
            let a = entropy_rate_audit(&engine, t, &budget, fp_grid, 200)?;
            rows.push(AuditRow {
                t_cycle: t,
                delta_s: a.delta_s,
                bound: a.bound,
                slack: a.slack,
                constraint_max: a.constraint_max,
                holds: a.holds(),
            });
        }
        out.put("entropy_audit_holds", rows.iter().all(|r| r.holds));
        out.file("entropy_audit.csv", rows_csv(&rows)?);
    }

    out.file(
        "sweep.csv",
        buffer(|b| carnot_core::bounds::write_sweep_csv(&sweep.points, b))?,
    );
    out.file("finite_cycle.csv", rows_csv(&fin.ledger)?);
    Ok(())
}

fn jarzynski(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<(), CliError> {
    let c = cfg.consts()?;
    let s = cfg.jarzynski_section()?;
    let ramp = QuadraticProtocol::linear_ramp(s.a0, s.a1, s.temperature, s.duration)?;
    let init = State::Gaussian(GaussianState::new(c.k_b * s.temperature / s.a0)?);
    let run = simulate_ensemble(&ramp, &init, s.n_traj, s.dt, cfg.seed, &c)?;
    let est = jarzynski_estimate(&run.work, s.temperature, &c)?;
    let exact = (s.a0 / s.a1).sqrt();
    out.num("mean_exp", est.mean_exp);
    out.num("mean_exp_exact", exact);
    out.num("mean_exp_rel_err", (est.mean_exp / exact - 1.0).abs());
    out.num("std_error", est.std_error);
    out.num("delta_f", est.delta_f);
    out.num(
        "delta_f_exact",
        0.5 * c.k_b * s.temperature * (s.a1 / s.a0).ln(),
    );
    out.num(
        "mean_work",
        run.work.iter().sum::<f64>() / run.work.len() as f64,
    );
    out.num("first_law_ratio", run.first_law_ratio);
    out.put("n_traj", s.n_traj);
    out.put("seed", cfg.seed);
    out.file("work.csv", buffer(|b| write_work_csv(&run.work, b))?);
    out.file("ledger.csv", buffer(|b| write_ledger_csv(&run.series, b))?);
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    sigma_b: f64,
    t_cycle: f64,
    power: f64,
    fisher_bound: f64,
}

fn sweep(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<(), CliError> {
    let c = cfg.consts()?;
    let temps = cfg.temperatures()?;
    let (th, tc) = (temps.t_hot, temps.t_cold);
    let s = cfg.sweep_section()?;
    let a = GaussianState::from_std(s.sigma_a)?;
    let bound = fisher_power_bound(&a, th, tc, &c);
    let periods: Vec<f64> = (0..s.n_t_cycle)
        .map(|j| {
            if s.n_t_cycle == 1 {
                s.t_cycle_min
            } else {
                let f = j as f64 / (s.n_t_cycle - 1) as f64;
                s.t_cycle_min * (s.t_cycle_max / s.t_cycle_min).powf(f)
            }
        })
        .collect();
    let cells: Vec<(f64, f64)> = (0..s.n_sigma_b)
        .flat_map(|i| {
            let sb = s.sigma_a + (s.sigma_b_max - s.sigma_a) * (i + 1) as f64 / s.n_sigma_b as f64;
            periods.iter().map(move |&t| (sb, t))
        })
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(sb, t)| {
            let spec = CycleSpec {
                rho_a: State::Gaussian(a),
                rho_b: State::Gaussian(GaussianState::from_std(sb)?),
                t_hot: th,
                t_cold: tc,
                t1: t / 2.0,
                t3: t / 2.0,
                consts: c,
            };
            Ok(SweepRow {
                sigma_b: sb,
                t_cycle: t,
                power: run_cycle(&spec, CycleMode::Analytic)?.power,
                fisher_bound: bound,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let max_power = rows
        .iter()
        .map(|r| r.power)
        .fold(f64::NEG_INFINITY, f64::max);

    let sb = s.sigma_a * (1.0 + s.tightness_gap);
    let (ra, rb) = (
        State::Gaussian(a),
        State::Gaussian(GaussianState::from_std(sb)?),
    );
    let ts = optimize_times(&ra, &rb, th, tc, &c, None)?;
    let spec = CycleSpec {
        rho_a: ra,
        rho_b: rb,
        t_hot: th,
        t_cold: tc,
        t1: ts.t1,
        t3: ts.t3,
        consts: c,
    };
    let tight = run_cycle(&spec, CycleMode::Analytic)?.power;

    out.num("fisher_bound", bound);
    out.num("max_power", max_power);
    out.put("n_cycles", rows.len());
    out.put(
        "all_below_bound",
        rows.iter().all(|r| r.power <= bound + 1e-9),
    );
    out.num("tight_power", tight);
    out.num("tightness_rel_err", (tight / bound - 1.0).abs());
    out.file("sweep.csv", rows_csv(&rows)?);
    Ok(())
}

#[derive(Serialize)]
struct CurvatureRow {
    sigma_b: f64,
    curvature: f64,
}

fn pathologies(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<(), CliError> {
    let c = cfg.consts()?;
    let temps = cfg.temperatures()?;
    let (th, tc) = (temps.t_hot, temps.t_cold);
    let t = cfg.t_cycle()?;
    let s = cfg.pathologies_section()?;

    let b = GaussianState::from_std(s.sigma_b)?;
    let pts = s
        .n_values
        .par_iter()
        .map(|&n| mixture_sequence_power(n, s.sigma_a, &b, th, tc, t, &c))
        .collect::<carnot_core::Result<Vec<_>>>()?;
    let expected = c.k_b * (th - tc) / t;
    let slope_err = pts
        .windows(2)
        .map(|w| {
            let slope = (w[1].value - w[0].value) / (w[1].n as f64 / w[0].n as f64).ln();
            (slope / expected - 1.0).abs()
        })
        .fold(0.0, f64::max);
    out.num("slope_expected", expected);
    out.num("slope_max_rel_err", slope_err);
    out.put(
        "mixture_increasing",
        pts.windows(2).all(|w| w[1].value > w[0].value),
    );
    out.put(
        "mixture_within_bound",
        pts.iter().all(|p| p.satisfies_bound()),
    );
    out.file("probe.csv", buffer(|buf| write_probe_csv(&pts, buf))?);

    let dirac_sigma = s.dirac_sigma_b.unwrap_or(s.sigma_b);
    let grid = match cfg.grid()? {
        Some(g) => g,
        None => Grid::symmetric(8.0 * dirac_sigma, 8192)?,
    };
    let rho_b = GridDensity::gaussian(grid, 0.0, dirac_sigma * dirac_sigma)?;
    let s_a = rho_b.entropy(&c) - s.entropy_gap;
    let train = dirac_train_infimum(&rho_b, s_a, s.dirac_spikes, &c)?;
    out.num("dirac_w2", train.w2);
    out.num("dirac_entropy", train.entropy);
    out.num("dirac_target_entropy", s_a);
    out.num("dirac_theta", train.theta);
    out.put("dirac_spikes", train.n_spikes);
    out.file("dirac.csv", buffer(|buf| train.density.write_csv(buf))?);

    if !s.curvature_sigma_b.is_empty() {
        let t_curv = s.curvature_t_cycle.unwrap_or(t);
        let fam = PerturbationFamily::cubic_bump(s.sigma_a);
        let rows = s
            .curvature_sigma_b
            .par_iter()
            .map(|&sb| {
                Ok(CurvatureRow {
                    sigma_b: sb,
                    curvature: second_variation_probe(s.sigma_a, sb, th, tc, t_curv, &fam, &c)?
                        .curvature,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        out.num(
            "curvature_min",
            rows.iter()
                .map(|r| r.curvature)
                .fold(f64::INFINITY, f64::min),
        );
        out.file("curvature.csv", rows_csv(&rows)?);
    }
    Ok(())
}
