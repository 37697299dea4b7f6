use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::protocol::Drive;
use super::{EnergyLedger, LedgerPoint};
use crate::error::{EngineError, Result};
use crate::statespace::{PhysicalConstants, State};
use crate::transport::Cdf;

/// Trajectories are reduced in fixed-size blocks, in index order, so sums do
/// not depend on the number of worker threads.
const BLOCK: usize = 1024;

/// Number of ledger points recorded along a run (plus the initial one).
const RECORD_POINTS: usize = 100;

/// Terminal positions of an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleState {
    pub positions: Vec<f64>,
    pub rng_seed: u64,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub state: EnsembleState,
    pub ledger: EnergyLedger,
    /// Total work done on each trajectory, by trajectory index.
    pub work: Vec<f64>,
    /// Ensemble-averaged cumulative ledger on a regular time subsample.
    pub series: Vec<LedgerPoint>,
    /// Largest per-trajectory `|ΔU − W − Q|` divided by its floating-point
    /// rounding bound; a value ≤ 1 means the first law holds to machine
    /// precision on every trajectory.
    pub first_law_ratio: f64,
    pub n_steps: usize,
    pub dt: f64,
}

struct Accum {
    work: f64,
    heat: f64,
    du: f64,
    series: Vec<[f64; 3]>,
    ratio: f64,
}

impl Accum {
    fn zero(n_rec: usize) -> Self {
        Self {
            work: 0.0,
            heat: 0.0,
            du: 0.0,
            series: vec![[0.0; 3]; n_rec],
            ratio: 0.0,
        }
    }

    fn add(&mut self, o: &Accum) {
        self.work += o.work;
        self.heat += o.heat;
        self.du += o.du;
        for (a, b) in self.series.iter_mut().zip(&o.series) {
            a[0] += b[0];
            a[1] += b[1];
            a[2] += b[2];
        }
        self.ratio = self.ratio.max(o.ratio);
    }
}

enum Sampler {
    Gaussian(f64, f64),
    Grid(Cdf),
}

impl Sampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Gaussian(m, s) => {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            }
            Sampler::Grid(cdf) => {
                let u: f64 = rng.random();
                cdf.quantile(u)
            }
        }
    }
}

/// Euler–Maruyama ensemble of the overdamped Langevin equation under `drive`.
///
/// Work is credited at fixed position, `dW_k = U(t_{k+1}, X_{k+1}) − U(t_k, X_{k+1})`,
/// and heat at fixed time, `dQ_k = U(t_k, X_{k+1}) − U(t_k, X_k)`, so the
/// per-trajectory balance telescopes. Trajectory `i` draws from its own
/// ChaCha stream keyed by `(seed, i)`.
pub fn simulate_ensemble<D: Drive + ?Sized>(
    drive: &D,
    init: &State,
    n_traj: usize,
    dt: f64,
    seed: u64,
    consts: &PhysicalConstants,
) -> Result<EnsembleRun> {
    consts.validate()?;
    if n_traj == 0 {
        return Err(EngineError::param("n_traj", "must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EngineError::param("dt", "must be positive"));
    }
    let (t0, t1) = drive.span();
    let duration = t1 - t0;
    if dt > duration {
        return Err(EngineError::param("dt", "exceeds the protocol duration"));
    }
    let t_max = drive.max_temperature();
    if let Some(dx) = drive.spatial_step() {
        let limit = consts.gamma * dx * dx / (2.0 * consts.k_b * t_max);
        if dt > limit {
            return Err(EngineError::Stability {
                dt,
                limit,
                context: "Langevin step vs. spatial resolution of the potential".into(),
            });
        }
    }
    if let Some(spacing) = drive.time_step() {
        if dt > spacing * (1.0 + 1e-9) {
            return Err(EngineError::Stability {
                dt,
                limit: spacing,
                context: "Langevin step vs. protocol time grid".into(),
            });
        }
    }

    let n_steps = ((duration / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = duration / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * h).collect();
    // Per-step constants: mobility and noise amplitude.
    let noise: Vec<f64> = times[..n_steps]
        .iter()
        .map(|&t| (2.0 * consts.k_b * drive.temperature(t) * h / consts.gamma).sqrt())
        .collect();
    let mobility = h / consts.gamma;
    let record_stride = n_steps.div_ceil(RECORD_POINTS).max(1);
    let record_steps: Vec<usize> = (0..=n_steps)
        .filter(|k| k % record_stride == 0 || *k == n_steps)
        .collect();
    let n_rec = record_steps.len();

    let sampler = match init {
        State::Gaussian(g) => Sampler::Gaussian(g.mean, g.std_dev()),
        State::Grid(d) => Sampler::Grid(Cdf::new(d)),
    };

    let run_one = |i: usize| -> Result<(f64, f64, Accum)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut x = sampler.draw(&mut rng);
        let u_start = drive.potential(times[0], x);
        let mut acc = Accum::zero(n_rec);
        let (mut w, mut q) = (0.0, 0.0);
        let mut abs_sum = u_start.abs();
        let mut rec = 1;
        for k in 0..n_steps {
            let t = times[k];
            let xi: f64 = rng.sample(StandardNormal);
            let x_new = x - mobility * drive.gradient(t, x) + noise[k] * xi;
            if !x_new.is_finite() {
                return Err(EngineError::Divergence {
                    step: k,
                    reason: format!("trajectory {i} left the finite range"),
                });
            }
            let u_old = drive.potential(t, x);
            let u_mid = drive.potential(t, x_new);
            let u_new = drive.potential(times[k + 1], x_new);
            let dq = u_mid - u_old;
            let dw = u_new - u_mid;
            q += dq;
            w += dw;
            abs_sum += dq.abs() + dw.abs();
            x = x_new;
            if rec < n_rec && record_steps[rec] == k + 1 {
                acc.series[rec] = [w, q, u_new - u_start];
                rec += 1;
            }
        }
        let u_end = drive.potential(times[n_steps], x);
        abs_sum += u_end.abs();
        let du = u_end - u_start;
        let residual = (du - w - q).abs();
        let bound = (n_steps as f64 + 4.0) * f64::EPSILON * abs_sum;
        acc.ratio = if residual == 0.0 {
            0.0
        } else {
            residual / bound
        };
        acc.work = w;
        acc.heat = q;
        acc.du = du;
        Ok((x, w, acc))
    };

    let blocks: Vec<(Vec<f64>, Vec<f64>, Accum)> = (0..n_traj.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| -> Result<_> {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(n_traj);
            let mut xs = Vec::with_capacity(hi - lo);
            let mut ws = Vec::with_capacity(hi - lo);
            let mut acc = Accum::zero(n_rec);
            for i in lo..hi {
                let (x, w, a) = run_one(i)?;
                xs.push(x);
                ws.push(w);
                acc.add(&a);
            }
            Ok((xs, ws, acc))
        })
        .collect::<Result<_>>()?;

    let mut positions = Vec::with_capacity(n_traj);
    let mut work = Vec::with_capacity(n_traj);
    let mut total = Accum::zero(n_rec);
    for (xs, ws, a) in blocks {
        positions.extend(xs);
        work.extend(ws);
        total.add(&a);
    }
    let inv = 1.0 / n_traj as f64;
    let series = record_steps
        .iter()
        .zip(&total.series)
        .map(|(&k, s)| LedgerPoint {
            t: times[k],
            work: s[0] * inv,
            heat: s[1] * inv,
            internal: s[2] * inv,
        })
        .collect();
    Ok(EnsembleRun {
        state: EnsembleState {
            positions,
            rng_seed: seed,
            time: t1,
        },
        ledger: EnergyLedger {
            work: total.work * inv,
            heat: total.heat * inv,
            delta_internal: total.du * inv,
            dissipation: None,
        },
        work,
        series,
        first_law_ratio: total.ratio,
        n_steps,
        dt: h,
    })
}

/// Exponential-work average and the free-energy estimate it implies.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct JarzynskiEstimate {
    /// `⟨exp(−W/k_B T)⟩`.
    pub mean_exp: f64,
    /// Standard error of `mean_exp`.
    pub std_error: f64,
    /// `−k_B T log⟨exp(−W/k_B T)⟩`.
    pub delta_f: f64,
}

pub fn jarzynski_estimate(
    work: &[f64],
    temperature: f64,
    consts: &PhysicalConstants,
) -> Result<JarzynskiEstimate> {
    if work.len() < 2 {
        return Err(EngineError::param("work", "needs at least two samples"));
    }
    let beta = 1.0 / (consts.k_b * temperature);
    let n = work.len() as f64;
    let e: Vec<f64> = work.iter().map(|w| (-beta * w).exp()).collect();
    let mean = e.iter().sum::<f64>() / n;
    let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(JarzynskiEstimate {
        mean_exp: mean,
        std_error: (var / n).sqrt(),
        delta_f: -mean.ln() / beta,
    })
}

/// Writes per-trajectory work as `trajectory,work`.
pub fn write_work_csv<W: Write>(work: &[f64], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["trajectory", "work"])?;
    for (i, v) in work.iter().enumerate() {
        wr.write_record([i.to_string(), v.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Protocol, QuadraticProtocol};
    use crate::statespace::{GaussianState, Grid};

    fn sample_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        // Standard error of the variance for (near-)Gaussian samples.
        (v, v * (2.0 / (n - 1.0)).sqrt())
    }

    #[test]
    fn static_gibbs_is_stationary_and_workless() {
        let c = PhysicalConstants::default();
        let p = QuadraticProtocol::constant(2.0, 1.0, 1.0).unwrap();
        let init = State::Gaussian(GaussianState::new(0.5).unwrap());
        let run = simulate_ensemble(&p, &init, 20_000, 1e-3, 7, &c).unwrap();
        let (v, se) = sample_var(&run.state.positions);
        assert!((v - 0.5).abs() < 3.0 * se + 0.5 * 1e-3, "var {v} se {se}");
        assert!(run.work.iter().all(|&w| w == 0.0));
        assert!(run.first_law_ratio <= 1.0);
    }

    #[test]
    fn free_diffusion_spreads_linearly() {
        let c = PhysicalConstants::default();
        let p = QuadraticProtocol::constant(0.0, 1.0, 0.5).unwrap();
        let init = State::Gaussian(GaussianState::new(0.25).unwrap());
        let run = simulate_ensemble(&p, &init, 20_000, 1e-2, 3, &c).unwrap();
        let (v, se) = sample_var(&run.state.positions);
        assert!((v - 1.25).abs() < 3.0 * se, "var {v} se {se}");
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let c = PhysicalConstants::default();
        let p = QuadraticProtocol::linear_ramp(1.0, 2.0, 1.0, 0.2).unwrap();
        let init = State::Gaussian(GaussianState::new(1.0).unwrap());
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| simulate_ensemble(&p, &init, 3000, 1e-2, 11, &c).unwrap());
        let b = four.install(|| simulate_ensemble(&p, &init, 3000, 1e-2, 11, &c).unwrap());
        assert_eq!(a.work, b.work);
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.state.positions, b.state.positions);
    }

    #[test]
    fn grid_initial_state_and_protocol() {
        let c = PhysicalConstants::default();
        let grid = Grid::symmetric(6.0, 200).unwrap();
        let u = grid.sample(|x| 0.5 * x * x);
        let proto = Protocol::static_potential(grid, u, 1.0, 0.2).unwrap();
        let init = State::Grid(GaussianState::new(1.0).unwrap().to_grid(grid).unwrap());
        let run = simulate_ensemble(&proto, &init, 10_000, 1e-3, 5, &c).unwrap();
        let (v, se) = sample_var(&run.state.positions);
        assert!((v - 1.0).abs() < 3.0 * se + 0.01, "var {v}");
        assert!(run.first_law_ratio <= 1.0);
    }

    #[test]
    fn stability_and_argument_errors() {
        let c = PhysicalConstants::default();
        let grid = Grid::symmetric(1.0, 100).unwrap();
        let proto = Protocol::static_potential(grid, vec![0.0; 100], 1.0, 1.0).unwrap();
        let init = State::Gaussian(GaussianState::new(0.1).unwrap());
        let err = simulate_ensemble(&proto, &init, 10, 1e-2, 0, &c).unwrap_err();
        assert!(matches!(err, EngineError::Stability { .. }));
        let q = QuadraticProtocol::constant(1.0, 1.0, 1.0).unwrap();
        assert!(simulate_ensemble(&q, &init, 0, 1e-2, 0, &c).is_err());
        assert!(simulate_ensemble(&q, &init, 1, -1.0, 0, &c).is_err());
    }

    #[test]
    fn exploding_drift_reports_divergence() {
        let c = PhysicalConstants::default();
        let q = QuadraticProtocol::constant(-1e300, 1.0, 1.0).unwrap();
        let init = State::Gaussian(GaussianState::new(1.0).unwrap());
        let err = simulate_ensemble(&q, &init, 4, 0.1, 0, &c).unwrap_err();
        assert!(matches!(err, EngineError::Divergence { .. }), "{err}");
    }

    #[test]
    fn jarzynski_of_constant_work() {
        let c = PhysicalConstants::default();
        let e = jarzynski_estimate(&[0.5, 0.5, 0.5], 1.0, &c).unwrap();
        assert!((e.delta_f - 0.5).abs() < 1e-12);
        assert_eq!(e.std_error, 0.0);
        let mut buf = Vec::new();
        write_work_csv(&[1.0, 2.0], &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("trajectory,work\n0,1\n"));
    }
}
