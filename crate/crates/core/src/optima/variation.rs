//! Local behavior of `g(ρ_a) = −(ΔT/t)S(ρ_a) − (4γ/t²)W2(ρ_a, ρ_b)²` around
//! a Gaussian `ρ_a`, probed along variance-locked transport perturbations.
//!
//! The perturbed state is `ρ_s = (G_s∘Ψ_s)♯ρ_a`, where `Ψ_s` is the flow of
//! `ξ = η'` up to time `s` and `G_s(x) = r(s)(x − m_s)` restores the mean and
//! variance. Everything is evaluated in Lagrangian form on quadrature nodes
//! of `ρ_a`: since `G_s∘Ψ_s` is monotone it is the optimal map from `ρ_a`,
//! so `S(ρ_s) = S(ρ_a) + k_B⟨log (G_s∘Ψ_s)'⟩` and
//! `W2(ρ_s, ρ_b)² = ⟨(G_s∘Ψ_s(x) − (σ_b/σ_a)x)²⟩` for `ρ_b = N(0, σ_b²)`.

use std::sync::Arc;

use serde::Serialize;

use super::check_cycle;
use crate::error::{EngineError, Result};
use crate::statespace::PhysicalConstants;

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct PerturbationFamily {
    /// Generator potential; the perturbation field is `ξ = η'`.
    pub eta: Scalar,
    pub s_values: Vec<f64>,
    pub variance_lock: bool,
    /// Quadrature nodes over `±12σ_a`.
    pub n_nodes: usize,
}

impl std::fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbationFamily")
            .field("s_values", &self.s_values)
            .field("variance_lock", &self.variance_lock)
            .field("n_nodes", &self.n_nodes)
            .finish_non_exhaustive()
    }
}

const DEFAULT_NODES: usize = 4001;
const FLOW_STEPS: usize = 64;
const HALF_WIDTH: f64 = 12.0;

impl PerturbationFamily {
    pub fn from_fn(eta: impl Fn(f64) -> f64 + Send + Sync + 'static, s_values: Vec<f64>) -> Self {
        Self {
            eta: Arc::new(eta),
            s_values,
            variance_lock: true,
            n_nodes: DEFAULT_NODES,
        }
    }

    /// `η(x) = exp(−x²/2σ_a²) x³` with amplitudes `σ_a·{0.04, 0.02, 0.01}`.
    pub fn cubic_bump(sigma_a: f64) -> Self {
        let v = sigma_a * sigma_a;
        Self::from_fn(
            move |x| (-x * x / (2.0 * v)).exp() * x * x * x,
            vec![0.04 * sigma_a, 0.02 * sigma_a, 0.01 * sigma_a],
        )
    }

    /// `η(x) = x`: a pure translation.
    pub fn linear(sigma_a: f64) -> Self {
        Self::from_fn(|x| x, vec![0.04 * sigma_a, 0.02 * sigma_a, 0.01 * sigma_a])
    }

    pub fn with_nodes(mut self, n_nodes: usize) -> Self {
        self.n_nodes = n_nodes;
        self
    }

    fn step(sigma_a: f64) -> f64 {
        1e-4 * sigma_a
    }

    fn xi(&self, x: f64, h: f64) -> f64 {
        ((self.eta)(x + h) - (self.eta)(x - h)) / (2.0 * h)
    }

    fn dxi(&self, x: f64, h: f64) -> f64 {
        ((self.eta)(x + h) - 2.0 * (self.eta)(x) + (self.eta)(x - h)) / (h * h)
    }

    /// `ζ(x) = η(x) − x²/(2σ_a²) ∫ z η'(z) ρ_a(z) dz` for `ρ_a = N(0, σ_a²)`.
    pub fn zeta(&self, x: f64, sigma_a: f64) -> Result<f64> {
        let q = Quadrature::new(sigma_a, self.n_nodes)?;
        let h = Self::step(sigma_a);
        let m: f64 =
            q.x.iter()
                .zip(&q.w)
                .map(|(&z, w)| w * z * self.xi(z, h))
                .sum();
        Ok((self.eta)(x) - x * x / (2.0 * sigma_a * sigma_a) * m)
    }

    fn validate(&self, sigma_a: f64) -> Result<()> {
        if !self.variance_lock {
            return Err(EngineError::param(
                "variance_lock",
                "the probe requires a variance lock",
            ));
        }
        if self.s_values.is_empty() {
            return Err(EngineError::param(
                "s_values",
                "needs at least one amplitude",
            ));
        }
        if self
            .s_values
            .iter()
            .any(|&s| !(s > 0.0 && s <= 0.05 * sigma_a))
        {
            return Err(EngineError::param(
                "s_values",
                "amplitudes must lie in (0, 0.05 sigma_a]",
            ));
        }
        if self.n_nodes < 101 {
            return Err(EngineError::param("n_nodes", "needs at least 101 nodes"));
        }
        Ok(())
    }
}

/// Trapezoid nodes and weights `w_j ρ_a(x_j)` for `ρ_a = N(0, σ_a²)`.
struct Quadrature {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl Quadrature {
    fn new(sigma_a: f64, n: usize) -> Result<Self> {
        if !(sigma_a > 0.0 && sigma_a.is_finite()) {
            return Err(EngineError::param("sigma_a", "must be positive"));
        }
        let l = HALF_WIDTH * sigma_a;
        let dx = 2.0 * l / (n - 1) as f64;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma_a * sigma_a).sqrt();
        let x: Vec<f64> = (0..n).map(|j| -l + j as f64 * dx).collect();
        let w = x
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let end = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                end * dx * norm * (-x * x / (2.0 * sigma_a * sigma_a)).exp()
            })
            .collect();
        Ok(Self { x, w })
    }
}

/// Constants of `g` for one probe.
struct Target {
    sigma_ratio: f64,
    entropy_weight: f64,
    transport_weight: f64,
    k_b: f64,
}

/// `g(ρ_s) − g(ρ_a)`-relevant part of `g`: the `S(ρ_a)` term is dropped.
fn g_of(
    family: &PerturbationFamily,
    q: &Quadrature,
    sigma_a: f64,
    s: f64,
    tg: &Target,
) -> Result<f64> {
    let h = PerturbationFamily::step(sigma_a);
    let ds = s / FLOW_STEPS as f64;
    let n = q.x.len();
    let mut psi = q.x.clone();
    let mut jac = vec![1.0; n];
    // Flow of ξ with its Jacobian, classical RK4 in s.
    for (p, j) in psi.iter_mut().zip(jac.iter_mut()) {
        for _ in 0..FLOW_STEPS {
            let (x0, j0) = (*p, *j);
            let k1 = family.xi(x0, h);
            let l1 = family.dxi(x0, h) * j0;
            let x1 = x0 + 0.5 * ds * k1;
            let k2 = family.xi(x1, h);
            let l2 = family.dxi(x1, h) * (j0 + 0.5 * ds * l1);
            let x2 = x0 + 0.5 * ds * k2;
            let k3 = family.xi(x2, h);
            let l3 = family.dxi(x2, h) * (j0 + 0.5 * ds * l2);
            let x3 = x0 + ds * k3;
            let k4 = family.xi(x3, h);
            let l4 = family.dxi(x3, h) * (j0 + ds * l3);
            *p = x0 + ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            *j = j0 + ds / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        }
    }
    let limit = 2.0 * HALF_WIDTH * sigma_a;
    if psi
        .iter()
        .zip(&jac)
        .any(|(p, j)| !p.is_finite() || p.abs() > limit || !(*j > 0.0))
    {
        return Err(EngineError::Support(format!(
            "perturbation flow at amplitude {s} folds or leaves the support"
        )));
    }
    let mass: f64 = q.w.iter().sum();
    let mean = psi.iter().zip(&q.w).map(|(p, w)| w * p).sum::<f64>() / mass;
    let var = psi
        .iter()
        .zip(&q.w)
        .map(|(p, w)| w * (p - mean).powi(2))
        .sum::<f64>()
        / mass;
    let r = sigma_a / var.sqrt();
    let mut d_entropy = 0.0;
    let mut w2 = 0.0;
    for k in 0..n {
        d_entropy += q.w[k] * (r * jac[k]).ln();
        let y = r * (psi[k] - mean);
        w2 += q.w[k] * (y - tg.sigma_ratio * q.x[k]).powi(2);
    }
    Ok(-tg.entropy_weight * tg.k_b * d_entropy / mass - tg.transport_weight * w2 / mass)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureEstimate {
    /// Richardson-extrapolated curvature at the smallest amplitude.
    pub curvature: f64,
    pub s_values: Vec<f64>,
    /// `[g(s) + g(−s) − 2g(0)]/s²` per amplitude.
    pub raw: Vec<f64>,
    /// `(4C(s/2) − C(s))/3` per amplitude.
    pub extrapolated: Vec<f64>,
}

fn setup(
    sigma_a: f64,
    sigma_b: f64,
    t_hot: f64,
    t_cold: f64,
    t_cycle: f64,
    family: &PerturbationFamily,
    consts: &PhysicalConstants,
) -> Result<(Quadrature, Target)> {
    check_cycle(t_hot, t_cold, t_cycle)?;
    if !(sigma_b > 0.0 && sigma_b.is_finite()) {
        return Err(EngineError::param("sigma_b", "must be positive"));
    }
    let q = Quadrature::new(sigma_a, family.n_nodes.max(2))?;
    family.validate(sigma_a)?;
    let tg = Target {
        sigma_ratio: sigma_b / sigma_a,
        entropy_weight: (t_hot - t_cold) / t_cycle,
        transport_weight: 4.0 * consts.gamma / (t_cycle * t_cycle),
        k_b: consts.k_b,
    };
    Ok((q, tg))
}

/// Second difference of `g` along the family, extrapolated over the ladder.
pub fn second_variation_probe(
    sigma_a: f64,
    sigma_b: f64,
    t_hot: f64,
    t_cold: f64,
    t_cycle: f64,
    family: &PerturbationFamily,
    consts: &PhysicalConstants,
) -> Result<CurvatureEstimate> {
    let (q, tg) = setup(sigma_a, sigma_b, t_hot, t_cold, t_cycle, family, consts)?;
    let g0 = g_of(family, &q, sigma_a, 0.0, &tg)?;
    let curv = |s: f64| -> Result<f64> {
        Ok(
            (g_of(family, &q, sigma_a, s, &tg)? + g_of(family, &q, sigma_a, -s, &tg)? - 2.0 * g0)
                / (s * s),
        )
    };
    let mut s_values = family.s_values.clone();
    s_values.sort_by(|a, b| b.total_cmp(a));
    let mut raw = Vec::with_capacity(s_values.len());
    let mut extrapolated = Vec::with_capacity(s_values.len());
    for &s in &s_values {
        let c = curv(s)?;
        let c_half = curv(0.5 * s)?;
        raw.push(c);
        extrapolated.push((4.0 * c_half - c) / 3.0);
    }
    Ok(CurvatureEstimate {
        curvature: *extrapolated.last().expect("validated non-empty"),
        s_values,
        raw,
        extrapolated,
    })
}

/// Central difference `d(s) = [g(s) − g(−s)]/2s` at the smallest amplitude,
/// Richardson-extrapolated with `d(s/2)` to remove the `O(s²)` bias.
pub fn first_variation_probe(
    sigma_a: f64,
    sigma_b: f64,
    t_hot: f64,
    t_cold: f64,
    t_cycle: f64,
    family: &PerturbationFamily,
    consts: &PhysicalConstants,
) -> Result<f64> {
    let (q, tg) = setup(sigma_a, sigma_b, t_hot, t_cold, t_cycle, family, consts)?;
    let s = family
        .s_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let d = |s: f64| -> Result<f64> {
        Ok((g_of(family, &q, sigma_a, s, &tg)? - g_of(family, &q, sigma_a, -s, &tg)?) / (2.0 * s))
    };
    Ok((4.0 * d(0.5 * s)? - d(s)?) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn gaussian_is_local_minimizer_below_threshold() {
        // Threshold k_B ΔT t/(8γσ_a) = 2.
        let fam = PerturbationFamily::cubic_bump(1.0);
        let e = second_variation_probe(1.0, 1.5, 2.0, 1.0, 16.0, &fam, &c()).unwrap();
        assert!(e.curvature > 0.0, "{e:?}");
        // A wider target pulls harder towards non-Gaussian shapes.
        let wide = second_variation_probe(1.0, 4.0, 2.0, 1.0, 16.0, &fam, &c()).unwrap();
        assert!(wide.curvature < e.curvature, "{wide:?}");
    }

    #[test]
    fn curvature_stable_under_refinement() {
        let coarse = PerturbationFamily::cubic_bump(1.0).with_nodes(1001);
        let fine = PerturbationFamily::cubic_bump(1.0).with_nodes(4001);
        let a = second_variation_probe(1.0, 1.5, 2.0, 1.0, 16.0, &coarse, &c()).unwrap();
        let b = second_variation_probe(1.0, 1.5, 2.0, 1.0, 16.0, &fine, &c()).unwrap();
        assert!(
            (a.curvature / b.curvature - 1.0).abs() < 0.1,
            "{} vs {}",
            a.curvature,
            b.curvature
        );
    }

    #[test]
    fn translation_has_no_curvature() {
        let fam = PerturbationFamily::linear(1.0);
        let e = second_variation_probe(1.0, 1.5, 2.0, 1.0, 16.0, &fam, &c()).unwrap();
        assert!(e.curvature.abs() < 1e-6, "{e:?}");
    }

    #[test]
    fn first_variation_vanishes() {
        for fam in [
            PerturbationFamily::cubic_bump(1.0),
            PerturbationFamily::from_fn(
                |x: f64| (x / 2.0).sin() * (-x * x / 4.0).exp(),
                vec![0.01],
            ),
        ] {
            let d = first_variation_probe(1.0, 1.5, 2.0, 1.0, 16.0, &fam, &c()).unwrap();
            assert!(d.abs() < 1e-4, "derivative {d}");
        }
    }

    #[test]
    fn probe_preconditions() {
        let mut fam = PerturbationFamily::cubic_bump(1.0);
        fam.variance_lock = false;
        assert!(second_variation_probe(1.0, 1.5, 2.0, 1.0, 16.0, &fam, &c()).is_err());
        let fam = PerturbationFamily::from_fn(|x| x * x * x, vec![0.2]);
        assert!(second_variation_probe(1.0, 1.5, 2.0, 1.0, 16.0, &fam, &c()).is_err());
        // A field whose flow leaves the support at small amplitude.
        let fam = PerturbationFamily::from_fn(|x: f64| 1e4 * (x * x / 2.0), vec![0.01]);
        let err = second_variation_probe(1.0, 1.5, 2.0, 1.0, 16.0, &fam, &c()).unwrap_err();
        assert!(matches!(err, EngineError::Support(_)), "{err}");
        let z = PerturbationFamily::cubic_bump(1.0).zeta(0.0, 1.0).unwrap();
        assert_eq!(z, 0.0);
    }
}
