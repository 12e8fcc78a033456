//! Post-processing: energy-error scaling fits, effective sample size, moment
//! estimates with standard errors, Kolmogorov–Smirnov statistics and a few
//! closed-form and quadrature oracles.
//!
//! Nothing here decides pass or fail; thresholds belong to the caller.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flows::{LieSystem, PhaseState};
use crate::integrators::{integrate, IntegratorScheme, SchemeKind};
use crate::lie::{build_group, Algebra, GroupFamily};
use crate::potentials::{GaugePotential, Potential};
use crate::random::{chain_rng, random_element};
use crate::sampler::MomentumSampler;

/// Largest mean `|ΔH|` still treated as exact conservation.
pub const EXACT_ENERGY_TOL: f64 = 1e-12;

/// Least-squares fit of `log err = slope · log h + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub step_sizes: Vec<f64>,
    pub errors: Vec<f64>,
    /// `None` when the errors vanish and no fit is meaningful.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub exact: bool,
}

pub fn fit_loglog(step_sizes: &[f64], errors: &[f64]) -> Result<ScalingFit> {
    if step_sizes.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: step_sizes.len(),
            found: errors.len(),
        });
    }
    if step_sizes.len() < 3 {
        return Err(Error::InsufficientData("a scaling fit needs at least 3 step sizes".into()));
    }
    if step_sizes.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(Error::InsufficientData("step sizes must be positive and finite".into()));
    }
    let hmax = step_sizes.iter().cloned().fold(f64::MIN, f64::max);
    let hmin = step_sizes.iter().cloned().fold(f64::MAX, f64::min);
    if hmax / hmin < 4.0 {
        return Err(Error::InsufficientData("step sizes must span at least a factor of 4".into()));
    }
    if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::NonFinite("scaling errors".into()));
    }
    let mut fit = ScalingFit {
        step_sizes: step_sizes.to_vec(),
        errors: errors.to_vec(),
        slope: None,
        intercept: None,
        r_squared: None,
        exact: false,
    };
    if errors.iter().all(|e| *e <= EXACT_ENERGY_TOL) {
        fit.exact = true;
        return Ok(fit);
    }
    if errors.contains(&0.0) {
        return Err(Error::InsufficientData("some but not all errors vanish".into()));
    }
    let x: Vec<f64> = step_sizes.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    fit.slope = Some(slope);
    fit.intercept = Some(intercept);
    fit.r_squared = Some(if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 });
    Ok(fit)
}

/// A fixed system, potential and set of initial phase-space states used for
/// step-size scans.
pub struct Benchmark {
    pub name: String,
    pub system: LieSystem,
    pub potential: Box<dyn Potential>,
    pub trajectory_time: f64,
    pub initial_states: Vec<PhaseState>,
}

impl Benchmark {
    /// Draws `trajectories` initial states: `q` from the group's random
    /// element sampler, `v` from the momentum distribution.
    pub fn new(
        name: &str,
        system: LieSystem,
        potential: Box<dyn Potential>,
        trajectory_time: f64,
        trajectories: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(trajectory_time > 0.0) {
            return Err(Error::Config("trajectory time must be positive".into()));
        }
        let mut rng = chain_rng(seed, 0);
        let momentum = MomentumSampler::new(system.algebra().metric(), None)?;
        let initial_states = (0..trajectories)
            .map(|_| {
                let q = random_element(&mut rng, system.algebra(), 0.5);
                PhaseState::new(q, momentum.draw(&mut rng))
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            system,
            potential,
            trajectory_time,
            initial_states,
        })
    }

    /// `SO(3)` with the trace-form metric and `V(q) = 2 tr(U q)` for a fixed
    /// generic `U`; trajectory time 1, 100 trajectories.
    pub fn so3_gauge() -> Self {
        let alg = Algebra::trace_form(build_group(GroupFamily::SpecialOrthogonal, 3).expect("n = 3"))
            .expect("trace form is SPD");
        let system = LieSystem::bi_invariant(alg).expect("SO(3) is bi-invariant");
        Self::new("so3_gauge", system, Box::new(so3_gauge_potential()), 1.0, 100, 2024).expect("valid benchmark")
    }

    /// Mean `|ΔH|` over the initial states at step size `h`.
    pub fn mean_energy_error(&self, kind: SchemeKind, h: f64) -> Result<f64> {
        let n_steps = ((self.trajectory_time / h).round() as usize).max(1);
        let scheme = IntegratorScheme::new(kind, h, n_steps)?;
        let mut acc = 0.0;
        for s in &self.initial_states {
            let end = integrate(&self.system, self.potential.as_ref(), s, &scheme)?;
            let dh = self.system.hamiltonian(self.potential.as_ref(), &end)
                - self.system.hamiltonian(self.potential.as_ref(), s);
            if !dh.is_finite() {
                return Err(Error::NonFinite("energy error".into()));
            }
            acc += dh.abs();
        }
        Ok(acc / self.initial_states.len().max(1) as f64)
    }
}

/// The gauge potential of [`Benchmark::so3_gauge`].
pub fn so3_gauge_potential() -> GaugePotential {
    let u = DMatrix::from_row_slice(3, 3, &[0.9, -0.4, 0.3, 0.2, 1.1, -0.7, -0.5, 0.6, 0.8]);
    GaugePotential::new(u, 2.0).expect("finite parameters")
}

/// Mean `|ΔH|` per step size, fitted on a log-log scale.
pub fn energy_error_scan(benchmark: &Benchmark, kind: SchemeKind, step_sizes: &[f64]) -> Result<ScalingFit> {
    if step_sizes.len() < 3 {
        return Err(Error::InsufficientData("a scan needs at least 3 step sizes".into()));
    }
    let errors = step_sizes
        .iter()
        .map(|&h| benchmark.mean_energy_error(kind, h))
        .collect::<Result<Vec<_>>>()?;
    fit_loglog(step_sizes, &errors)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EssEstimate {
    pub ess: f64,
    /// Integrated autocorrelation time `N / ESS`.
    pub tau: f64,
    /// Set for a constant series; `ess` is then the length.
    pub degenerate: bool,
}

pub const MIN_ESS_LENGTH: usize = 100;

fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum::<f64>()
        / n as f64
}

/// Effective sample size by Geyer's initial monotone sequence estimator.
pub fn ess(series: &[f64]) -> Result<EssEstimate> {
    let n = series.len();
    if n < MIN_ESS_LENGTH {
        return Err(Error::InsufficientData(format!(
            "ESS needs at least {MIN_ESS_LENGTH} values, got {n}"
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ESS series".into()));
    }
    if series.iter().all(|x| *x == series[0]) {
        return Ok(EssEstimate {
            ess: n as f64,
            tau: 1.0,
            degenerate: true,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let g0 = autocovariance(series, mean, 0);
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (autocovariance(series, mean, 2 * m) + autocovariance(series, mean, 2 * m + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Ok(EssEstimate {
        ess: n as f64 / tau,
        tau,
        degenerate: false,
    })
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// A point estimate with an autocorrelation-aware standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub ess: f64,
}

impl MomentEstimate {
    /// `|value − target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.standard_error
    }
}

/// Sample mean with standard error `sd / √ESS`.
pub fn mean_estimate(x: &[f64]) -> Result<MomentEstimate> {
    let e = ess(x)?;
    Ok(MomentEstimate {
        value: mean(x),
        standard_error: (variance(x) / e.ess).sqrt(),
        ess: e.ess,
    })
}

/// Sample variance, with the standard error of the mean of `(x − x̄)²`.
pub fn variance_estimate(x: &[f64]) -> Result<MomentEstimate> {
    let m = mean(x);
    let sq: Vec<f64> = x.iter().map(|a| (a - m).powi(2)).collect();
    let inner = mean_estimate(&sq)?;
    Ok(MomentEstimate {
        value: variance(x),
        standard_error: inner.standard_error,
        ess: inner.ess,
    })
}

/// Mean resultant length `‖x̄‖` of unit vectors. The standard error is that
/// of the projections onto the mean direction.
pub fn mean_resultant(points: &[DVector<f64>]) -> Result<MomentEstimate> {
    let first = points
        .first()
        .ok_or_else(|| Error::InsufficientData("no points".into()))?;
    let mut sum = DVector::zeros(first.len());
    for p in points {
        sum += p;
    }
    let bar = sum / points.len() as f64;
    let r = bar.norm();
    let dir = if r > 0.0 { &bar / r } else { DVector::zeros(first.len()) };
    let proj: Vec<f64> = points.iter().map(|p| p.dot(&dir)).collect();
    let inner = mean_estimate(&proj)?;
    Ok(MomentEstimate {
        value: r,
        standard_error: inner.standard_error,
        ess: inner.ess,
    })
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// One-sample Kolmogorov–Smirnov distance against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted(samples);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov critical value `c(α) = √(−½ ln(α/2))`; reject when
/// `√n · D > c(α)`.
pub fn kolmogorov_critical(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

/// Asymptotic survival function `P(√n D > λ)` of the Kolmogorov distribution.
pub fn kolmogorov_pvalue(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Composite Simpson rule on `[a, b]` with `intervals` (rounded up to even).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals.max(2) + intervals % 2;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `E[tr(q)^k]` under Haar measure on `SO(3)`, by quadrature over the
/// rotation angle with density `(1 − cos θ)/π`.
pub fn so3_haar_trace_moment(k: u32) -> f64 {
    simpson(
        |t| (1.0 + 2.0 * t.cos()).powi(k as i32) * (1.0 - t.cos()) / std::f64::consts::PI,
        0.0,
        std::f64::consts::PI,
        4000,
    )
}

/// Mean resultant length of the von Mises–Fisher law on `S²`:
/// `coth κ − 1/κ`.
pub fn vmf_mean_resultant(kappa: f64) -> f64 {
    if kappa < 1e-4 {
        // κ/3 − κ³/45 + …
        return kappa / 3.0 - kappa.powi(3) / 45.0;
    }
    1.0 / kappa.tanh() - 1.0 / kappa
}

/// The same quantity by quadrature of the marginal density `∝ e^{κt}`.
pub fn vmf_mean_resultant_quadrature(kappa: f64) -> f64 {
    let num = simpson(|t| t * (kappa * t).exp(), -1.0, 1.0, 4000);
    let den = simpson(|t| (kappa * t).exp(), -1.0, 1.0, 4000);
    num / den
}

/// Mean resultant length of the von Mises–Fisher law on `S^{n−1}`, by
/// quadrature over the polar angle with density `∝ e^{κ cos θ} sin^{n−2} θ`.
pub fn vmf_mean_resultant_sphere(n: usize, kappa: f64) -> f64 {
    let w = |t: f64| (kappa * (t.cos() - 1.0)).exp() * t.sin().powi(n as i32 - 2);
    let num = simpson(|t| t.cos() * w(t), 0.0, std::f64::consts::PI, 4000);
    let den = simpson(w, 0.0, std::f64::consts::PI, 4000);
    num / den
}

/// CDF of `t = μ·x` under the vMF law on `S²`: density `∝ e^{κt}` on `[−1, 1]`.
pub fn vmf_marginal_cdf(kappa: f64, t: f64) -> f64 {
    let t = t.clamp(-1.0, 1.0);
    if kappa < 1e-12 {
        return 0.5 * (t + 1.0);
    }
    // (e^{κ(t+1)} − 1) / (e^{2κ} − 1), scaled by e^{−2κ} to avoid overflow.
    (-kappa * (1.0 - t)).exp() * (-kappa * (t + 1.0)).exp_m1() / (-2.0 * kappa).exp_m1()
}

/// Inverse of [`vmf_marginal_cdf`].
pub fn vmf_marginal_inverse_cdf(kappa: f64, u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    if kappa < 1e-12 {
        return 2.0 * u - 1.0;
    }
    1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa
}
