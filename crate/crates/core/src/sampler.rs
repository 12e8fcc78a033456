//! The HMC driver.
//!
//! Target: `π(q) ∝ e^{−V(q)}` with respect to Haar measure. The phase-space
//! volume on `G × g` is Haar times Lebesgue, and every integrator stage is an
//! exact Hamiltonian flow, so the Metropolis ratio is `e^{−ΔH}` with no
//! Jacobian term.
//!
//! Momentum is fully refreshed from `N(0, g⁻¹)` each trajectory. In horizontal
//! mode it is drawn on `p` only, and the potential must be right-`K`-invariant.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::diagnostics::{ess, EssEstimate};
use crate::error::{Error, Result};
use crate::flows::{LieSystem, PhaseState};
use crate::integrators::{integrate_observed, IntegratorScheme};
use crate::lie::{MetricData, ReductiveSplit};
use crate::potentials::{check_k_invariance, Potential};
use crate::random::{chain_rng, standard_normal_vector};

/// `|ΔH|` above this is treated as an integrator blow-up and rejected.
pub const DELTA_H_GUARD: f64 = 50.0;
/// Random points used by the `K`-invariance gate.
pub const K_INVARIANCE_POINTS: usize = 20;
pub const K_INVARIANCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct HmcConfig {
    pub scheme: IntegratorScheme,
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub thinning: usize,
    /// Chain index; selects the RNG stream.
    pub chain: u64,
    /// Horizontal (`G/K`) mode.
    pub horizontal: Option<ReductiveSplit>,
    /// Retract `q` onto the group every `k`-th integrator step (0 = never).
    pub retraction_cadence: usize,
}

impl HmcConfig {
    pub fn new(scheme: IntegratorScheme, n_samples: usize, seed: u64) -> Self {
        Self {
            scheme,
            n_samples,
            burn_in: 0,
            seed,
            thinning: 1,
            chain: 0,
            horizontal: None,
            retraction_cadence: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws `v ~ N(0, g⁻¹)` (density `∝ e^{−½vᵀgv}`), optionally restricted to `p`.
#[derive(Clone, Debug)]
pub struct MomentumSampler {
    dim: usize,
    indices: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
}

impl MomentumSampler {
    pub fn new(metric: &MetricData, split: Option<&ReductiveSplit>) -> Result<Self> {
        let dim = metric.dim();
        let indices: Vec<usize> = match split {
            Some(s) => s.p_indices().to_vec(),
            None => (0..dim).collect(),
        };
        let g = metric.g();
        let block = DMatrix::from_fn(indices.len(), indices.len(), |a, b| g[(indices[a], indices[b])]);
        let chol = Cholesky::new(block).ok_or_else(|| Error::NotPositiveDefinite("momentum block".into()))?;
        Ok(Self { dim, indices, chol })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(rng, self.indices.len());
        // Lᵀ v = z gives Cov(v) = (L Lᵀ)⁻¹.
        let vp = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        let mut v = DVector::zeros(self.dim);
        for (&i, x) in self.indices.iter().zip(vp.iter()) {
            v[i] = *x;
        }
        v
    }
}

pub fn refresh_momentum<R: Rng + ?Sized>(
    rng: &mut R,
    metric: &MetricData,
    split: Option<&ReductiveSplit>,
) -> Result<DVector<f64>> {
    Ok(MomentumSampler::new(metric, split)?.draw(rng))
}

/// `k`-components of the covector `g v`: the conserved current of the right
/// `K` action.
pub fn noether_current(v: &DVector<f64>, split: &ReductiveSplit, metric: &MetricData) -> DVector<f64> {
    let gv = metric.g() * v;
    DVector::from_iterator(split.k_indices().len(), split.k_indices().iter().map(|&i| gv[i]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// Index among retained samples.
    pub index: usize,
    pub chain: u64,
    pub q: DMatrix<f64>,
    pub h_before: f64,
    pub h_after: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSummary {
    pub chain: u64,
    pub trajectories: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Rejections caused by non-finite states or `|ΔH|` above the guard.
    pub blowups: usize,
    /// `ΔH` of every post-burn-in trajectory with a finite energy.
    pub delta_h: Vec<f64>,
    pub mean_abs_delta_h: f64,
    /// Mean of `min(1, e^{−ΔH})` over `delta_h`.
    pub expected_acceptance: f64,
    pub max_vertical_leakage: f64,
    pub max_membership_defect: f64,
    pub ess: Vec<(String, EssEstimate)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainRecord {
    pub samples: Vec<SampleRecord>,
    pub summary: ChainSummary,
}

/// Runs a chain and collects every retained sample.
pub fn hmc_chain(
    system: &LieSystem,
    initial_q: &DMatrix<f64>,
    potential: &dyn Potential,
    config: &HmcConfig,
) -> Result<ChainRecord> {
    let mut samples = Vec::with_capacity(config.n_samples);
    let summary = hmc_chain_streaming(system, initial_q, potential, config, &mut |s| {
        samples.push(s.clone());
        Ok(())
    })?;
    Ok(ChainRecord { samples, summary })
}

/// Runs a chain, handing each retained sample to `sink` as it is produced.
pub fn hmc_chain_streaming(
    system: &LieSystem,
    initial_q: &DMatrix<f64>,
    potential: &dyn Potential,
    config: &HmcConfig,
    sink: &mut dyn FnMut(&SampleRecord) -> Result<()>,
) -> Result<ChainSummary> {
    config.validate()?;
    if !system.geodesic_kind().is_exact() {
        return Err(Error::GeodesicUnavailable(
            "HMC requires a closed-form geodesic flow".into(),
        ));
    }
    let alg = system.algebra();
    let group = alg.group();
    if !group.membership(initial_q).member {
        return Err(Error::Config("initial state is not in the group".into()));
    }
    let split = config.horizontal.as_ref();
    if let Some(split) = split {
        let mut gate_rng = chain_rng(config.seed, u64::MAX);
        check_k_invariance(potential, alg, split, &mut gate_rng, K_INVARIANCE_POINTS, K_INVARIANCE_TOL)?;
    }
    let momentum = MomentumSampler::new(alg.metric(), split)?;
    let mut rng = chain_rng(config.seed, config.chain);

    let total = config.burn_in + config.n_samples * config.thinning;
    let mut q = initial_q.clone();
    let mut retained = 0usize;
    let mut accepted = 0usize;
    let mut blowups = 0usize;
    let mut delta_h = Vec::with_capacity(config.n_samples * config.thinning);
    let mut max_leak: f64 = 0.0;
    let mut max_defect: f64 = 0.0;
    let mut traces = Vec::with_capacity(config.n_samples);
    let mut energies = Vec::with_capacity(config.n_samples);

    for t in 0..total {
        let v = momentum.draw(&mut rng);
        let start = PhaseState::new(q.clone(), v);
        let h_before = system.hamiltonian(potential, &start);
        let mut leak: f64 = 0.0;
        let outcome = integrate_observed(
            system,
            potential,
            &start,
            &config.scheme,
            config.retraction_cadence,
            &mut |s| {
                if let Some(split) = split {
                    leak = leak.max(split.vertical_norm(&s.v));
                }
            },
        );
        // Uniform draw is consumed on every trajectory so streams stay aligned.
        let u: f64 = rng.random();
        let post_burn = t >= config.burn_in;

        let (accept, h_after, proposal) = match outcome {
            Ok(end) => {
                let h_after = system.hamiltonian(potential, &end);
                let dh = h_after - h_before;
                if !dh.is_finite() || dh.abs() > DELTA_H_GUARD {
                    blowups += 1;
                    (false, h_after, None)
                } else {
                    if post_burn {
                        delta_h.push(dh);
                    }
                    (u < (-dh).exp(), h_after, Some(end))
                }
            }
            Err(Error::NonFinite(_)) | Err(Error::SingularDenominator) | Err(Error::RetractionRefused { .. }) => {
                blowups += 1;
                (false, f64::NAN, None)
            }
            Err(e) => return Err(e),
        };
        max_leak = max_leak.max(leak);
        if accept {
            let end = proposal.expect("accepted proposals exist");
            max_defect = max_defect.max(group.membership(&end.q).defect);
            q = end.q;
        }
        if post_burn {
            if accept {
                accepted += 1;
            }
            if (t - config.burn_in) % config.thinning == config.thinning - 1 {
                traces.push(q.trace());
                energies.push(potential.value(&q));
                sink(&SampleRecord {
                    index: retained,
                    chain: config.chain,
                    q: q.clone(),
                    h_before,
                    h_after,
                    accepted: accept,
                })?;
                retained += 1;
            }
        }
    }

    let trajectories = total - config.burn_in;
    let mean_abs = if delta_h.is_empty() {
        f64::NAN
    } else {
        delta_h.iter().map(|d| d.abs()).sum::<f64>() / delta_h.len() as f64
    };
    let expected = if delta_h.is_empty() {
        f64::NAN
    } else {
        delta_h.iter().map(|d| (-d).exp().min(1.0)).sum::<f64>() / delta_h.len() as f64
    };
    let mut ess_list = Vec::new();
    for (name, series) in [("trace", &traces), ("potential", &energies)] {
        if let Ok(e) = ess(series) {
            ess_list.push((name.to_string(), e));
        }
    }
    Ok(ChainSummary {
        chain: config.chain,
        trajectories,
        accepted,
        acceptance_rate: accepted as f64 / trajectories as f64,
        blowups,
        delta_h,
        mean_abs_delta_h: mean_abs,
        expected_acceptance: expected,
        max_vertical_leakage: max_leak,
        max_membership_defect: max_defect,
        ess: ess_list,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::SchemeKind;
    use crate::lie::{build_group, Algebra, GroupFamily};
    use crate::potentials::{ConstantPotential, GaugePotential};
    use crate::testutil::rng;

    fn so3() -> LieSystem {
        LieSystem::auto(Algebra::trace_form(build_group(GroupFamily::SpecialOrthogonal, 3).unwrap()).unwrap())
            .unwrap()
    }

    #[test]
    fn momentum_variance_matches_inverse_metric() {
        let sys = so3();
        let mut r = rng(1);
        let sampler = MomentumSampler::new(sys.algebra().metric(), None).unwrap();
        let n = 100_000;
        let mut sq = DVector::<f64>::zeros(3);
        for _ in 0..n {
            let v = sampler.draw(&mut r);
            sq += v.component_mul(&v);
        }
        // Var = 1/2; the sample variance has sd ≈ 0.5·√(2/n).
        let sd = 0.5 * (2.0 / n as f64).sqrt();
        for x in (sq / n as f64).iter() {
            assert!((x - 0.5).abs() < 3.0 * sd, "{x}");
        }
    }

    #[test]
    fn momentum_is_deterministic_and_horizontal() {
        let g = build_group(GroupFamily::SpecialOrthogonal, 3).unwrap();
        let alg = Algebra::trace_form(g).unwrap();
        let split = ReductiveSplit::new(&alg, &[0]).unwrap();
        let (mut a, mut b) = (rng(9), rng(9));
        for _ in 0..100 {
            let va = refresh_momentum(&mut a, alg.metric(), Some(&split)).unwrap();
            let vb = refresh_momentum(&mut b, alg.metric(), Some(&split)).unwrap();
            assert_eq!(va, vb);
            assert_eq!(va[0], 0.0);
            assert_eq!(noether_current(&va, &split, alg.metric()).amax(), 0.0);
        }
    }

    #[test]
    fn free_chain_always_accepts() {
        let sys = so3();
        let scheme = IntegratorScheme::new(SchemeKind::Leapfrog, 0.5, 4).unwrap();
        let cfg = HmcConfig::new(scheme, 500, 3);
        let rec = hmc_chain(&sys, &DMatrix::identity(3, 3), &ConstantPotential::default(), &cfg).unwrap();
        assert_eq!(rec.summary.acceptance_rate, 1.0);
        assert!(rec.summary.delta_h.iter().all(|d| d.abs() < 1e-12));
        assert_eq!(rec.samples.len(), 500);
    }

    #[test]
    fn deterministic_and_rejections_do_not_move() {
        let sys = so3();
        let u = DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64 * 0.7).cos());
        let pot = GaugePotential::new(u, 3.0).unwrap();
        let scheme = IntegratorScheme::new(SchemeKind::Leapfrog, 0.4, 5).unwrap();
        let mut cfg = HmcConfig::new(scheme, 300, 11);
        cfg.burn_in = 10;
        cfg.thinning = 2;
        let a = hmc_chain(&sys, &DMatrix::identity(3, 3), &pot, &cfg).unwrap();
        let b = hmc_chain(&sys, &DMatrix::identity(3, 3), &pot, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.summary.acceptance_rate < 1.0 && a.summary.acceptance_rate > 0.2);
        // With thinning 1 every rejection must leave q untouched.
        cfg.thinning = 1;
        let c = hmc_chain(&sys, &DMatrix::identity(3, 3), &pot, &cfg).unwrap();
        for w in c.samples.windows(2) {
            if !w[1].accepted {
                assert_eq!(w[0].q, w[1].q);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let sys = so3();
        let scheme = IntegratorScheme::new(SchemeKind::Leapfrog, 0.1, 2).unwrap();
        let mut cfg = HmcConfig::new(scheme, 10, 1);
        let far = DMatrix::identity(3, 3) * 2.0;
        assert!(hmc_chain(&sys, &far, &ConstantPotential::default(), &cfg).is_err());
        cfg.thinning = 0;
        assert!(hmc_chain(&sys, &DMatrix::identity(3, 3), &ConstantPotential::default(), &cfg).is_err());

        let numeric = LieSystem::numeric(sys.algebra().clone(), 10).unwrap();
        let cfg = HmcConfig::new(scheme, 10, 1);
        assert!(matches!(
            hmc_chain(&numeric, &DMatrix::identity(3, 3), &ConstantPotential::default(), &cfg),
            Err(Error::GeodesicUnavailable(_))
        ));
    }

    #[test]
    fn k_invariance_gate() {
        let sys = so3();
        let split = ReductiveSplit::new(sys.algebra(), &[0]).unwrap();
        let u = DMatrix::from_fn(3, 3, |i, j| (i + j) as f64);
        let scheme = IntegratorScheme::new(SchemeKind::Leapfrog, 0.1, 2).unwrap();
        let mut cfg = HmcConfig::new(scheme, 10, 1);
        cfg.horizontal = Some(split);
        let res = hmc_chain(&sys, &DMatrix::identity(3, 3), &GaugePotential::new(u, 1.0).unwrap(), &cfg);
        assert!(matches!(res, Err(Error::NotKInvariant { .. })));
    }

    #[test]
    fn blowups_are_rejected_not_fatal() {
        let sys = so3();
        let u = DMatrix::from_fn(3, 3, |i, j| ((i + 2 * j) as f64).sin());
        let pot = GaugePotential::new(u, 200.0).unwrap();
        let scheme = IntegratorScheme::new(SchemeKind::Leapfrog, 1.0, 10).unwrap();
        let cfg = HmcConfig::new(scheme, 50, 5);
        let rec = hmc_chain(&sys, &DMatrix::identity(3, 3), &pot, &cfg).unwrap();
        assert!(rec.summary.blowups > 0);
        assert!(rec.summary.acceptance_rate < 1.0);
    }
}
