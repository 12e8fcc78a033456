//! Sampling on naturally reductive quotients `G/K`.
//!
//! The shipped quotients are the sphere `S^{n−1} = SO(n)/SO(n−1)` and the
//! Stiefel manifolds `V_k(R^n) = SO(n)/SO(n−k)`. `K` acts on the right and
//! sits in the leading `(n−k) × (n−k)` block, so a point of the quotient is
//! represented by the trailing `k` columns of `q`, and `k = so(n−k)` is a
//! prefix of the generator basis.
//!
//! With a right-`K`-invariant potential and an initial velocity in `p`, the
//! unconstrained dynamics on `G` stays horizontal, so the ordinary sampler
//! with momentum drawn on `p` samples the quotient.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{LieSystem, PhaseState};
use crate::integrators::{integrate_observed, IntegratorScheme};
use crate::lie::{build_group, Algebra, GroupFamily, ReductiveSplit};
use crate::potentials::Potential;
use crate::random::{haar_rotation, standard_normal_vector};
use crate::sampler::{hmc_chain_streaming, noether_current, ChainSummary, HmcConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuotientKind {
    Sphere,
    Stiefel { k: usize },
}

#[derive(Clone, Debug)]
pub struct QuotientSpec {
    kind: QuotientKind,
    n: usize,
    columns: usize,
    system: LieSystem,
    split: ReductiveSplit,
}

impl QuotientSpec {
    pub fn new(kind: QuotientKind, n: usize) -> Result<Self> {
        let columns = match kind {
            QuotientKind::Sphere => 1,
            QuotientKind::Stiefel { k } => k,
        };
        if n < 2 || columns == 0 || columns >= n {
            return Err(Error::UnsupportedGroup(format!(
                "quotient needs n ≥ 2 and 1 ≤ k < n (n = {n}, k = {columns})"
            )));
        }
        let algebra = Algebra::trace_form(build_group(GroupFamily::SpecialOrthogonal, n)?)?;
        let m = n - columns;
        let k_indices: Vec<usize> = (0..m * (m - 1) / 2).collect();
        let split = ReductiveSplit::new(&algebra, &k_indices)?;
        let system = LieSystem::bi_invariant(algebra)?;
        Ok(Self {
            kind,
            n,
            columns,
            system,
            split,
        })
    }

    /// `S^{n−1}`.
    pub fn sphere(n: usize) -> Result<Self> {
        Self::new(QuotientKind::Sphere, n)
    }

    /// Orthonormal `k`-frames in `R^n`.
    pub fn stiefel(n: usize, k: usize) -> Result<Self> {
        Self::new(QuotientKind::Stiefel { k }, n)
    }

    pub fn kind(&self) -> QuotientKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of distinguished columns.
    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn system(&self) -> &LieSystem {
        &self.system
    }

    pub fn algebra(&self) -> &Algebra {
        self.system.algebra()
    }

    pub fn split(&self) -> &ReductiveSplit {
        &self.split
    }

    /// Trailing `k` columns of `q`.
    pub fn representative(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        q.columns(self.n - self.columns, self.columns).into_owned()
    }

    /// [`Self::representative`] flattened column-major.
    pub fn representative_flat(&self, q: &DMatrix<f64>) -> Vec<f64> {
        self.representative(q).as_slice().to_vec()
    }

    /// Places an `(n−k) × (n−k)` rotation in the leading block of `I_n`.
    pub fn embed_k(&self, block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.n - self.columns;
        if block.nrows() != m || block.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: block.nrows(),
            });
        }
        let mut k = DMatrix::identity(self.n, self.n);
        k.view_mut((0, 0), (m, m)).copy_from(block);
        Ok(k)
    }

    /// Haar-random element of the embedded `K`.
    pub fn random_k<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let m = self.n - self.columns;
        let block = if m == 1 {
            DMatrix::identity(1, 1)
        } else {
            haar_rotation(rng, m)
        };
        self.embed_k(&block).expect("block has the right size")
    }

    /// Largest `|repr(q k) − repr(q)|` over random pairs.
    pub fn representative_defect<R: Rng + ?Sized>(&self, rng: &mut R, trials: usize) -> f64 {
        (0..trials)
            .map(|_| {
                let q = haar_rotation(rng, self.n);
                let k = self.random_k(rng);
                (self.representative(&(&q * k)) - self.representative(&q)).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|⟨[u,v]_p, w⟩ − ⟨u, [v,w]_p⟩|` over random `u, v, w ∈ p`.
    pub fn natural_reductivity_defect<R: Rng + ?Sized>(&self, rng: &mut R, trials: usize) -> Result<f64> {
        let alg = self.algebra();
        let d = alg.dim();
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let u = self.split.project_p(&standard_normal_vector(rng, d));
            let v = self.split.project_p(&standard_normal_vector(rng, d));
            let w = self.split.project_p(&standard_normal_vector(rng, d));
            let uv = self.split.project_p(&alg.ad(&u, &v)?);
            let vw = self.split.project_p(&alg.ad(&v, &w)?);
            worst = worst.max((alg.inner(&uv, &w) - alg.inner(&u, &vw)).abs());
        }
        Ok(worst)
    }
}

/// `P_p v`.
pub fn horizontal_project(v: &DVector<f64>, split: &ReductiveSplit) -> DVector<f64> {
    split.project_p(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub states: usize,
    /// Largest `‖P_k v‖` along the trajectory.
    pub max_vertical_leakage: f64,
    /// Largest deviation of the geodesic drift from `q e^{v t}`.
    pub max_geodesic_deviation: f64,
    /// Largest `‖J(v)‖` of the Noether current.
    pub max_noether_current: f64,
}

/// Integrates `state` and returns every post-step state, starting with
/// `state` itself.
pub fn trajectory(
    system: &LieSystem,
    potential: &dyn Potential,
    state: &PhaseState,
    scheme: &IntegratorScheme,
) -> Result<Vec<PhaseState>> {
    let mut out = vec![state.clone()];
    integrate_observed(system, potential, state, scheme, 0, &mut |s| out.push(s.clone()))?;
    Ok(out)
}

/// Checks a trajectory against the constrained equations: horizontal
/// velocity throughout, and a geodesic drift over `probe_time` that agrees
/// with the one-parameter subgroup `q e^{v t}` for `v ∈ p`.
pub fn constrained_system_check(
    system: &LieSystem,
    states: &[PhaseState],
    split: &ReductiveSplit,
    probe_time: f64,
) -> Result<ConstraintReport> {
    let alg = system.algebra();
    let mut report = ConstraintReport {
        states: states.len(),
        max_vertical_leakage: 0.0,
        max_geodesic_deviation: 0.0,
        max_noether_current: 0.0,
    };
    for s in states {
        report.max_vertical_leakage = report.max_vertical_leakage.max(split.vertical_norm(&s.v));
        report.max_noether_current = report
            .max_noether_current
            .max(noether_current(&s.v, split, alg.metric()).amax());
        let horizontal = PhaseState::new(s.q.clone(), split.project_p(&s.v));
        let drift = system.geodesic_flow(&horizontal, probe_time)?;
        let subgroup = &s.q * system.exp(&(alg.to_matrix(&horizontal.v) * probe_time))?;
        let dev = (drift.q - subgroup).amax().max((drift.v - &horizontal.v).amax());
        report.max_geodesic_deviation = report.max_geodesic_deviation.max(dev);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuotientChain {
    /// Representatives of the retained samples, in order.
    pub representatives: Vec<DMatrix<f64>>,
    pub summary: ChainSummary,
}

/// Runs the sampler in horizontal mode from the identity and keeps the
/// representative of each retained sample.
pub fn sample_quotient(quotient: &QuotientSpec, potential: &dyn Potential, config: &HmcConfig) -> Result<QuotientChain> {
    let mut cfg = config.clone();
    cfg.horizontal = Some(quotient.split().clone());
    let mut representatives = Vec::with_capacity(cfg.n_samples);
    let start = DMatrix::identity(quotient.n(), quotient.n());
    let summary = hmc_chain_streaming(quotient.system(), &start, potential, &cfg, &mut |s| {
        representatives.push(quotient.representative(&s.q));
        Ok(())
    })?;
    Ok(QuotientChain {
        representatives,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::SchemeKind;
    use crate::potentials::{vmf_sphere_lift, ConstantPotential, VmfLift};
    use crate::sampler::refresh_momentum;
    use crate::testutil::rng;

    #[test]
    fn construction() {
        let s2 = QuotientSpec::sphere(3).unwrap();
        assert_eq!(s2.split().k_indices(), &[0]);
        assert_eq!(s2.split().p_indices(), &[1, 2]);
        let v = QuotientSpec::stiefel(4, 2).unwrap();
        assert_eq!(v.split().k_indices(), &[0]);
        assert_eq!(QuotientSpec::stiefel(5, 2).unwrap().split().k_indices(), &[0, 1, 2]);
        assert!(QuotientSpec::stiefel(3, 3).is_err());
        assert!(QuotientSpec::stiefel(3, 0).is_err());
        assert!(QuotientSpec::sphere(1).is_err());
        // S¹ has trivial K.
        assert!(QuotientSpec::sphere(2).unwrap().split().k_indices().is_empty());
    }

    #[test]
    fn representatives_are_k_invariant_and_orthonormal() {
        let mut r = rng(1);
        for q in [QuotientSpec::sphere(3).unwrap(), QuotientSpec::stiefel(4, 2).unwrap(), QuotientSpec::stiefel(5, 2).unwrap()] {
            assert!(q.representative_defect(&mut r, 50) < 1e-12);
            let g = haar_rotation(&mut r, q.n());
            let x = q.representative(&g);
            assert!((x.transpose() * &x - DMatrix::identity(q.columns(), q.columns())).amax() < 1e-12);
            assert_eq!(q.representative_flat(&g).len(), q.n() * q.columns());
        }
    }

    #[test]
    fn natural_reductivity() {
        let mut r = rng(2);
        for q in [QuotientSpec::sphere(3).unwrap(), QuotientSpec::sphere(4).unwrap(), QuotientSpec::stiefel(4, 2).unwrap()] {
            assert!(q.natural_reductivity_defect(&mut r, 50).unwrap() < 1e-10);
        }
    }

    #[test]
    fn projection() {
        let q = QuotientSpec::sphere(4).unwrap();
        let mut r = rng(3);
        let v = standard_normal_vector(&mut r, 6);
        let p = horizontal_project(&v, q.split());
        assert_eq!(horizontal_project(&p, q.split()), p);
        assert_eq!(q.split().project_k(&p).amax(), 0.0);
        assert_eq!(&p + q.split().project_k(&v), v);
        let k = q.split().project_k(&v);
        assert_eq!(horizontal_project(&k, q.split()).amax(), 0.0);
    }

    #[test]
    fn horizontal_trajectories_stay_horizontal() {
        let q = QuotientSpec::sphere(3).unwrap();
        let mu = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let pot = vmf_sphere_lift(3, &mu, 2.0).unwrap();
        let mut r = rng(4);
        for kind in [SchemeKind::Leapfrog, SchemeKind::omelyan(), SchemeKind::ForceGradient] {
            let scheme = IntegratorScheme::new(kind, 0.1, 30).unwrap();
            let v = refresh_momentum(&mut r, q.algebra().metric(), Some(q.split())).unwrap();
            let start = PhaseState::new(haar_rotation(&mut r, 3), v);
            let traj = trajectory(q.system(), &pot, &start, &scheme).unwrap();
            assert_eq!(traj.len(), 31);
            let rep = constrained_system_check(q.system(), &traj, q.split(), 0.5).unwrap();
            assert!(rep.max_vertical_leakage <= 1e-10, "{kind:?} {rep:?}");
            assert!(rep.max_noether_current <= 1e-10);
            assert!(rep.max_geodesic_deviation <= 1e-12);
        }
    }

    #[test]
    fn stiefel_horizontality() {
        let q = QuotientSpec::stiefel(4, 2).unwrap();
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, -0.3, 0.0, 0.8, 0.2, 0.1]);
        let pot = VmfLift::stiefel(4, f).unwrap();
        let mut r = rng(5);
        let v = refresh_momentum(&mut r, q.algebra().metric(), Some(q.split())).unwrap();
        let start = PhaseState::new(haar_rotation(&mut r, 4), v);
        let scheme = IntegratorScheme::new(SchemeKind::ForceGradient, 0.1, 20).unwrap();
        let traj = trajectory(q.system(), &pot, &start, &scheme).unwrap();
        let rep = constrained_system_check(q.system(), &traj, q.split(), 0.3).unwrap();
        assert!(rep.max_vertical_leakage <= 1e-10, "{rep:?}");
    }

    #[test]
    fn quotient_chain_uniform_sphere() {
        let q = QuotientSpec::sphere(3).unwrap();
        let scheme = IntegratorScheme::new(SchemeKind::Leapfrog, 0.3, 5).unwrap();
        let cfg = HmcConfig::new(scheme, 4000, 7);
        let chain = sample_quotient(&q, &ConstantPotential::default(), &cfg).unwrap();
        assert_eq!(chain.representatives.len(), 4000);
        assert_eq!(chain.summary.acceptance_rate, 1.0);
        assert!(chain.summary.max_vertical_leakage <= 1e-12);
        for x in &chain.representatives {
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
        for c in 0..3 {
            let coord: Vec<f64> = chain.representatives.iter().map(|x| x[(c, 0)]).collect();
            let m = crate::diagnostics::mean_estimate(&coord).unwrap();
            assert!(m.z_score(0.0) < 4.0, "{m:?}");
        }
    }

    #[test]
    fn quotient_chain_rejects_non_invariant_potential() {
        let q = QuotientSpec::sphere(3).unwrap();
        let u = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let pot = crate::potentials::GaugePotential::new(u, 1.0).unwrap();
        let scheme = IntegratorScheme::new(SchemeKind::Leapfrog, 0.3, 5).unwrap();
        let cfg = HmcConfig::new(scheme, 10, 7);
        assert!(matches!(sample_quotient(&q, &pot, &cfg), Err(Error::NotKInvariant { .. })));
    }
}
