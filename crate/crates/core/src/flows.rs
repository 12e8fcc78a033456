//! Exact sub-flows of `H = V + ½⟨v, v⟩` on the left-trivialized phase space
//! `G × g`, and a numeric Euler–Arnold integrator used as an oracle.
//!
//! States carry the group element `q` as a matrix and the body-frame
//! velocity `v` as coefficients in the generator basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::expmap::{mexp, ExpMethod};
use crate::lie::{Algebra, GroupFamily, MetricFlavor, ReductiveSplit};
use crate::potentials::{left_derivative, Potential};
use crate::random::{chain_rng, standard_normal_vector};

/// A point `(q, v)` of `G × g`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub q: DMatrix<f64>,
    pub v: DVector<f64>,
}

impl PhaseState {
    pub fn new(q: DMatrix<f64>, v: DVector<f64>) -> Self {
        Self { q, v }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    /// Largest entrywise difference over both components.
    pub fn distance(&self, other: &PhaseState) -> f64 {
        (&self.q - &other.q).amax().max((&self.v - &other.v).amax())
    }

    pub fn flip_momentum(mut self) -> Self {
        self.v.neg_mut();
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeodesicKind {
    /// `ad* = −ad`; geodesics are one-parameter subgroups.
    BiInvariant,
    /// Trace-form metric with `k = so(n)` and symmetric `p`.
    ReductiveMatrix,
    /// Runge–Kutta Euler–Arnold solve; oracle only.
    NumericEulerArnold { substeps: usize },
}

impl GeodesicKind {
    pub fn is_exact(self) -> bool {
        !matches!(self, GeodesicKind::NumericEulerArnold { .. })
    }
}

const IDENTITY_TOL: f64 = 1e-10;
const IDENTITY_CHECKS: usize = 20;

/// An algebra with a verified geodesic solver and exponential method.
#[derive(Clone, Debug)]
pub struct LieSystem {
    algebra: Algebra,
    geodesic: GeodesicKind,
    split: Option<ReductiveSplit>,
    exp_method: ExpMethod,
}

impl LieSystem {
    /// Requires `ad*_u w = −ad_u w`, checked on random pairs.
    pub fn bi_invariant(algebra: Algebra) -> Result<Self> {
        let mut rng = chain_rng(0x5eed, 0);
        let d = algebra.dim();
        for _ in 0..IDENTITY_CHECKS {
            let u = standard_normal_vector(&mut rng, d);
            let w = standard_normal_vector(&mut rng, d);
            let lhs = algebra.coadjoint(&u, &w);
            let rhs = -algebra.bracket(&u, &w);
            let scale = 1.0 + rhs.amax();
            if (lhs - rhs).amax() > IDENTITY_TOL * scale {
                return Err(Error::GeodesicUnavailable(
                    "metric is not bi-invariant (ad* ≠ −ad)".into(),
                ));
            }
        }
        Ok(Self {
            algebra,
            geodesic: GeodesicKind::BiInvariant,
            split: None,
            exp_method: ExpMethod::ScalingSquaring,
        })
    }

    /// Closed-form flow for the trace-form metric on a matrix group with the
    /// symmetric / antisymmetric split. Verifies `ad*_S A = [S, A]`,
    /// `ad*_A = −ad_A` and `ad*_S S = 0` on basis elements.
    pub fn reductive_matrix(algebra: Algebra, split: ReductiveSplit) -> Result<Self> {
        if algebra.metric().flavor() != MetricFlavor::TraceForm {
            return Err(Error::GeodesicUnavailable(
                "closed-form reductive flow needs the trace-form metric".into(),
            ));
        }
        check_len(algebra.dim(), split.dim())?;
        let d = algebra.dim();
        let basis = |i: usize| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            e
        };
        let fail = |what: &str| Err(Error::GeodesicUnavailable(format!("split fails {what}")));
        for &a in split.k_indices() {
            let ka = basis(a);
            for j in 0..d {
                let w = basis(j);
                if (algebra.coadjoint(&ka, &w) + algebra.bracket(&ka, &w)).amax() > IDENTITY_TOL {
                    return fail("ad_k-invariance");
                }
            }
            for &s in split.p_indices() {
                let ps = basis(s);
                if (algebra.coadjoint(&ps, &ka) - algebra.bracket(&ps, &ka)).amax() > IDENTITY_TOL {
                    return fail("ad*_S A = [S, A]");
                }
            }
        }
        let mut rng = chain_rng(0x5eed, 1);
        for _ in 0..IDENTITY_CHECKS {
            let vp = split.project_p(&standard_normal_vector(&mut rng, d));
            if algebra.coadjoint(&vp, &vp).amax() > IDENTITY_TOL * (1.0 + vp.norm_squared()) {
                return fail("ad*_v v = 0 on p");
            }
        }
        Ok(Self {
            algebra,
            geodesic: GeodesicKind::ReductiveMatrix,
            split: Some(split),
            exp_method: ExpMethod::ScalingSquaring,
        })
    }

    pub fn numeric(algebra: Algebra, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::GeodesicUnavailable("numeric flow needs at least one substep".into()));
        }
        Ok(Self {
            algebra,
            geodesic: GeodesicKind::NumericEulerArnold { substeps },
            split: None,
            exp_method: ExpMethod::ScalingSquaring,
        })
    }

    /// Picks the exact flow available for this algebra and metric.
    pub fn auto(algebra: Algebra) -> Result<Self> {
        match algebra.family() {
            GroupFamily::SpecialOrthogonal => Self::bi_invariant(algebra),
            _ => {
                let split = ReductiveSplit::matrix_groups(&algebra)?;
                Self::reductive_matrix(algebra, split)
            }
        }
    }

    /// Cayley / Padé exponentials are only offered for `SO(n)`, where they map
    /// into the group exactly.
    pub fn with_exp_method(mut self, method: ExpMethod) -> Result<Self> {
        if method != ExpMethod::ScalingSquaring && self.algebra.family() != GroupFamily::SpecialOrthogonal {
            return Err(Error::GeodesicUnavailable(format!(
                "{method:?} exponential only supported on SO(n)"
            )));
        }
        self.exp_method = method;
        Ok(self)
    }

    pub fn algebra(&self) -> &Algebra {
        &self.algebra
    }

    pub fn geodesic_kind(&self) -> GeodesicKind {
        self.geodesic
    }

    pub fn matrix_split(&self) -> Option<&ReductiveSplit> {
        self.split.as_ref()
    }

    pub fn exp_method(&self) -> ExpMethod {
        self.exp_method
    }

    pub fn exp(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        mexp(z, self.exp_method)
    }

    pub fn kinetic_energy(&self, v: &DVector<f64>) -> f64 {
        self.algebra.metric().kinetic_energy(v)
    }

    pub fn hamiltonian(&self, potential: &dyn Potential, state: &PhaseState) -> f64 {
        potential.value(&state.q) + self.kinetic_energy(&state.v)
    }

    /// Exact kinetic flow for time `t`.
    pub fn geodesic_flow(&self, state: &PhaseState, t: f64) -> Result<PhaseState> {
        match self.geodesic {
            GeodesicKind::BiInvariant => geodesic_flow_biinvariant(self, state, t),
            GeodesicKind::ReductiveMatrix => {
                let split = self.split.as_ref().expect("reductive system carries its split");
                geodesic_flow_reductive_matrix(self, state, t, split)
            }
            GeodesicKind::NumericEulerArnold { substeps } => {
                geodesic_flow_numeric(&self.algebra, state, t, substeps).map(|(s, _)| s)
            }
        }
    }
}

/// `(q, v) ↦ (q, v − t·gʲᵏ e_j(V)(q) ξ_k)`.
pub fn potential_flow(
    system: &LieSystem,
    state: &PhaseState,
    t: f64,
    potential: &dyn Potential,
) -> Result<PhaseState> {
    if t == 0.0 {
        return Ok(state.clone());
    }
    let force = left_derivative(potential, system.algebra(), &state.q);
    if force.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{} force", potential.label())));
    }
    Ok(PhaseState {
        q: state.q.clone(),
        v: &state.v - force * t,
    })
}

/// `(q, v) ↦ (q e^{tV}, v)`.
pub fn geodesic_flow_biinvariant(system: &LieSystem, state: &PhaseState, t: f64) -> Result<PhaseState> {
    if t == 0.0 {
        return Ok(state.clone());
    }
    let step = system.exp(&(system.algebra().to_matrix(&state.v) * t))?;
    Ok(PhaseState {
        q: &state.q * step,
        v: state.v.clone(),
    })
}

/// Closed-form geodesic of the trace-form metric:
/// `q(t) = q e^{(v_p − v_k)t} e^{2 v_k t}`, `v(t) = v_k + e^{−2v_k t} v_p e^{2v_k t}`.
pub fn geodesic_flow_reductive_matrix(
    system: &LieSystem,
    state: &PhaseState,
    t: f64,
    split: &ReductiveSplit,
) -> Result<PhaseState> {
    if t == 0.0 {
        return Ok(state.clone());
    }
    let alg = system.algebra();
    let vk = split.project_k(&state.v);
    let vp = split.project_p(&state.v);
    let (mk, mp) = (alg.to_matrix(&vk), alg.to_matrix(&vp));
    let rot = system.exp(&(&mk * (2.0 * t)))?;
    let rot_inv = system.exp(&(&mk * (-2.0 * t)))?;
    let first = system.exp(&((&mp - &mk) * t))?;
    let q = &state.q * first * &rot;
    let vp_t = alg.coefficients(&(rot_inv * mp * rot));
    Ok(PhaseState {
        q,
        v: vk + split.project_p(&vp_t),
    })
}

/// `ad*_v v`, the Euler–Arnold velocity field.
pub fn euler_arnold_rhs(algebra: &Algebra, v: &DVector<f64>) -> Result<DVector<f64>> {
    algebra.ad_star(v, v)
}

/// Diagnostics from [`geodesic_flow_numeric`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericFlowReport {
    /// Largest `|T(v_i) − T(v_0)|` over the substeps.
    pub energy_drift: f64,
}

/// Classical RK4 on `v̇ = ad*_v v`; reconstruction by `q ← q e^{h V_mid}` per
/// substep, with `V_mid` the cubic Hermite midpoint of the RK step.
pub fn geodesic_flow_numeric(
    algebra: &Algebra,
    state: &PhaseState,
    t: f64,
    substeps: usize,
) -> Result<(PhaseState, NumericFlowReport)> {
    if substeps == 0 {
        return Err(Error::GeodesicUnavailable("substeps must be ≥ 1".into()));
    }
    check_len(algebra.dim(), state.v.len())?;
    let h = t / substeps as f64;
    let rhs = |v: &DVector<f64>| algebra.coadjoint(v, v);
    let t0 = algebra.metric().kinetic_energy(&state.v);
    let mut drift: f64 = 0.0;
    let mut q = state.q.clone();
    let mut v = state.v.clone();
    for _ in 0..substeps {
        let k1 = rhs(&v);
        let k2 = rhs(&(&v + &k1 * (0.5 * h)));
        let k3 = rhs(&(&v + &k2 * (0.5 * h)));
        let k4 = rhs(&(&v + &k3 * h));
        let v_next = &v + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
        let f_next = rhs(&v_next);
        let v_mid = (&v + &v_next) * 0.5 + (&k1 - &f_next) * (h / 8.0);
        q *= mexp(&(algebra.to_matrix(&v_mid) * h), ExpMethod::ScalingSquaring)?;
        v = v_next;
        if v.iter().chain(q.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("numeric Euler–Arnold flow".into()));
        }
        drift = drift.max((algebra.metric().kinetic_energy(&v) - t0).abs());
    }
    Ok((PhaseState { q, v }, NumericFlowReport { energy_drift: drift }))
}
