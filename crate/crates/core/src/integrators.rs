//! Palindromic compositions of the exact potential and kinetic flows.
//!
//! A scheme is a list of [`Stage`]s applied in order to the state; every
//! shipped scheme is symmetric, hence reversible under momentum flip, and
//! each stage is an exact Hamiltonian flow, hence volume preserving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expmap::retract;
use crate::flows::{potential_flow, LieSystem, PhaseState};
use crate::potentials::{force_gradient_field, left_derivative, Potential};

/// Minimum-norm parameter of the two-stage Omelyan scheme.
pub const OMELYAN_LAMBDA: f64 = 0.193_183_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SchemeKind {
    Leapfrog,
    Omelyan { lambda: f64 },
    ForceGradient,
}

impl SchemeKind {
    pub fn omelyan() -> Self {
        SchemeKind::Omelyan { lambda: OMELYAN_LAMBDA }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Leapfrog => "leapfrog",
            SchemeKind::Omelyan { .. } => "omelyan",
            SchemeKind::ForceGradient => "force_gradient",
        }
    }

    /// Stage sequence, in application order. Coefficients multiply `h`
    /// (and `h³` for the force-gradient correction).
    pub fn stages(&self) -> Vec<Stage> {
        match *self {
            SchemeKind::Leapfrog => vec![Stage::Kick(0.5), Stage::Drift(1.0), Stage::Kick(0.5)],
            SchemeKind::Omelyan { lambda } => vec![
                Stage::Drift(lambda),
                Stage::Kick(0.5),
                Stage::Drift(1.0 - 2.0 * lambda),
                Stage::Kick(0.5),
                Stage::Drift(lambda),
            ],
            SchemeKind::ForceGradient => vec![
                Stage::Kick(1.0 / 6.0),
                Stage::Drift(0.5),
                Stage::ForceGradientKick {
                    kick: 2.0 / 3.0,
                    gradient: -1.0 / 72.0,
                },
                Stage::Drift(0.5),
                Stage::Kick(1.0 / 6.0),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stage {
    /// Potential flow for `c·h`.
    Kick(f64),
    /// Kinetic (geodesic) flow for `c·h`.
    Drift(f64),
    /// Combined flow of `kick·h·X_V + gradient·h³·X_C` with
    /// `C = {V, {V, T}}`. Both fields are vertical and depend on `q` only, so
    /// they commute and the flow is a single velocity shift. The fourth-order
    /// scheme needs `gradient = −1/72`: `X_C` points down the gradient of `C`
    /// while the correction must push up it.
    ForceGradientKick { kick: f64, gradient: f64 },
}

pub fn is_palindromic(stages: &[Stage]) -> bool {
    stages.iter().eq(stages.iter().rev())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorScheme {
    pub kind: SchemeKind,
    pub step_size: f64,
    pub n_steps: usize,
}

impl IntegratorScheme {
    pub fn new(kind: SchemeKind, step_size: f64, n_steps: usize) -> Result<Self> {
        let s = Self {
            kind,
            step_size,
            n_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step_size)));
        }
        if let SchemeKind::Omelyan { lambda } = self.kind {
            if !(lambda > 0.0 && lambda < 0.5) {
                return Err(Error::Config(format!("Omelyan lambda must lie in (0, 1/2), got {lambda}")));
            }
        }
        Ok(())
    }

    pub fn trajectory_time(&self) -> f64 {
        self.step_size * self.n_steps as f64
    }
}

fn check_finite(state: PhaseState, what: &str) -> Result<PhaseState> {
    if state.is_finite() {
        Ok(state)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn apply_stage(
    system: &LieSystem,
    potential: &dyn Potential,
    state: &PhaseState,
    stage: Stage,
    h: f64,
) -> Result<PhaseState> {
    match stage {
        Stage::Kick(c) => potential_flow(system, state, c * h, potential),
        Stage::Drift(c) => check_finite(system.geodesic_flow(state, c * h)?, "geodesic drift"),
        Stage::ForceGradientKick { kick, gradient } => {
            let alg = system.algebra();
            let force = left_derivative(potential, alg, &state.q);
            let correction = force_gradient_field(potential, alg, &state.q);
            let v = &state.v - force * (kick * h) + correction * (gradient * h * h * h);
            check_finite(PhaseState::new(state.q.clone(), v), "force-gradient kick")
        }
    }
}

/// One step of `kind` with step size `h`.
pub fn step(
    system: &LieSystem,
    potential: &dyn Potential,
    state: &PhaseState,
    kind: SchemeKind,
    h: f64,
) -> Result<PhaseState> {
    let mut s = state.clone();
    for stage in kind.stages() {
        s = apply_stage(system, potential, &s, stage, h)?;
    }
    Ok(s)
}

/// Half kick, full geodesic drift, half kick.
pub fn leapfrog_step(system: &LieSystem, potential: &dyn Potential, state: &PhaseState, h: f64) -> Result<PhaseState> {
    step(system, potential, state, SchemeKind::Leapfrog, h)
}

/// `λh` drift, `h/2` kick, `(1 − 2λ)h` drift, `h/2` kick, `λh` drift.
pub fn omelyan_step(
    system: &LieSystem,
    potential: &dyn Potential,
    state: &PhaseState,
    h: f64,
    lambda: f64,
) -> Result<PhaseState> {
    step(system, potential, state, SchemeKind::Omelyan { lambda }, h)
}

/// `h/6` kick, `h/2` drift, force-gradient kick, `h/2` drift, `h/6` kick.
pub fn force_gradient_step(
    system: &LieSystem,
    potential: &dyn Potential,
    state: &PhaseState,
    h: f64,
) -> Result<PhaseState> {
    step(system, potential, state, SchemeKind::ForceGradient, h)
}

/// Runs `scheme.n_steps` steps. `observer` sees every post-step state; a
/// nonzero `retraction_cadence` projects `q` back onto the group after every
/// `k`-th step.
pub fn integrate_observed(
    system: &LieSystem,
    potential: &dyn Potential,
    state: &PhaseState,
    scheme: &IntegratorScheme,
    retraction_cadence: usize,
    observer: &mut dyn FnMut(&PhaseState),
) -> Result<PhaseState> {
    let mut s = state.clone();
    for i in 0..scheme.n_steps {
        s = step(system, potential, &s, scheme.kind, scheme.step_size)?;
        if retraction_cadence > 0 && (i + 1) % retraction_cadence == 0 {
            s.q = retract(system.algebra().group(), &s.q)?;
        }
        observer(&s);
    }
    Ok(s)
}

pub fn integrate(
    system: &LieSystem,
    potential: &dyn Potential,
    state: &PhaseState,
    scheme: &IntegratorScheme,
) -> Result<PhaseState> {
    integrate_observed(system, potential, state, scheme, 0, &mut |_| {})
}

/// Integrates forward, flips `v`, integrates again, flips back; returns the
/// largest entrywise distance to the starting state.
pub fn reverse_check(
    system: &LieSystem,
    potential: &dyn Potential,
    state: &PhaseState,
    scheme: &IntegratorScheme,
) -> Result<f64> {
    let forward = integrate(system, potential, state, scheme)?;
    let back = integrate(system, potential, &forward.flip_momentum(), scheme)?.flip_momentum();
    Ok(back.distance(state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{build_group, Algebra, GroupFamily};
    use crate::potentials::{ConstantPotential, GaugePotential, QuadraticTracePotential};
    use crate::random::haar_rotation;
    use crate::testutil::{random_vector, rng};
    use nalgebra::DMatrix;

    fn so3() -> LieSystem {
        LieSystem::auto(Algebra::trace_form(build_group(GroupFamily::SpecialOrthogonal, 3).unwrap()).unwrap())
            .unwrap()
    }

    fn gauge() -> GaugePotential {
        let u = DMatrix::from_row_slice(3, 3, &[0.9, -0.4, 0.3, 0.2, 1.1, -0.7, -0.5, 0.6, 0.8]);
        GaugePotential::new(u, 2.0).unwrap()
    }

    fn all_kinds() -> [SchemeKind; 3] {
        [SchemeKind::Leapfrog, SchemeKind::omelyan(), SchemeKind::ForceGradient]
    }

    #[test]
    fn schemes_are_palindromic() {
        for k in all_kinds() {
            assert!(is_palindromic(&k.stages()), "{k:?}");
            let drift: f64 = k
                .stages()
                .iter()
                .map(|s| if let Stage::Drift(c) = s { *c } else { 0.0 })
                .sum();
            assert!((drift - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn validation() {
        assert!(IntegratorScheme::new(SchemeKind::Leapfrog, 0.0, 3).is_err());
        assert!(IntegratorScheme::new(SchemeKind::Omelyan { lambda: 0.5 }, 0.1, 3).is_err());
        assert!(IntegratorScheme::new(SchemeKind::omelyan(), 0.1, 3).is_ok());
    }

    #[test]
    fn free_motion_is_pure_geodesic() {
        let sys = so3();
        let mut r = rng(1);
        let s = PhaseState::new(haar_rotation(&mut r, 3), random_vector(&mut r, 3));
        let zero = ConstantPotential::default();
        let expected = sys.geodesic_flow(&s, 0.3).unwrap();
        for k in all_kinds() {
            let out = step(&sys, &zero, &s, k, 0.3).unwrap();
            assert!(out.distance(&expected) < 1e-14, "{k:?}");
        }
        assert_eq!(leapfrog_step(&sys, &gauge(), &s, 0.0).unwrap().distance(&s), 0.0);
    }

    fn energy_error(sys: &LieSystem, kind: SchemeKind, h: f64, total: f64) -> f64 {
        let p = gauge();
        let mut r = rng(77);
        let mut acc = 0.0;
        let trials = 20;
        for _ in 0..trials {
            let s = PhaseState::new(haar_rotation(&mut r, 3), random_vector(&mut r, 3) * 0.7);
            let scheme = IntegratorScheme::new(kind, h, (total / h).round() as usize).unwrap();
            let out = integrate(sys, &p, &s, &scheme).unwrap();
            acc += (sys.hamiltonian(&p, &out) - sys.hamiltonian(&p, &s)).abs();
        }
        acc / trials as f64
    }

    #[test]
    fn leapfrog_and_omelyan_are_second_order() {
        let sys = so3();
        for k in [SchemeKind::Leapfrog, SchemeKind::omelyan()] {
            let ratio = energy_error(&sys, k, 0.02, 1.0) / energy_error(&sys, k, 0.01, 1.0);
            assert!((ratio - 4.0).abs() <= 0.8, "{k:?}: {ratio}");
        }
    }

    #[test]
    fn omelyan_beats_leapfrog_at_equal_step() {
        let sys = so3();
        let lf = energy_error(&sys, SchemeKind::Leapfrog, 0.05, 1.0);
        let om = energy_error(&sys, SchemeKind::omelyan(), 0.05, 1.0);
        assert!(om < lf, "omelyan {om} leapfrog {lf}");
    }

    #[test]
    fn force_gradient_is_fourth_order() {
        let sys = so3();
        let ratio = energy_error(&sys, SchemeKind::ForceGradient, 0.1, 1.0)
            / energy_error(&sys, SchemeKind::ForceGradient, 0.05, 1.0);
        assert!((ratio - 16.0).abs() <= 4.8, "{ratio}");
    }

    #[test]
    fn force_gradient_kick_matches_independent_derivatives() {
        // −2 gʲᵏ gˡˢ e_l(V) e_j e_s(V) against mixed differences of V itself.
        let sys = so3();
        let alg = sys.algebra();
        let mut r = rng(3);
        let u = DMatrix::from_column_slice(3, 3, random_vector(&mut r, 9).as_slice());
        let p = QuadraticTracePotential::new(u, 0.9).unwrap();
        let q = haar_rotation(&mut r, 3);
        let ex = |j: usize, a: f64| {
            crate::expmap::mexp(&(alg.group().generator(j) * a), crate::expmap::ExpMethod::ScalingSquaring).unwrap()
        };
        let eps = 1e-4;
        let d = alg.dim();
        let mut first = nalgebra::DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for j in 0..d {
            first[j] = (p.value(&(&q * ex(j, eps))) - p.value(&(&q * ex(j, -eps)))) / (2.0 * eps);
            for s in 0..d {
                // e_j e_s V = ∂_a ∂_b V(q e^{aξ_j} e^{bξ_s})
                let f = |a: f64, b: f64| p.value(&(&q * ex(j, a) * ex(s, b)));
                second[(j, s)] = (f(eps, eps) - f(eps, -eps) - f(-eps, eps) + f(-eps, -eps)) / (4.0 * eps * eps);
            }
        }
        let gi = alg.metric().g_inv();
        let oracle = gi * (&second * (gi * &first)) * -2.0;
        let got = force_gradient_field(&p, alg, &q);
        assert!((&got - &oracle).amax() < 1e-5 * (1.0 + oracle.amax()), "{got} {oracle}");
    }

    #[test]
    fn reversibility() {
        let sys = so3();
        let mut r = rng(4);
        let s = PhaseState::new(haar_rotation(&mut r, 3), random_vector(&mut r, 3));
        for k in all_kinds() {
            let scheme = IntegratorScheme::new(k, 0.05, 50).unwrap();
            assert!(reverse_check(&sys, &gauge(), &s, &scheme).unwrap() < 1e-9);
            let none = IntegratorScheme::new(k, 0.05, 0).unwrap();
            assert_eq!(reverse_check(&sys, &gauge(), &s, &none).unwrap(), 0.0);
        }
    }

    #[test]
    fn reversibility_defect_grows_smoothly() {
        let sys = so3();
        let mut r = rng(5);
        let s = PhaseState::new(haar_rotation(&mut r, 3), random_vector(&mut r, 3));
        for k in all_kinds() {
            for l in [10, 50, 200] {
                let scheme = IntegratorScheme::new(k, 0.1, l).unwrap();
                assert!(reverse_check(&sys, &gauge(), &s, &scheme).unwrap() < 1e-8);
            }
        }
    }

    #[test]
    fn retraction_cadence_keeps_state_on_group() {
        let sys = so3().with_exp_method(crate::expmap::ExpMethod::Cayley).unwrap();
        let mut r = rng(6);
        let s = PhaseState::new(haar_rotation(&mut r, 3), random_vector(&mut r, 3));
        let scheme = IntegratorScheme::new(SchemeKind::Leapfrog, 0.1, 20).unwrap();
        let mut count = 0;
        let out = integrate_observed(&sys, &gauge(), &s, &scheme, 5, &mut |_| count += 1).unwrap();
        assert_eq!(count, 20);
        assert!(sys.algebra().group().membership(&out.q).defect < 1e-13);
    }
}
