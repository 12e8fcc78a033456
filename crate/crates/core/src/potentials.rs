//! Target potentials on matrix groups and their left-translated derivatives.
//!
//! A potential is given through an ambient extension `W` defined on `n × n`
//! matrices. Frame derivatives along the left-invariant fields are then
//! `e_j(V)(q) = tr(∂W/∂xᵀ · q · ξ_j)`.
//!
//! Implementations must be reentrant: the sampler may call them from several
//! chains at once.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::expmap::{mexp, ExpMethod};
use crate::lie::{Algebra, ReductiveSplit};
use crate::random::random_element;

pub trait Potential: Send + Sync {
    fn label(&self) -> &str;

    /// `W(q)`.
    fn value(&self, q: &DMatrix<f64>) -> f64;

    /// Ambient gradient `∂W/∂x` at `q`.
    fn gradient(&self, q: &DMatrix<f64>) -> DMatrix<f64>;

    /// Directional derivative of [`Potential::gradient`] at `q` along `dir`.
    /// `None` selects the finite-difference fallback.
    fn hessian_contract(&self, _q: &DMatrix<f64>, _dir: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// `W ≡ c`.
#[derive(Clone, Debug, Default)]
pub struct ConstantPotential {
    pub value: f64,
}

impl Potential for ConstantPotential {
    fn label(&self) -> &str {
        "constant"
    }

    fn value(&self, _q: &DMatrix<f64>) -> f64 {
        self.value
    }

    fn gradient(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::zeros(q.nrows(), q.ncols())
    }

    fn hessian_contract(&self, q: &DMatrix<f64>, _dir: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(q.nrows(), q.ncols()))
    }
}

/// `W(x) = β tr(U x)` for a real matrix `U`.
#[derive(Clone, Debug)]
pub struct GaugePotential {
    u: DMatrix<f64>,
    beta: f64,
    grad: DMatrix<f64>,
}

impl GaugePotential {
    pub fn new(u: DMatrix<f64>, beta: f64) -> Result<Self> {
        if !u.is_square() {
            return Err(Error::InvalidPotential("U must be square".into()));
        }
        if !beta.is_finite() || u.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPotential("non-finite gauge parameters".into()));
        }
        let grad = u.transpose() * beta;
        Ok(Self { u, beta, grad })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Potential for GaugePotential {
    fn label(&self) -> &str {
        "gauge"
    }

    fn value(&self, q: &DMatrix<f64>) -> f64 {
        // β tr(U q) = ⟨β Uᵀ, q⟩_F
        self.grad.dot(q)
    }

    fn gradient(&self, _q: &DMatrix<f64>) -> DMatrix<f64> {
        self.grad.clone()
    }

    fn hessian_contract(&self, q: &DMatrix<f64>, _dir: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(q.nrows(), q.ncols()))
    }
}

/// `W(x) = (β/2) tr(U x)²`, a simple potential with a nonzero Hessian.
#[derive(Clone, Debug)]
pub struct QuadraticTracePotential {
    u: DMatrix<f64>,
    beta: f64,
}

impl QuadraticTracePotential {
    pub fn new(u: DMatrix<f64>, beta: f64) -> Result<Self> {
        if !u.is_square() || !beta.is_finite() || u.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPotential("U must be square and finite".into()));
        }
        Ok(Self { u, beta })
    }

    fn trace(&self, q: &DMatrix<f64>) -> f64 {
        (&self.u * q).trace()
    }
}

impl Potential for QuadraticTracePotential {
    fn label(&self) -> &str {
        "quadratic_trace"
    }

    fn value(&self, q: &DMatrix<f64>) -> f64 {
        let t = self.trace(q);
        0.5 * self.beta * t * t
    }

    fn gradient(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        self.u.transpose() * (self.beta * self.trace(q))
    }

    fn hessian_contract(&self, _q: &DMatrix<f64>, dir: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        Some(self.u.transpose() * (self.beta * (&self.u * dir).trace()))
    }
}

/// `W(x) = (β/2) ‖x − C‖²_F − α ln det x`; confining on `GL+(n)`.
#[derive(Clone, Debug)]
pub struct FrobeniusLogDetPotential {
    center: DMatrix<f64>,
    beta: f64,
    alpha: f64,
}

impl FrobeniusLogDetPotential {
    pub fn new(center: DMatrix<f64>, beta: f64, alpha: f64) -> Result<Self> {
        if !center.is_square() || !(beta >= 0.0) || !(alpha >= 0.0) {
            return Err(Error::InvalidPotential(
                "center must be square, beta and alpha nonnegative".into(),
            ));
        }
        Ok(Self { center, beta, alpha })
    }
}

impl Potential for FrobeniusLogDetPotential {
    fn label(&self) -> &str {
        "frobenius_log_det"
    }

    fn value(&self, q: &DMatrix<f64>) -> f64 {
        let det = q.determinant();
        let log_det = if det > 0.0 { det.ln() } else { f64::NEG_INFINITY };
        let spread = 0.5 * self.beta * (q - &self.center).norm_squared();
        if self.alpha == 0.0 {
            spread
        } else {
            spread - self.alpha * log_det
        }
    }

    fn gradient(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let mut grad = (q - &self.center) * self.beta;
        if self.alpha != 0.0 {
            match q.clone().try_inverse() {
                Some(inv) => grad -= inv.transpose() * self.alpha,
                None => grad.fill(f64::NAN),
            }
        }
        grad
    }

    fn hessian_contract(&self, q: &DMatrix<f64>, dir: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let mut h = dir * self.beta;
        if self.alpha != 0.0 {
            let inv = q.clone().try_inverse()?;
            h += (&inv * dir * &inv).transpose() * self.alpha;
        }
        Some(h)
    }
}

/// Right-`K`-invariant lift of a von Mises–Fisher type density on the
/// Stiefel manifold `SO(n)/SO(n−k)`: `V(q) = −tr(Fᵀ X)` with `X` the
/// trailing `k` columns of `q`. The sphere is `k = 1`, `F = κμ`.
#[derive(Clone, Debug)]
pub struct VmfLift {
    f: DMatrix<f64>,
    grad: DMatrix<f64>,
}

impl VmfLift {
    /// General Stiefel form with an `n × k` parameter matrix.
    pub fn stiefel(n: usize, f: DMatrix<f64>) -> Result<Self> {
        let k = f.ncols();
        if f.nrows() != n || k == 0 || k >= n {
            return Err(Error::InvalidPotential(format!(
                "F must be n × k with 1 ≤ k < n (got {} × {k}, n = {n})",
                f.nrows()
            )));
        }
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPotential("non-finite F".into()));
        }
        let mut grad = DMatrix::zeros(n, n);
        grad.columns_mut(n - k, k).copy_from(&(-&f));
        Ok(Self { f, grad })
    }

    /// Columns of `q` that represent the quotient point.
    pub fn columns(&self) -> usize {
        self.f.ncols()
    }

    pub fn parameter(&self) -> &DMatrix<f64> {
        &self.f
    }
}

/// `V(q) = −κ μᵀ (q e_n)` on `SO(n)`, the lift of the vMF density on `S^{n−1}`.
pub fn vmf_sphere_lift(n: usize, mu: &DVector<f64>, kappa: f64) -> Result<VmfLift> {
    if mu.len() != n {
        return Err(Error::InvalidPotential(format!("mu must have length {n}")));
    }
    if (mu.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidPotential(format!("mu must be a unit vector (norm {})", mu.norm())));
    }
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidPotential("kappa must be finite and nonnegative".into()));
    }
    VmfLift::stiefel(n, DMatrix::from_column_slice(n, 1, (mu * kappa).as_slice()))
}

impl Potential for VmfLift {
    fn label(&self) -> &str {
        "vmf"
    }

    fn value(&self, q: &DMatrix<f64>) -> f64 {
        let (n, k) = (q.ncols(), self.f.ncols());
        -q.columns(n - k, k).dot(&self.f)
    }

    fn gradient(&self, _q: &DMatrix<f64>) -> DMatrix<f64> {
        self.grad.clone()
    }

    fn hessian_contract(&self, q: &DMatrix<f64>, _dir: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(q.nrows(), q.ncols()))
    }
}

/// Lowered frame derivatives `e_j(V)(q) = tr(∂W/∂xᵀ q ξ_j)`.
pub fn frame_derivatives(potential: &dyn Potential, algebra: &Algebra, q: &DMatrix<f64>) -> DVector<f64> {
    let dw = potential.gradient(q);
    // tr(Aᵀ q ξ) = ⟨qᵀ A, ξ⟩_F
    let pulled = q.transpose() * dw;
    let gens = algebra.group().generators();
    DVector::from_fn(gens.len(), |j, _| pulled.dot(&gens[j]))
}

/// Raised force `f^i = gⁱʲ e_j(V)(q)`; the potential flow subtracts `t·f`.
pub fn left_derivative(potential: &dyn Potential, algebra: &Algebra, q: &DMatrix<f64>) -> DVector<f64> {
    algebra.metric().g_inv() * frame_derivatives(potential, algebra, q)
}

fn fd_step(q: &DMatrix<f64>) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + q.norm())
}

/// Matrix `H_js = e_j(e_s(V))(q)`.
pub fn second_frame_derivatives(
    potential: &dyn Potential,
    algebra: &Algebra,
    q: &DMatrix<f64>,
) -> DMatrix<f64> {
    let gens = algebra.group().generators();
    let d = gens.len();
    let dw = potential.gradient(q);
    let mut h = DMatrix::zeros(d, d);
    let probe = potential.hessian_contract(q, &(q * &gens[0]));
    if probe.is_some() {
        for j in 0..d {
            let qxj = q * &gens[j];
            let hd = potential
                .hessian_contract(q, &qxj)
                .expect("hessian_contract must be consistently available");
            // e_j e_s V = tr(H[qξ_j]ᵀ q ξ_s) + tr(dWᵀ q ξ_j ξ_s)
            let a = q.transpose() * hd;
            let b = qxj.transpose() * &dw;
            for s in 0..d {
                h[(j, s)] = a.dot(&gens[s]) + b.dot(&gens[s]);
            }
        }
    } else {
        let eps = fd_step(q);
        for j in 0..d {
            let plus = q * mexp(&(&gens[j] * eps), ExpMethod::ScalingSquaring).expect("finite");
            let minus = q * mexp(&(&gens[j] * -eps), ExpMethod::ScalingSquaring).expect("finite");
            let diff = (frame_derivatives(potential, algebra, &plus)
                - frame_derivatives(potential, algebra, &minus))
                / (2.0 * eps);
            h.row_mut(j).copy_from(&diff.transpose());
        }
    }
    h
}

/// `e_j(e_s(V))(q)`.
pub fn second_left_derivative(
    potential: &dyn Potential,
    algebra: &Algebra,
    q: &DMatrix<f64>,
    j: usize,
    s: usize,
) -> f64 {
    let gens = algebra.group().generators();
    match potential.hessian_contract(q, &(q * &gens[j])) {
        Some(hd) => {
            let dw = potential.gradient(q);
            (q.transpose() * hd).dot(&gens[s]) + ((q * &gens[j]).transpose() * dw).dot(&gens[s])
        }
        None => {
            let eps = fd_step(q);
            let e_s = |m: &DMatrix<f64>| {
                let p = m.transpose() * potential.gradient(m);
                p.dot(&gens[s])
            };
            let plus = q * mexp(&(&gens[j] * eps), ExpMethod::ScalingSquaring).expect("finite");
            let minus = q * mexp(&(&gens[j] * -eps), ExpMethod::ScalingSquaring).expect("finite");
            (e_s(&plus) - e_s(&minus)) / (2.0 * eps)
        }
    }
}

/// Velocity field of the Hamiltonian `{V, {V, T}} = gʲᵏ e_j(V) e_k(V)`:
/// `−2 gʲᵏ gˡˢ e_l(V) e_j e_s(V) ξ_k`, as coefficients.
pub fn force_gradient_field(potential: &dyn Potential, algebra: &Algebra, q: &DMatrix<f64>) -> DVector<f64> {
    let g_inv = algebra.metric().g_inv();
    let raised = g_inv * frame_derivatives(potential, algebra, q);
    let h = second_frame_derivatives(potential, algebra, q);
    g_inv * (h * raised) * -2.0
}

/// Largest `|e_j(V)|` over `j ∈ k` at `points` random group elements.
/// Fails with [`Error::NotKInvariant`] above `tol`.
pub fn check_k_invariance<R: Rng + ?Sized>(
    potential: &dyn Potential,
    algebra: &Algebra,
    split: &ReductiveSplit,
    rng: &mut R,
    points: usize,
    tol: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let q = random_element(rng, algebra, 0.5);
        let f = frame_derivatives(potential, algebra, &q);
        let scale = 1.0 + f.amax();
        for &i in split.k_indices() {
            let r = f[i].abs() / scale;
            if !r.is_finite() {
                worst = f64::INFINITY;
            } else {
                worst = worst.max(r);
            }
        }
    }
    if worst > tol {
        Err(Error::NotKInvariant { max_violation: worst })
    } else {
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{build_group, GroupFamily};
    use crate::random::haar_rotation;
    use crate::testutil::{random_vector, rng};

    fn so(n: usize) -> Algebra {
        Algebra::trace_form(build_group(GroupFamily::SpecialOrthogonal, n).unwrap()).unwrap()
    }

    fn random_matrix(r: &mut crate::random::ChainRng, n: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(n, n, random_vector(r, n * n).as_slice())
    }

    /// Central difference of `V(q e^{ε ξ_j})`.
    fn fd_frame(p: &dyn Potential, a: &Algebra, q: &DMatrix<f64>, j: usize) -> f64 {
        let eps = 1e-5;
        let xi = a.group().generator(j);
        let plus = q * mexp(&(xi * eps), ExpMethod::ScalingSquaring).unwrap();
        let minus = q * mexp(&(xi * -eps), ExpMethod::ScalingSquaring).unwrap();
        (p.value(&plus) - p.value(&minus)) / (2.0 * eps)
    }

    /// Ambient gradient against central differences of `W` in random directions.
    fn check_gradient(p: &dyn Potential, q: &DMatrix<f64>, r: &mut crate::random::ChainRng) {
        let n = q.nrows();
        let grad = p.gradient(q);
        for _ in 0..5 {
            let dir = random_matrix(r, n);
            let eps = 1e-5;
            let fd = (p.value(&(q + &dir * eps)) - p.value(&(q - &dir * eps))) / (2.0 * eps);
            let an = grad.dot(&dir);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(41);
        let u = random_matrix(&mut r, 3);
        let q = haar_rotation(&mut r, 3);
        check_gradient(&GaugePotential::new(u.clone(), 1.3).unwrap(), &q, &mut r);
        check_gradient(&QuadraticTracePotential::new(u.clone(), 0.7).unwrap(), &q, &mut r);
        let mu = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        check_gradient(&vmf_sphere_lift(3, &mu, 2.0).unwrap(), &q, &mut r);
        let gl = DMatrix::identity(3, 3) + random_matrix(&mut r, 3) * 0.2;
        check_gradient(&FrobeniusLogDetPotential::new(DMatrix::identity(3, 3), 1.0, 2.0).unwrap(), &gl, &mut r);
    }

    #[test]
    fn gauge_value() {
        let u = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = GaugePotential::new(u.clone(), -0.5).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((p.value(&q) - (-0.5) * (&u * &q).trace()).abs() < 1e-15);
        assert_eq!(p.gradient(&q), u.transpose() * -0.5);
    }

    #[test]
    fn constant_potential_has_no_force() {
        let a = so(3);
        let q = haar_rotation(&mut rng(1), 3);
        let p = ConstantPotential { value: 3.0 };
        assert_eq!(left_derivative(&p, &a, &q).amax(), 0.0);
        assert_eq!(second_left_derivative(&p, &a, &q, 0, 1), 0.0);
    }

    #[test]
    fn identity_gauge_at_identity_has_no_force() {
        let a = so(3);
        let p = GaugePotential::new(DMatrix::identity(3, 3), 1.0).unwrap();
        assert_eq!(left_derivative(&p, &a, &DMatrix::identity(3, 3)).amax(), 0.0);
    }

    #[test]
    fn frame_derivatives_match_finite_differences() {
        let a = so(3);
        let mut r = rng(7);
        let p = GaugePotential::new(random_matrix(&mut r, 3), 1.1).unwrap();
        for _ in 0..10 {
            let q = haar_rotation(&mut r, 3);
            let f = frame_derivatives(&p, &a, &q);
            for j in 0..3 {
                assert!((f[j] - fd_frame(&p, &a, &q, j)).abs() < 1e-6);
            }
            let raised = left_derivative(&p, &a, &q);
            assert!((raised - &f * 0.5).amax() < 1e-15);
        }
    }

    #[test]
    fn gauge_second_derivative_closed_form() {
        let a = so(3);
        let mut r = rng(8);
        let u = random_matrix(&mut r, 3);
        let p = GaugePotential::new(u.clone(), 1.0).unwrap();
        let q = haar_rotation(&mut r, 3);
        for j in 0..3 {
            for s in 0..3 {
                let (xj, xs) = (a.group().generator(j), a.group().generator(s));
                let expected = (p.gradient(&q).transpose() * &q * xj * xs).trace();
                assert!((second_left_derivative(&p, &a, &q, j, s) - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn finite_difference_fallback_matches_analytic() {
        struct NoHessian(QuadraticTracePotential);
        impl Potential for NoHessian {
            fn label(&self) -> &str {
                "no_hessian"
            }
            fn value(&self, q: &DMatrix<f64>) -> f64 {
                self.0.value(q)
            }
            fn gradient(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
                self.0.gradient(q)
            }
        }
        let a = so(3);
        let mut r = rng(9);
        let inner = QuadraticTracePotential::new(random_matrix(&mut r, 3), 0.8).unwrap();
        let q = haar_rotation(&mut r, 3);
        let analytic = second_frame_derivatives(&inner, &a, &q);
        let fallback = NoHessian(inner.clone());
        let numeric = second_frame_derivatives(&fallback, &a, &q);
        assert!((&analytic - &numeric).amax() < 1e-8, "{analytic} {numeric}");
        for j in 0..3 {
            for s in 0..3 {
                assert!((second_left_derivative(&fallback, &a, &q, j, s) - analytic[(j, s)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn frame_commutator_identity() {
        // e_j e_s V − e_s e_j V = c^r_js e_r V
        let a = so(4);
        let mut r = rng(10);
        let p = QuadraticTracePotential::new(random_matrix(&mut r, 4), 0.6).unwrap();
        let q = haar_rotation(&mut r, 4);
        let h = second_frame_derivatives(&p, &a, &q);
        let f = frame_derivatives(&p, &a, &q);
        let c = a.constants();
        for j in 0..a.dim() {
            for s in 0..a.dim() {
                let rhs: f64 = (0..a.dim()).map(|k| c.upper(k, j, s) * f[k]).sum();
                assert!((h[(j, s)] - h[(s, j)] - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn vmf_lift_properties() {
        let mu = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert!(vmf_sphere_lift(3, &(&mu * 2.0), 1.0).is_err());
        assert!(vmf_sphere_lift(3, &mu, -1.0).is_err());
        let zero = vmf_sphere_lift(3, &mu, 0.0).unwrap();
        let mut r = rng(12);
        let q = haar_rotation(&mut r, 3);
        assert_eq!(zero.value(&q), 0.0);

        let a = so(4);
        let mu4 = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let p = vmf_sphere_lift(4, &mu4, 2.0).unwrap();
        for _ in 0..50 {
            let q = haar_rotation(&mut r, 4);
            let mut k = DMatrix::identity(4, 4);
            k.view_mut((0, 0), (3, 3)).copy_from(&haar_rotation(&mut r, 3));
            assert!((p.value(&(&q * &k)) - p.value(&q)).abs() < 1e-14);
            let f = frame_derivatives(&p, &a, &q);
            // so(3) ⊂ so(4) occupies the first three coefficients.
            assert!(f.rows(0, 3).amax() < 1e-12);
        }
    }
}
