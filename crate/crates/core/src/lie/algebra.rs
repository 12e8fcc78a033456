//! Metrics, structure constants and the `ad` / `ad*` operators in
//! coefficient space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::group::{GroupFamily, LieGroupSpec};
use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlavor {
    /// `g_ij = tr(ξ_iᵀ ξ_j)`.
    TraceForm,
    /// Negative Killing form; positive definite only on compact semisimple algebras.
    NegKilling,
    Custom,
}

/// A left-invariant metric expressed in the generator basis.
#[derive(Clone, Debug)]
pub struct MetricData {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    chol: DMatrix<f64>,
    flavor: MetricFlavor,
}

impl MetricData {
    /// Validates symmetry and positive-definiteness and caches the inverse and
    /// lower Cholesky factor.
    pub fn new(g: DMatrix<f64>, flavor: MetricFlavor) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::NotPositiveDefinite("metric must be square".into()));
        }
        let scale = g.amax().max(1.0);
        if (&g - g.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite("metric is not symmetric".into()));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotPositiveDefinite("metric has non-finite entries".into()));
        }
        let g = (&g + g.transpose()) * 0.5;
        let chol = Cholesky::new(g.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        let g_inv = chol.inverse();
        let l = chol.l();
        Ok(Self {
            g,
            g_inv,
            chol: l,
            flavor,
        })
    }

    pub fn trace_form(spec: &LieGroupSpec) -> Result<Self> {
        Self::new(trace_gram(spec), MetricFlavor::TraceForm)
    }

    /// `−B` where `B` is the Killing form. Fails unless the algebra is compact
    /// semisimple (e.g. `so(n)`, `n ≥ 3`).
    pub fn neg_killing(spec: &LieGroupSpec) -> Result<Self> {
        let upper = bracket_coefficients(spec)?;
        let b = killing_matrix(spec.dim(), &upper);
        Self::new(-b, MetricFlavor::NegKilling)
    }

    pub fn custom(spec: &LieGroupSpec, g: DMatrix<f64>) -> Result<Self> {
        check_len(spec.dim(), g.nrows())?;
        Self::new(g, MetricFlavor::Custom)
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn g_inv(&self) -> &DMatrix<f64> {
        &self.g_inv
    }

    /// Lower-triangular `L` with `g = L Lᵀ`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn flavor(&self) -> MetricFlavor {
        self.flavor
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn inner(&self, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        u.dot(&(&self.g * w))
    }

    /// `½ vᵀ g v`.
    pub fn kinetic_energy(&self, v: &DVector<f64>) -> f64 {
        0.5 * self.inner(v, v)
    }
}

/// Gram matrix of the Frobenius pairing `tr(ξ_iᵀ ξ_j)`.
pub fn trace_gram(spec: &LieGroupSpec) -> DMatrix<f64> {
    let gens = spec.generators();
    let d = gens.len();
    DMatrix::from_fn(d, d, |i, j| gens[i].dot(&gens[j]))
}

fn gram_factor(spec: &LieGroupSpec) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(trace_gram(spec)).ok_or(Error::SingularBasis)
}

/// `c^k_ij` stored at `k * d² + i * d + j`, solved from matrix commutators.
fn bracket_coefficients(spec: &LieGroupSpec) -> Result<Vec<f64>> {
    let gram = gram_factor(spec)?;
    let gens = spec.generators();
    let d = gens.len();
    let mut upper = vec![0.0; d * d * d];
    for i in 0..d {
        for j in 0..d {
            let comm = &gens[i] * &gens[j] - &gens[j] * &gens[i];
            let rhs = DVector::from_fn(d, |k, _| gens[k].dot(&comm));
            let c = gram.solve(&rhs);
            for k in 0..d {
                upper[k * d * d + i * d + j] = c[k];
            }
        }
    }
    Ok(upper)
}

fn killing_matrix(d: usize, upper: &[f64]) -> DMatrix<f64> {
    // B_ij = Σ_kl c^k_il c^l_jk
    let c = |k: usize, i: usize, j: usize| upper[k * d * d + i * d + j];
    DMatrix::from_fn(d, d, |i, j| {
        let mut s = 0.0;
        for k in 0..d {
            for l in 0..d {
                s += c(k, i, l) * c(l, j, k);
            }
        }
        s
    })
}

/// Structure constants in upper, lowered and mixed index positions.
#[derive(Clone, Debug)]
pub struct StructureConstants {
    dim: usize,
    upper: Vec<f64>,
    lower: Vec<f64>,
    mixed: Vec<f64>,
}

impl StructureConstants {
    #[inline]
    fn idx(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.dim + b) * self.dim + c
    }

    /// `c^k_ij` with `[ξ_i, ξ_j] = c^k_ij ξ_k`.
    #[inline]
    pub fn upper(&self, k: usize, i: usize, j: usize) -> f64 {
        self.upper[self.idx(k, i, j)]
    }

    /// `c_rjk = g_rl c^l_jk`.
    #[inline]
    pub fn lower(&self, r: usize, j: usize, k: usize) -> f64 {
        self.lower[self.idx(r, j, k)]
    }

    /// `c_r^lk = g^ik g^lj c_rji`.
    #[inline]
    pub fn mixed(&self, r: usize, l: usize, k: usize) -> f64 {
        self.mixed[self.idx(r, l, k)]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Solves the commutator coefficients and contracts them with `metric`.
pub fn structure_constants(spec: &LieGroupSpec, metric: &MetricData) -> Result<StructureConstants> {
    check_len(spec.dim(), metric.dim())?;
    let d = spec.dim();
    let upper = bracket_coefficients(spec)?;
    let g = metric.g();
    let gi = metric.g_inv();
    let at = |v: &[f64], a: usize, b: usize, c: usize| v[(a * d + b) * d + c];

    let mut lower = vec![0.0; d * d * d];
    for r in 0..d {
        for j in 0..d {
            for k in 0..d {
                lower[(r * d + j) * d + k] = (0..d).map(|l| g[(r, l)] * at(&upper, l, j, k)).sum();
            }
        }
    }
    // c_r^lk = Σ_ij g^ik g^lj c_rji
    let mut mixed = vec![0.0; d * d * d];
    for r in 0..d {
        for l in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    let gik = gi[(i, k)];
                    if gik == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        s += gik * gi[(l, j)] * at(&lower, r, j, i);
                    }
                }
                mixed[(r * d + l) * d + k] = s;
            }
        }
    }
    Ok(StructureConstants {
        dim: d,
        upper,
        lower,
        mixed,
    })
}

/// A group basis, a metric on its algebra, and the derived constants.
///
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct Algebra {
    group: LieGroupSpec,
    metric: MetricData,
    constants: StructureConstants,
    gram: Cholesky<f64, Dyn>,
}

impl Algebra {
    pub fn new(group: LieGroupSpec, metric: MetricData) -> Result<Self> {
        let constants = structure_constants(&group, &metric)?;
        let gram = gram_factor(&group)?;
        Ok(Self {
            group,
            metric,
            constants,
            gram,
        })
    }

    /// Shorthand for the trace-form metric.
    pub fn trace_form(group: LieGroupSpec) -> Result<Self> {
        let metric = MetricData::trace_form(&group)?;
        Self::new(group, metric)
    }

    pub fn group(&self) -> &LieGroupSpec {
        &self.group
    }

    pub fn metric(&self) -> &MetricData {
        &self.metric
    }

    pub fn constants(&self) -> &StructureConstants {
        &self.constants
    }

    pub fn dim(&self) -> usize {
        self.group.dim()
    }

    pub fn family(&self) -> GroupFamily {
        self.group.family()
    }

    /// `Σ v^i ξ_i`.
    pub fn to_matrix(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let n = self.group.n();
        let mut m = DMatrix::zeros(n, n);
        for (vi, xi) in v.iter().zip(self.group.generators()) {
            if *vi != 0.0 {
                m += xi * *vi;
            }
        }
        m
    }

    /// Coefficients of the Frobenius-orthogonal projection of `m` onto the algebra.
    pub fn coefficients(&self, m: &DMatrix<f64>) -> DVector<f64> {
        let gens = self.group.generators();
        let rhs = DVector::from_fn(gens.len(), |k, _| gens[k].dot(m));
        self.gram.solve(&rhs)
    }

    /// Coefficient-space matrix of `ad_u`: `(ad_u)_kj = c^k_ij u^i`.
    pub fn ad_matrix(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let c = &self.constants;
        DMatrix::from_fn(d, d, |k, j| (0..d).map(|i| c.upper(k, i, j) * u[i]).sum())
    }

    pub(crate) fn bracket(&self, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let d = self.dim();
        let c = &self.constants;
        let mut out = DVector::zeros(d);
        for i in 0..d {
            if u[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                let uw = u[i] * w[j];
                if uw == 0.0 {
                    continue;
                }
                for k in 0..d {
                    out[k] += c.upper(k, i, j) * uw;
                }
            }
        }
        out
    }

    pub(crate) fn coadjoint(&self, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        // M_k = ⟨w, [u, ξ_k]⟩ = Σ_ai w^a u^i c_aik
        let d = self.dim();
        let c = &self.constants;
        let mut m = DVector::zeros(d);
        for a in 0..d {
            if w[a] == 0.0 {
                continue;
            }
            for i in 0..d {
                let wu = w[a] * u[i];
                if wu == 0.0 {
                    continue;
                }
                for k in 0..d {
                    m[k] += wu * c.lower(a, i, k);
                }
            }
        }
        self.metric.g_inv() * m
    }

    /// `(ad_u w)^k = c^k_ij u^i w^j`.
    pub fn ad(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), u.len())?;
        check_len(self.dim(), w.len())?;
        Ok(self.bracket(u, w))
    }

    /// Metric adjoint of `ad_u` applied to `w`: `⟨ad*_u w, z⟩ = ⟨w, ad_u z⟩`.
    pub fn ad_star(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), u.len())?;
        check_len(self.dim(), w.len())?;
        Ok(self.coadjoint(u, w))
    }

    /// `B(u, w) = tr(ad_u ad_w)`.
    pub fn killing_form(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
        check_len(self.dim(), u.len())?;
        check_len(self.dim(), w.len())?;
        Ok((self.ad_matrix(u) * self.ad_matrix(w)).trace())
    }

    pub fn inner(&self, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.metric.inner(u, w)
    }
}
