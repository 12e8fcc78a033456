use nalgebra::{DMatrix, DVector};

use super::algebra::Algebra;
use super::group::GroupFamily;
use crate::error::{Error, Result};

const SPLIT_TOL: f64 = 1e-10;

/// Metric-orthogonal decomposition `g = k ⊕ p` with `[k, p] ⊂ p`, expressed as
/// index masks over the generator basis.
#[derive(Clone, Debug, PartialEq)]
pub struct ReductiveSplit {
    k_indices: Vec<usize>,
    p_indices: Vec<usize>,
    proj_k: DMatrix<f64>,
    proj_p: DMatrix<f64>,
    in_k: Vec<bool>,
}

impl ReductiveSplit {
    /// Builds and validates the split whose `k` part is spanned by the
    /// generators at `k_indices`; `p` is the rest.
    pub fn new(algebra: &Algebra, k_indices: &[usize]) -> Result<Self> {
        let d = algebra.dim();
        let mut in_k = vec![false; d];
        for &i in k_indices {
            if i >= d {
                return Err(Error::InvalidSplit(format!("index {i} out of range for dim {d}")));
            }
            if in_k[i] {
                return Err(Error::InvalidSplit(format!("duplicate index {i}")));
            }
            in_k[i] = true;
        }
        let k: Vec<usize> = (0..d).filter(|&i| in_k[i]).collect();
        let p: Vec<usize> = (0..d).filter(|&i| !in_k[i]).collect();

        let g = algebra.metric().g();
        for &i in &k {
            for &j in &p {
                if g[(i, j)].abs() > SPLIT_TOL {
                    return Err(Error::InvalidSplit(format!(
                        "generators {i} (k) and {j} (p) are not metric-orthogonal"
                    )));
                }
            }
        }
        let c = algebra.constants();
        for &i in &k {
            for &j in &p {
                for &r in &k {
                    if c.upper(r, i, j).abs() > SPLIT_TOL {
                        return Err(Error::InvalidSplit(format!(
                            "[k, p] has a k-component: c^{r}_({i},{j}) = {}",
                            c.upper(r, i, j)
                        )));
                    }
                }
            }
        }
        let mask = |flag: bool| {
            DMatrix::from_fn(d, d, |a, b| if a == b && in_k[a] == flag { 1.0 } else { 0.0 })
        };
        Ok(Self {
            proj_k: mask(true),
            proj_p: mask(false),
            k_indices: k,
            p_indices: p,
            in_k,
        })
    }

    /// Symmetric / antisymmetric split of a matrix group (`k = so(n)`), which is
    /// all of `k` for `SO(n)`.
    pub fn matrix_groups(algebra: &Algebra) -> Result<Self> {
        let group = algebra.group();
        let k: Vec<usize> = match group.family() {
            GroupFamily::SpecialOrthogonal => (0..group.dim()).collect(),
            _ => (group.symmetric_count()..group.dim()).collect(),
        };
        Self::new(algebra, &k)
    }

    pub fn dim(&self) -> usize {
        self.in_k.len()
    }

    pub fn k_indices(&self) -> &[usize] {
        &self.k_indices
    }

    pub fn p_indices(&self) -> &[usize] {
        &self.p_indices
    }

    pub fn projector_k(&self) -> &DMatrix<f64> {
        &self.proj_k
    }

    pub fn projector_p(&self) -> &DMatrix<f64> {
        &self.proj_p
    }

    pub fn is_k(&self, i: usize) -> bool {
        self.in_k[i]
    }

    pub fn project_k(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| if self.in_k[i] { v[i] } else { 0.0 })
    }

    pub fn project_p(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| if self.in_k[i] { 0.0 } else { v[i] })
    }

    /// `‖P_k v‖₂`.
    pub fn vertical_norm(&self, v: &DVector<f64>) -> f64 {
        self.k_indices.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt()
    }
}
