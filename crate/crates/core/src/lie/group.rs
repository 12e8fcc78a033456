//! Matrix groups and their canonical generator bases.
//!
//! Basis ordering is part of the public contract:
//!
//! * `SO(n)`: the elementary antisymmetric matrices `E_ba - E_ab` for `a < b`,
//!   ordered by `b` first and then `a`. With this ordering `so(m)` sits in the
//!   leading `m(m-1)/2` coefficients for every `m < n`, and for `SO(3)` the
//!   basis satisfies `[ξ1, ξ2] = ξ3` cyclically.
//! * `SL(n)` / `GL+(n)`: symmetric generators first (diagonal, then the
//!   off-diagonal `E_ab + E_ba` in the same `(b, a)` order), followed by the
//!   antisymmetric block ordered as for `SO(n)`. For `SL(n)` the diagonal
//!   generators are `E_aa - E_(a+1)(a+1)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance used by [`LieGroupSpec::membership`].
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupFamily {
    /// Rotations `SO(n)`.
    #[serde(rename = "SO")]
    SpecialOrthogonal,
    /// Unit-determinant matrices `SL(n)`.
    #[serde(rename = "SL")]
    SpecialLinear,
    /// Positive-determinant matrices `GL+(n)`.
    #[serde(rename = "GLplus")]
    GeneralLinearPlus,
}

impl GroupFamily {
    pub fn algebra_dim(self, n: usize) -> usize {
        match self {
            GroupFamily::SpecialOrthogonal => n * (n - 1) / 2,
            GroupFamily::SpecialLinear => n * n - 1,
            GroupFamily::GeneralLinearPlus => n * n,
        }
    }
}

impl std::fmt::Display for GroupFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroupFamily::SpecialOrthogonal => write!(f, "SO"),
            GroupFamily::SpecialLinear => write!(f, "SL"),
            GroupFamily::GeneralLinearPlus => write!(f, "GL+"),
        }
    }
}

/// A matrix group together with an ordered basis of its Lie algebra.
#[derive(Clone, Debug)]
pub struct LieGroupSpec {
    family: GroupFamily,
    n: usize,
    generators: Vec<DMatrix<f64>>,
    symmetric_count: usize,
    membership_tol: f64,
}

/// Result of a group-membership test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub member: bool,
    pub defect: f64,
}

/// Pairs `(a, b)` with `a < b < n`, ordered by `b` then `a`.
pub(crate) fn ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (1..n).flat_map(|b| (0..b).map(move |a| (a, b))).collect()
}

fn unit(n: usize, r: usize, c: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m[(r, c)] = 1.0;
    m
}

fn antisymmetric_block(n: usize) -> Vec<DMatrix<f64>> {
    ordered_pairs(n)
        .into_iter()
        .map(|(a, b)| unit(n, b, a) - unit(n, a, b))
        .collect()
}

fn off_diagonal_symmetric(n: usize) -> Vec<DMatrix<f64>> {
    ordered_pairs(n)
        .into_iter()
        .map(|(a, b)| unit(n, a, b) + unit(n, b, a))
        .collect()
}

/// Builds the canonical basis for `family` acting on `n × n` matrices.
pub fn build_group(family: GroupFamily, n: usize) -> Result<LieGroupSpec> {
    if n < 2 {
        return Err(Error::UnsupportedGroup(format!(
            "{family}({n}): matrix size must be at least 2"
        )));
    }
    let mut generators = Vec::with_capacity(family.algebra_dim(n));
    match family {
        GroupFamily::SpecialOrthogonal => {}
        GroupFamily::SpecialLinear => {
            for a in 0..n - 1 {
                generators.push(unit(n, a, a) - unit(n, a + 1, a + 1));
            }
            generators.extend(off_diagonal_symmetric(n));
        }
        GroupFamily::GeneralLinearPlus => {
            for a in 0..n {
                generators.push(unit(n, a, a));
            }
            generators.extend(off_diagonal_symmetric(n));
        }
    }
    let symmetric_count = generators.len();
    generators.extend(antisymmetric_block(n));
    debug_assert_eq!(generators.len(), family.algebra_dim(n));
    Ok(LieGroupSpec {
        family,
        n,
        generators,
        symmetric_count,
        membership_tol: DEFAULT_MEMBERSHIP_TOL,
    })
}

impl LieGroupSpec {
    pub fn family(&self) -> GroupFamily {
        self.family
    }

    /// Matrix size.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Algebra dimension.
    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    pub fn generator(&self, i: usize) -> &DMatrix<f64> {
        &self.generators[i]
    }

    /// Number of leading symmetric generators (zero for `SO(n)`).
    pub fn symmetric_count(&self) -> usize {
        self.symmetric_count
    }

    pub fn membership_tol(&self) -> f64 {
        self.membership_tol
    }

    pub fn with_membership_tol(mut self, tol: f64) -> Self {
        assert!(tol >= 0.0, "membership tolerance must be nonnegative");
        self.membership_tol = tol;
        self
    }

    /// Distance-like defect of `q` from the group.
    ///
    /// `SO(n)`: `max(‖qᵀq − I‖_max, |det q − 1|)`; `SL(n)`: `|det q − 1|`;
    /// `GL+(n)`: `max(0, −det q)`, with `det q > 0` additionally required for
    /// membership.
    pub fn membership(&self, q: &DMatrix<f64>) -> Membership {
        if q.nrows() != self.n || q.ncols() != self.n || q.iter().any(|x| !x.is_finite()) {
            return Membership {
                member: false,
                defect: f64::INFINITY,
            };
        }
        let det = q.determinant();
        let defect = match self.family {
            GroupFamily::SpecialOrthogonal => {
                let gram = q.transpose() * q;
                let ortho = (gram - DMatrix::identity(self.n, self.n)).amax();
                ortho.max((det - 1.0).abs())
            }
            GroupFamily::SpecialLinear => (det - 1.0).abs(),
            GroupFamily::GeneralLinearPlus => (-det).max(0.0),
        };
        let positive = self.family != GroupFamily::GeneralLinearPlus || det > 0.0;
        Membership {
            member: positive && defect <= self.membership_tol,
            defect,
        }
    }

    /// Whether `m` lies in the Lie algebra (antisymmetric / traceless / any).
    pub fn in_algebra(&self, m: &DMatrix<f64>, tol: f64) -> bool {
        match self.family {
            GroupFamily::SpecialOrthogonal => (m + m.transpose()).amax() <= tol,
            GroupFamily::SpecialLinear => m.trace().abs() <= tol,
            GroupFamily::GeneralLinearPlus => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expmap::{mexp, ExpMethod};

    #[test]
    fn dimensions() {
        assert_eq!(build_group(GroupFamily::SpecialOrthogonal, 3).unwrap().dim(), 3);
        assert_eq!(build_group(GroupFamily::SpecialLinear, 2).unwrap().dim(), 3);
        let gl = build_group(GroupFamily::GeneralLinearPlus, 2).unwrap();
        assert_eq!(gl.dim(), 4);
        assert_eq!(gl.symmetric_count(), 3);
        for n in 2..6 {
            for fam in [
                GroupFamily::SpecialOrthogonal,
                GroupFamily::SpecialLinear,
                GroupFamily::GeneralLinearPlus,
            ] {
                let g = build_group(fam, n).unwrap();
                assert_eq!(g.dim(), fam.algebra_dim(n));
                assert!(g.generators().iter().all(|m| g.in_algebra(m, 0.0)));
            }
        }
    }

    #[test]
    fn rejects_small_n() {
        assert!(matches!(
            build_group(GroupFamily::SpecialOrthogonal, 1),
            Err(Error::UnsupportedGroup(_))
        ));
    }

    #[test]
    fn so3_basis_is_elementary() {
        let g = build_group(GroupFamily::SpecialOrthogonal, 3).unwrap();
        for m in g.generators() {
            assert_eq!(m.iter().filter(|x| **x != 0.0).count(), 2);
            assert_eq!((m + m.transpose()).amax(), 0.0);
        }
    }

    #[test]
    fn membership_defects() {
        let so3 = build_group(GroupFamily::SpecialOrthogonal, 3).unwrap();
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(so3.membership(&id).defect, 0.0);
        let z = so3.generator(0) * 0.7 - so3.generator(2) * 1.3 + so3.generator(1) * 0.2;
        let q = mexp(&z, ExpMethod::ScalingSquaring).unwrap();
        let m = so3.membership(&q);
        assert!(m.member && m.defect < 1e-12, "{m:?}");

        let sl2 = build_group(GroupFamily::SpecialLinear, 2).unwrap();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5]));
        assert_eq!(sl2.membership(&d).defect, 0.0);

        let gl = build_group(GroupFamily::GeneralLinearPlus, 2).unwrap();
        let refl = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -3.0]));
        let m = gl.membership(&refl);
        assert!(!m.member);
        assert_eq!(m.defect, 3.0);
        assert!(!so3.membership(&DMatrix::from_element(3, 3, f64::NAN)).member);
    }
}
