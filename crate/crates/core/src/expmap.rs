//! Matrix exponential and diagonal Padé approximants.
//!
//! [`ExpMethod::ScalingSquaring`] is the reference exponential (degree-13
//! Padé with scaling and squaring). [`ExpMethod::Cayley`] and
//! [`ExpMethod::PadeDiagonal`] are unscaled diagonal Padé approximants; they
//! map quadratic-group algebras (`so(n)` in particular) exactly into the group.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{GroupFamily, LieGroupSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpMethod {
    #[default]
    ScalingSquaring,
    /// `(I − Z/2)⁻¹ (I + Z/2)`, the (1,1) Padé approximant.
    Cayley,
    /// Unscaled `(m, m)` Padé approximant.
    PadeDiagonal(u32),
}

/// Largest defect [`retract`] will repair.
pub const RETRACT_LIMIT: f64 = 1e-3;

// Higham (2005), degree-13 threshold on the 1-norm.
const THETA_13: f64 = 5.371_920_351_148_152;

fn one_norm(z: &DMatrix<f64>) -> f64 {
    z.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Coefficients `p_j = (2m − j)! m! / ((2m)! j! (m − j)!)`, `j = 0..=m`.
fn pade_coefficients(m: u32) -> Vec<f64> {
    let m = m as usize;
    let mut c = vec![1.0; m + 1];
    for j in 1..=m {
        // p_j / p_{j-1} = (m − j + 1) / (j (2m − j + 1))
        c[j] = c[j - 1] * (m - j + 1) as f64 / (j as f64 * (2 * m - j + 1) as f64);
    }
    c
}

fn pade(z: &DMatrix<f64>, m: u32) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    let coeffs = pade_coefficients(m);
    let mut even = DMatrix::<f64>::zeros(n, n);
    let mut odd = DMatrix::<f64>::zeros(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for (j, c) in coeffs.iter().enumerate() {
        if j > 0 {
            power = &power * z;
        }
        if j % 2 == 0 {
            even += &power * *c;
        } else {
            odd += &power * *c;
        }
    }
    let num = &even + &odd;
    let den = even - odd;
    let x = den.lu().solve(&num).ok_or(Error::SingularDenominator)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularDenominator)
    }
}

fn scaling_squaring(z: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = one_norm(z);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = z * 0.5f64.powi(s);
    // The scaled norm is below θ13, where the degree-13 denominator is
    // well conditioned.
    let mut x = pade(&scaled, 13).expect("degree-13 Padé denominator is nonsingular below θ13");
    for _ in 0..s {
        x = &x * &x;
    }
    x
}

/// Approximates `e^Z`.
pub fn mexp(z: &DMatrix<f64>, method: ExpMethod) -> Result<DMatrix<f64>> {
    assert!(z.is_square(), "mexp requires a square matrix");
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("exponential argument".into()));
    }
    match method {
        ExpMethod::ScalingSquaring => Ok(scaling_squaring(z)),
        ExpMethod::Cayley => pade(z, 1),
        ExpMethod::PadeDiagonal(m) => pade(z, m.max(1)),
    }
}

/// Projects a nearly-group matrix back onto the group: polar factor for
/// `SO(n)`, determinant renormalization for `SL(n)`, identity for `GL+(n)`.
pub fn retract(spec: &LieGroupSpec, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let defect = spec.membership(q).defect;
    if !(defect <= RETRACT_LIMIT) {
        return Err(Error::RetractionRefused {
            defect,
            limit: RETRACT_LIMIT,
        });
    }
    match spec.family() {
        GroupFamily::SpecialOrthogonal => {
            let svd = q.clone().svd(true, true);
            let u = svd.u.expect("requested U");
            let vt = svd.v_t.expect("requested Vᵀ");
            Ok(u * vt)
        }
        GroupFamily::SpecialLinear => {
            let det = q.determinant();
            Ok(q * det.powf(-1.0 / spec.n() as f64))
        }
        GroupFamily::GeneralLinearPlus => Ok(q.clone()),
    }
}
