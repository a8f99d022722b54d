//! 3×3 tensor kinematics: signed singular values, their derivatives and the
//! stretch / Cauchy–Green invariants every model variant is built on.

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// A 3×3 real tensor: a deformation gradient `F` or a stress `P` (MPa).
pub type Tensor3 = Matrix3<f64>;

/// Default minimum gap between singular values for [`dnu_dF`].
pub const DEFAULT_GAP_TOL: f64 = 1e-8;

/// Signed singular values `ν` of a tensor; `ν1·ν2·ν3 = det F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedSingularValues(pub [f64; 3]);

impl SignedSingularValues {
    pub fn new(nu: [f64; 3]) -> Self {
        Self(nu)
    }

    pub fn product(&self) -> f64 {
        self.0[0] * self.0[1] * self.0[2]
    }

    /// Principal stretches `λ_i = |ν_i|`.
    pub fn stretches(&self) -> [f64; 3] {
        [self.0[0].abs(), self.0[1].abs(), self.0[2].abs()]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

/// `F = r1 · diag(ν) · r2` with `r1, r2 ∈ SO(3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdTriplet {
    pub r1: Tensor3,
    pub nu: SignedSingularValues,
    pub r2: Tensor3,
}

impl SvdTriplet {
    pub fn reconstruct(&self) -> Tensor3 {
        self.r1 * Matrix3::from_diagonal(&Vector3::from(self.nu.0)) * self.r2
    }

    /// `∂ν_k/∂F = u_k ⊗ v_k` without any spectrum-gap check.
    ///
    /// The outer products are well defined for every valid decomposition. At
    /// repeated singular values the individual factors are not unique, but
    /// contracted with a gradient that is symmetric in the repeated entries
    /// the sum `Σ_k (∂ψ/∂ν_k) u_k ⊗ v_k` is.
    pub fn outer_products(&self) -> [Tensor3; 3] {
        let mut out = [Tensor3::zeros(); 3];
        for (k, o) in out.iter_mut().enumerate() {
            let u = self.r1.column(k);
            let v = self.r2.row(k);
            *o = u * v;
        }
        out
    }
}

pub fn ensure_finite(f: &Tensor3) -> Result<()> {
    if f.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Builds a tensor from nine row-major entries.
pub fn from_row_major(entries: &[f64; 9]) -> Tensor3 {
    Tensor3::from_row_slice(entries)
}

pub fn to_row_major(t: &Tensor3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = t[(i, j)];
        }
    }
    out
}

pub fn diag(a: f64, b: f64, c: f64) -> Tensor3 {
    Tensor3::from_diagonal(&Vector3::new(a, b, c))
}

pub fn det(f: &Tensor3) -> f64 {
    f[(0, 0)] * (f[(1, 1)] * f[(2, 2)] - f[(1, 2)] * f[(2, 1)])
        - f[(0, 1)] * (f[(1, 0)] * f[(2, 2)] - f[(1, 2)] * f[(2, 0)])
        + f[(0, 2)] * (f[(1, 0)] * f[(2, 1)] - f[(1, 1)] * f[(2, 0)])
}

/// Cofactor matrix; equals `det(F)·F⁻ᵀ` for invertible `F`.
pub fn cofactor(f: &Tensor3) -> Tensor3 {
    let c = |r1: usize, r2: usize, c1: usize, c2: usize| {
        f[(r1, c1)] * f[(r2, c2)] - f[(r1, c2)] * f[(r2, c1)]
    };
    Tensor3::new(
        c(1, 2, 1, 2),
        -c(1, 2, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 1, 2),
        c(0, 2, 0, 2),
        -c(0, 2, 0, 1),
        c(0, 1, 1, 2),
        -c(0, 1, 0, 2),
        c(0, 1, 0, 1),
    )
}

/// Signed singular value decomposition by one-sided Jacobi rotations.
///
/// Singular values come out sorted by magnitude (descending). Both rotations
/// are proper; any reflection is absorbed into the sign of `ν3`, so for
/// `det F > 0` all values are positive and for `det F < 0` exactly `ν3 < 0`.
pub fn svd3(f: &Tensor3) -> Result<SvdTriplet> {
    ensure_finite(f)?;
    let mut w = *f;
    let mut v = Tensor3::identity();

    for _sweep in 0..64 {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let alpha = w.column(p).norm_squared();
            let beta = w.column(q).norm_squared();
            let gamma = w.column(p).dot(&w.column(q));
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let t = if zeta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for m in [&mut w, &mut v] {
                for row in 0..3 {
                    let a = m[(row, p)];
                    let b = m[(row, q)];
                    m[(row, p)] = c * a - s * b;
                    m[(row, q)] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = [w.column(0).norm(), w.column(1).norm(), w.column(2).norm()];
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let w = Tensor3::from_columns(&[w.column(order[0]), w.column(order[1]), w.column(order[2])]);
    let mut v =
        Tensor3::from_columns(&[v.column(order[0]), v.column(order[1]), v.column(order[2])]);
    let sigma = [norms[order[0]], norms[order[1]], norms[order[2]]];

    if v.determinant() < 0.0 {
        let flipped = -v.column(2);
        v.set_column(2, &flipped);
    }
    // the last column of W may belong to the unflipped V
    let w_last = f * v.column(2);

    let scale = sigma[0].max(f64::MIN_POSITIVE);
    let u0 = if sigma[0] > 0.0 {
        w.column(0) / sigma[0]
    } else {
        Vector3::x()
    };
    let u1 = if sigma[1] > 1e-300 && sigma[1] > f64::EPSILON * scale * 1e-3 {
        let raw = w.column(1) / sigma[1];
        (raw - u0 * u0.dot(&raw)).normalize()
    } else {
        any_orthogonal(&u0)
    };
    let u2 = u0.cross(&u1);
    let nu2 = u2.dot(&w_last);

    let r1 = Tensor3::from_columns(&[u0, u1, u2]);
    Ok(SvdTriplet {
        r1,
        nu: SignedSingularValues([sigma[0], sigma[1], nu2]),
        r2: v.transpose(),
    })
}

fn any_orthogonal(u: &Vector3<f64>) -> Vector3<f64> {
    let trial = if u.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    (trial - u * u.dot(&trial)).normalize()
}

pub fn signed_singular_values(f: &Tensor3) -> Result<SignedSingularValues> {
    Ok(svd3(f)?.nu)
}

/// Derivatives `∂ν_k/∂F`, refusing near-repeated spectra.
#[allow(non_snake_case)]
pub fn dnu_dF(f: &Tensor3, gap_tol: f64) -> Result<[Tensor3; 3]> {
    let svd = svd3(f)?;
    let nu = svd.nu.0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let gap = (nu[i] - nu[j]).abs();
            if gap < gap_tol {
                return Err(Error::DegenerateSpectrum { gap });
            }
        }
    }
    Ok(svd.outer_products())
}

/// Invariants of the right stretch tensor: `(λ1+λ2+λ3, λ2λ3+λ1λ3+λ1λ2, ν1ν2ν3)`.
pub fn stretch_invariants(nu: &SignedSingularValues) -> (f64, f64, f64) {
    // Sorted so the result does not depend on the order of ν.
    let mut l = nu.stretches();
    l.sort_by(f64::total_cmp);
    let [l1, l2, l3] = l;
    (l1 + l2 + l3, l2 * l3 + l1 * l3 + l1 * l2, nu.product())
}

/// `(tr C, tr cof C)` with `C = FᵀF`.
pub fn cauchy_green_invariants(f: &Tensor3) -> (f64, f64) {
    let c = f.transpose() * f;
    (c.trace(), cofactor(&c).trace())
}

/// Frobenius inner product `A : B`.
pub fn ddot(a: &Tensor3, b: &Tensor3) -> f64 {
    a.component_mul(b).sum()
}
