//! Analytic hyperelastic energies used as ground truth.
//!
//! The four classical models are written in the Cauchy–Green invariants, the
//! two Mielke-type models in the signed singular values. Stresses are
//! analytic; the incompressible path removes the pressure from `P33 = 0`.

use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::datagen::solve_pressure;
use crate::kinematics::{self, SignedSingularValues, Tensor3};
use crate::{Error, Result, INCOMPRESSIBILITY_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaterialModel {
    NeoHooke,
    MooneyRivlin,
    Gent,
    ArrudaBoyce,
    MielkeSmooth,
    AdditiveMielkeSmooth,
}

impl MaterialModel {
    pub const ALL: [MaterialModel; 6] = [
        MaterialModel::NeoHooke,
        MaterialModel::MooneyRivlin,
        MaterialModel::Gent,
        MaterialModel::ArrudaBoyce,
        MaterialModel::MielkeSmooth,
        MaterialModel::AdditiveMielkeSmooth,
    ];

    pub const CLASSICAL: [MaterialModel; 4] = [
        MaterialModel::NeoHooke,
        MaterialModel::MooneyRivlin,
        MaterialModel::Gent,
        MaterialModel::ArrudaBoyce,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            MaterialModel::NeoHooke => "neo-hooke",
            MaterialModel::MooneyRivlin => "mooney-rivlin",
            MaterialModel::Gent => "gent",
            MaterialModel::ArrudaBoyce => "arruda-boyce",
            MaterialModel::MielkeSmooth => "mielke",
            MaterialModel::AdditiveMielkeSmooth => "additive-mielke",
        }
    }

    pub fn is_classical(self) -> bool {
        Self::CLASSICAL.contains(&self)
    }
}

impl fmt::Display for MaterialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for MaterialModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('_', "-");
        let t = match t.as_str() {
            "inc-mielke" => "mielke",
            "inc-additive-mielke" => "additive-mielke",
            other => other,
        };
        MaterialModel::ALL
            .into_iter()
            .find(|m| m.slug() == t)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Parameters of a reference model. Unused fields are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct MaterialParams {
    #[serde(skip, default = "default_model")]
    pub model: MaterialModel,
    /// MPa
    #[serde(default)]
    pub c1: f64,
    /// MPa
    #[serde(default)]
    pub c2: f64,
    #[serde(default)]
    pub im: f64,
    #[serde(default)]
    pub n: f64,
    /// Smoothness of the log-cosh approximations.
    #[serde(default)]
    pub a: f64,
}

fn default_model() -> MaterialModel {
    MaterialModel::NeoHooke
}

/// Standard parameters. The classical models linearize to `E ≈ 6 MPa`
/// (Arruda–Boyce to 6.10 MPa with its truncated series).
pub fn default_params(model: MaterialModel) -> MaterialParams {
    let base = MaterialParams {
        model,
        c1: 0.0,
        c2: 0.0,
        im: 0.0,
        n: 0.0,
        a: 0.0,
    };
    match model {
        MaterialModel::NeoHooke => MaterialParams { c1: 1.0, ..base },
        MaterialModel::MooneyRivlin => MaterialParams { c1: 0.8, c2: 0.2, ..base },
        MaterialModel::Gent => MaterialParams { c1: 1.0, im: 30.0, ..base },
        MaterialModel::ArrudaBoyce => MaterialParams { c1: 1.7, n: 4.0, ..base },
        MaterialModel::MielkeSmooth | MaterialModel::AdditiveMielkeSmooth => {
            MaterialParams { a: 10.0, ..base }
        }
    }
}

impl MaterialParams {
    pub fn defaults(model: MaterialModel) -> Self {
        default_params(model)
    }

    /// Defaults of `model` overridden by the fields present in `json`.
    pub fn from_json_overrides(model: MaterialModel, json: &str) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(json).map_err(|e| Error::InvalidMaterial(e.to_string()))?;
        let d = default_params(model);
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::InvalidMaterial("expected a JSON object".into()))?;
        for (key, v) in [("c1", d.c1), ("c2", d.c2), ("im", d.im), ("n", d.n), ("a", d.a)] {
            obj.entry(key).or_insert(serde_json::json!(v));
        }
        let mut p: MaterialParams =
            serde_json::from_value(value).map_err(|e| Error::InvalidMaterial(e.to_string()))?;
        p.model = model;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.c1, self.c2, self.im, self.n, self.a];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMaterial("non-finite parameter".into()));
        }
        match self.model {
            MaterialModel::Gent if self.im <= 3.0 => {
                Err(Error::InvalidMaterial(format!("Gent needs Im > 3, got {}", self.im)))
            }
            MaterialModel::ArrudaBoyce if self.n <= 0.0 => {
                Err(Error::InvalidMaterial(format!("Arruda-Boyce needs N > 0, got {}", self.n)))
            }
            MaterialModel::MielkeSmooth | MaterialModel::AdditiveMielkeSmooth if self.a <= 0.0 => {
                Err(Error::InvalidMaterial(format!("smoothness must be positive, got {}", self.a)))
            }
            _ => Ok(()),
        }
    }

    /// `∂Ψ/∂I1` and `∂Ψ/∂I2` of the invariant-based models.
    fn invariant_partials(&self, i1: f64) -> Result<(f64, f64)> {
        Ok(match self.model {
            MaterialModel::NeoHooke => (self.c1, 0.0),
            MaterialModel::MooneyRivlin => (self.c1, self.c2),
            MaterialModel::Gent => {
                let limit = self.im - 3.0;
                let arg = 1.0 - (i1 - 3.0) / limit;
                if arg <= 0.0 {
                    return Err(Error::GentLockingExceeded { excess: i1 - 3.0, limit });
                }
                (self.c1 / arg, 0.0)
            }
            MaterialModel::ArrudaBoyce => {
                let d: f64 = arruda_boyce_coefficients(self.n)
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * (k + 1) as f64 * i1.powi(k as i32))
                    .sum();
                (self.c1 * d, 0.0)
            }
            _ => unreachable!("not an invariant model"),
        })
    }
}

/// Series coefficients of `(I1^k − 3^k)`, `k = 1..=5`.
fn arruda_boyce_coefficients(n: f64) -> [f64; 5] {
    [
        0.5,
        1.0 / (20.0 * n),
        11.0 / (1050.0 * n * n),
        19.0 / (7000.0 * n.powi(3)),
        519.0 / (673750.0 * n.powi(4)),
    ]
}

/// The three arguments `ν_i − ν_j ν_k` of the Mielke-type energies and their
/// gradients in `ν`.
fn mielke_arguments(nu: &[f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let [a, b, c] = *nu;
    (
        [a - b * c, b - a * c, c - a * b],
        [[1.0, -c, -b], [-c, 1.0, -a], [-b, -a, 1.0]],
    )
}

/// `(1/a)·ln cosh(a·x)` without overflow.
fn log_cosh(a: f64, x: f64) -> f64 {
    let y = (a * x).abs();
    (y + (-2.0 * y).exp().ln_1p() - std::f64::consts::LN_2) / a
}

/// Energy of a Mielke-type model and `∂Ψ/∂ν`.
fn mielke_energy_and_gradient(p: &MaterialParams, nu: &[f64; 3]) -> (f64, [f64; 3]) {
    let (x, dx) = mielke_arguments(nu);
    let a = p.a;
    // weights ∂Ψ/∂x_i
    let (psi, w) = match p.model {
        MaterialModel::MielkeSmooth => {
            // log-sum-exp over the six terms e^{±a x_i}, shifted by the largest
            let m = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let ep = x.map(|v| (a * (v - m)).exp());
            let em = x.map(|v| (a * (-v - m)).exp());
            let s: f64 = (0..3).map(|i| ep[i] + em[i]).sum();
            let psi = m + ((s / 2.0).ln()) / a;
            (psi, [0, 1, 2].map(|i| (ep[i] - em[i]) / s))
        }
        MaterialModel::AdditiveMielkeSmooth => {
            let psi = x.iter().map(|&v| log_cosh(a, v)).sum();
            (psi, x.map(|v| (a * v).tanh()))
        }
        _ => unreachable!("not a Mielke-type model"),
    };
    let mut g = [0.0; 3];
    for i in 0..3 {
        for k in 0..3 {
            g[k] += w[i] * dx[i][k];
        }
    }
    (psi, g)
}

/// Energy as a function of the signed singular values (any representative).
pub fn ref_energy_from_nu(params: &MaterialParams, nu: &SignedSingularValues) -> Result<f64> {
    match params.model {
        MaterialModel::MielkeSmooth | MaterialModel::AdditiveMielkeSmooth => {
            Ok(mielke_energy_and_gradient(params, &nu.0).0)
        }
        _ => ref_energy(params, &kinematics::diag(nu.0[0], nu.0[1], nu.0[2])),
    }
}

/// Energy density in MPa.
pub fn ref_energy(params: &MaterialParams, f: &Tensor3) -> Result<f64> {
    kinematics::ensure_finite(f)?;
    let det = kinematics::det(f);
    if det <= 0.0 {
        return Err(Error::NonPositiveDet { det });
    }
    let p = params;
    match p.model {
        MaterialModel::MielkeSmooth | MaterialModel::AdditiveMielkeSmooth => {
            let nu = kinematics::signed_singular_values(f)?;
            Ok(mielke_energy_and_gradient(p, &nu.0).0)
        }
        _ => {
            let (i1, i2) = kinematics::cauchy_green_invariants(f);
            Ok(match p.model {
                MaterialModel::NeoHooke => p.c1 * (i1 - 3.0),
                MaterialModel::MooneyRivlin => p.c1 * (i1 - 3.0) + p.c2 * (i2 - 3.0),
                MaterialModel::Gent => {
                    let limit = p.im - 3.0;
                    let arg = 1.0 - (i1 - 3.0) / limit;
                    if arg <= 0.0 {
                        return Err(Error::GentLockingExceeded { excess: i1 - 3.0, limit });
                    }
                    -p.c1 * limit * arg.ln()
                }
                MaterialModel::ArrudaBoyce => {
                    let c = arruda_boyce_coefficients(p.n);
                    let mut acc = 0.0;
                    for (k, ck) in c.iter().enumerate() {
                        let e = (k + 1) as i32;
                        acc += ck * (i1.powi(e) - 3f64.powi(e));
                    }
                    p.c1 * acc
                }
                _ => unreachable!(),
            })
        }
    }
}

/// `∂Ψ/∂F` without any pressure term.
fn ref_gradient(params: &MaterialParams, f: &Tensor3) -> Result<Tensor3> {
    kinematics::ensure_finite(f)?;
    let det = kinematics::det(f);
    if det <= 0.0 {
        return Err(Error::NonPositiveDet { det });
    }
    match params.model {
        MaterialModel::MielkeSmooth | MaterialModel::AdditiveMielkeSmooth => {
            // symmetric in ν, so the outer products may be used at repeated values
            let svd = kinematics::svd3(f)?;
            let (_, s) = mielke_energy_and_gradient(params, &svd.nu.0);
            let d = svd.outer_products();
            Ok(d[0] * s[0] + d[1] * s[1] + d[2] * s[2])
        }
        _ => {
            let (i1, _) = kinematics::cauchy_green_invariants(f);
            let (d1, d2) = params.invariant_partials(i1)?;
            let mut g = f * (2.0 * d1);
            if d2 != 0.0 {
                let c = f.transpose() * f;
                g += (f * i1 - f * c) * (2.0 * d2);
            }
            Ok(g)
        }
    }
}

/// First Piola–Kirchhoff stress. With `incompressible`, `F` must be diagonal
/// with `det F = 1` and the pressure is chosen so that `P33 = 0`.
pub fn ref_stress(params: &MaterialParams, f: &Tensor3, incompressible: bool) -> Result<Tensor3> {
    if incompressible {
        let det = kinematics::det(f);
        if (det - 1.0).abs() > INCOMPRESSIBILITY_TOL {
            return Err(Error::NotIncompressible { det });
        }
    }
    let g = ref_gradient(params, f)?;
    if !incompressible {
        return Ok(g);
    }
    let p = solve_pressure(&g, f)?;
    Ok(g - kinematics::cofactor(f) * p)
}

/// Young's modulus from the slope of incompressible uniaxial `P11(λ)` at
/// `λ = 1` (central difference with step `h`).
pub fn uniaxial_youngs_modulus(params: &MaterialParams, h: f64) -> Result<f64> {
    let p11 = |l: f64| -> Result<f64> {
        let t = 1.0 / l.sqrt();
        Ok(ref_stress(params, &kinematics::diag(l, t, t), true)?[(0, 0)])
    };
    Ok((p11(1.0 + h)? - p11(1.0 - h)?) / (2.0 * h))
}
