//! Sampling-based property checks: convexity of the network representative,
//! frame-indifference and isotropy, sign/permutation invariance, monotonicity,
//! angular momentum balance and stress consistency.

use std::fmt;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::kinematics::{self, diag, SignedSingularValues, Tensor3};
use crate::reference_models::{ref_energy, ref_energy_from_nu, ref_stress, MaterialParams};
use crate::variants::{pi3_orbit, VariantModel};
use crate::{Error, Result};

/// Box from which singular values are drawn.
pub const NU_RANGE: (f64, f64) = (0.4, 2.6);
/// Central-difference step of the stress check.
pub const FD_STEP: f64 = 1e-6;

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut ChaCha8Rng) -> Tensor3 {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Singular values in [`NU_RANGE`], with product 1 when `incompressible`.
pub fn sample_nu(rng: &mut ChaCha8Rng, incompressible: bool) -> SignedSingularValues {
    let (lo, hi) = NU_RANGE;
    loop {
        let a = rng.gen_range(lo..hi);
        let b = rng.gen_range(lo..hi);
        let c = if incompressible { 1.0 / (a * b) } else { rng.gen_range(lo..hi) };
        if (lo..=hi).contains(&c) {
            return SignedSingularValues([a, b, c]);
        }
    }
}

/// A rotated, non-diagonal deformation gradient with `ν` from [`sample_nu`].
pub fn sample_deformation(rng: &mut ChaCha8Rng, incompressible: bool) -> Tensor3 {
    let nu = sample_nu(rng, incompressible).0;
    let f = random_rotation(rng) * diag(nu[0], nu[1], nu[2]) * random_rotation(rng).transpose();
    if incompressible {
        // remove the rounding drift of the rotations
        f / kinematics::det(&f).cbrt()
    } else {
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub samples: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Input at which the largest violation occurred.
    pub worst_input: Vec<f64>,
}

impl CheckReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            samples: 0,
            max_violation: 0.0,
            tolerance,
            pass: true,
            worst_input: Vec::new(),
        }
    }

    fn record(&mut self, violation: f64, input: impl FnOnce() -> Vec<f64>) {
        self.samples += 1;
        // NaN counts as the worst possible outcome
        let v = if violation.is_nan() { f64::INFINITY } else { violation };
        if self.samples == 1 || v > self.max_violation {
            self.max_violation = v;
            self.worst_input = input();
        }
    }

    fn finish(mut self) -> Self {
        self.pass = self.max_violation <= self.tolerance;
        self
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<18} {} samples={} max_violation={:.3e} tol={:.1e}",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.samples,
            self.max_violation,
            self.tolerance
        )?;
        if !self.pass {
            let w: Vec<String> = self.worst_input.iter().map(|v| format!("{v:.6}")).collect();
            write!(f, " worst=[{}]", w.join(", "))?;
        }
        Ok(())
    }
}

/// Anything with an energy and a stress that the checks can probe.
pub trait Hyperelastic {
    fn label(&self) -> String;
    /// Whether only `det F = 1` states are admissible.
    fn incompressible(&self) -> bool;
    /// Energy on any `det F > 0`, ignoring the incompressibility restriction.
    fn potential(&self, f: &Tensor3) -> Result<f64>;
    /// `∂Ψ/∂F` without any pressure term.
    fn gradient(&self, f: &Tensor3) -> Result<Tensor3>;
    fn energy_of_nu(&self, nu: &SignedSingularValues) -> Result<f64>;
}

impl Hyperelastic for VariantModel {
    fn label(&self) -> String {
        format!("{} {}", self.kind, self.params.arch)
    }

    fn incompressible(&self) -> bool {
        !self.kind.compressible
    }

    fn potential(&self, f: &Tensor3) -> Result<f64> {
        VariantModel::potential(self, f)
    }

    fn gradient(&self, f: &Tensor3) -> Result<Tensor3> {
        self.stress(f)
    }

    fn energy_of_nu(&self, nu: &SignedSingularValues) -> Result<f64> {
        Ok(self.energy_from_nu(nu))
    }
}

impl Hyperelastic for MaterialParams {
    fn label(&self) -> String {
        self.model.to_string()
    }

    fn incompressible(&self) -> bool {
        self.model.is_classical()
    }

    fn potential(&self, f: &Tensor3) -> Result<f64> {
        ref_energy(self, f)
    }

    fn gradient(&self, f: &Tensor3) -> Result<Tensor3> {
        ref_stress(self, f, false)
    }

    fn energy_of_nu(&self, nu: &SignedSingularValues) -> Result<f64> {
        ref_energy_from_nu(self, nu)
    }
}

/// Midpoint convexity `f(tx + (1−t)y) ≤ t f(x) + (1−t) f(y)` on sampled pairs.
pub fn check_convexity(
    f: &dyn Fn(&[f64]) -> f64,
    sampler: &mut dyn FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    n: usize,
    tol: f64,
    seed: u64,
) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("convexity", tol);
    for _ in 0..n {
        let x = sampler(&mut rng);
        let y = sampler(&mut rng);
        let t: f64 = rng.gen();
        let m: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let violation = f(&m) - (t * f(&x) + (1.0 - t) * f(&y));
        report.record(violation, || {
            let mut w = x.clone();
            w.extend(&y);
            w.push(t);
            w
        });
    }
    report.finish()
}

/// Convexity of a model's network on lifted inputs of random states.
pub fn check_model_convexity(model: &VariantModel, n: usize, tol: f64, seed: u64) -> CheckReport {
    let incompressible = !model.kind.compressible;
    let map = model.input_map().clone();
    let mut sampler = move |rng: &mut ChaCha8Rng| {
        let lifted = map.lift(&sample_nu(rng, incompressible));
        let j = rng.gen_range(0..lifted.inputs.len());
        lifted.inputs[j].clone()
    };
    let params = &model.params;
    let f = |x: &[f64]| params.forward(x).unwrap_or(f64::NAN);
    check_convexity(&f, &mut sampler, n, tol, seed)
}

fn matrix_input(f: &Tensor3) -> Vec<f64> {
    kinematics::to_row_major(f).to_vec()
}

/// `|Ψ(Q F) − Ψ(F)|` and `|Ψ(F Qᵀ) − Ψ(F)|` over random rotations.
pub fn check_objectivity_isotropy(model: &dyn Hyperelastic, n: usize, tol: f64, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("objectivity", tol);
    for _ in 0..n {
        let f = sample_deformation(&mut rng, model.incompressible());
        let q = random_rotation(&mut rng);
        let e = model.potential(&f);
        let left = model.potential(&(q * f));
        let right = model.potential(&(f * q.transpose()));
        let violation = match (e, left, right) {
            (Ok(e), Ok(l), Ok(r)) => (l - e).abs().max((r - e).abs()),
            _ => f64::INFINITY,
        };
        report.record(violation, || matrix_input(&f));
    }
    report.finish()
}

/// Largest energy change over the 24 sign/permutation transforms of `ν`.
pub fn check_pi3(model: &dyn Hyperelastic, n: usize, tol: f64, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("pi3", tol);
    for _ in 0..n {
        let nu = sample_nu(&mut rng, model.incompressible());
        let violation = match model.energy_of_nu(&nu) {
            Ok(e) => pi3_orbit(&nu)
                .iter()
                .map(|t| model.energy_of_nu(t).map_or(f64::INFINITY, |v| (v - e).abs()))
                .fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        report.record(violation, || nu.0.to_vec());
    }
    report.finish()
}

/// Smallest partial derivative of the network along its monotone input
/// columns, reported as a violation when negative.
pub fn check_monotone(model: &VariantModel, n: usize, tol: f64, seed: u64) -> Result<CheckReport> {
    if !model.kind.is_monotone() {
        return Err(Error::WrongVariant {
            check: "monotone".into(),
            variant: model.kind.to_string(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("monotone", tol);
    let columns = model.kind.monotone_columns();
    let map = model.input_map();
    for _ in 0..n {
        let lifted = map.lift(&sample_nu(&mut rng, !model.kind.compressible));
        let j = rng.gen_range(0..lifted.inputs.len());
        let x = &lifted.inputs[j];
        let g = model.params.input_gradient(x)?;
        let violation = columns.iter().map(|&c| -g[c]).fold(f64::NEG_INFINITY, f64::max);
        report.record(violation.max(0.0), || x.clone());
    }
    Ok(report.finish())
}

/// `‖P Fᵀ − F Pᵀ‖` over random states.
pub fn check_angular_momentum(model: &dyn Hyperelastic, n: usize, tol: f64, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("angular-momentum", tol);
    for _ in 0..n {
        let f = sample_deformation(&mut rng, model.incompressible());
        let violation = match model.gradient(&f) {
            Ok(p) => {
                let m = p * f.transpose();
                (m - m.transpose()).norm()
            }
            Err(_) => f64::INFINITY,
        };
        report.record(violation, || matrix_input(&f));
    }
    report.finish()
}

/// Central differences of the energy against the analytic stress,
/// `‖P − P_fd‖ / max(‖P‖, 1)`.
pub fn check_stress_fd(model: &dyn Hyperelastic, n: usize, tol: f64, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("stress-fd", tol);
    for _ in 0..n {
        let f = sample_deformation(&mut rng, model.incompressible());
        let violation = stress_fd_error(model, &f).unwrap_or(f64::INFINITY);
        report.record(violation, || matrix_input(&f));
    }
    report.finish()
}

fn stress_fd_error(model: &dyn Hyperelastic, f: &Tensor3) -> Result<f64> {
    let p = model.gradient(f)?;
    let mut fd = Tensor3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut fp = *f;
            fp[(i, j)] += FD_STEP;
            let mut fm = *f;
            fm[(i, j)] -= FD_STEP;
            fd[(i, j)] = (model.potential(&fp)? - model.potential(&fm)?) / (2.0 * FD_STEP);
        }
    }
    Ok((p - fd).norm() / p.norm().max(1.0))
}

/// `|Ψ(I)|` of a normalized model.
pub fn check_normalization(model: &dyn Hyperelastic, tol: f64) -> CheckReport {
    let mut report = CheckReport::new("normalization", tol);
    let v = model.potential(&Tensor3::identity()).map_or(f64::INFINITY, f64::abs);
    report.record(v, || matrix_input(&Tensor3::identity()));
    report.finish()
}

/// Largest amount by which a sign-constrained weight is negative.
pub fn check_constraints(model: &VariantModel) -> CheckReport {
    let mut report = CheckReport::new("constraints", 0.0);
    let p = &model.params;
    let last = p.layers.len() - 1;
    let mut worst = 0.0f64;
    for (i, layer) in p.layers.iter().enumerate() {
        for &w in &layer.wz {
            worst = worst.max(-w);
        }
        let a = p.input_size();
        for (k, &w) in layer.wx.iter().enumerate() {
            if i == last && p.constraints.zero_last_wx {
                worst = worst.max(w.abs());
            } else if p.constraints.wx_bounded(k % a) {
                worst = worst.max(-w);
            }
        }
    }
    report.record(worst, Vec::new);
    report.finish()
}

/// Named checks and their default tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Convexity,
    Objectivity,
    Pi3,
    Monotone,
    AngularMomentum,
    StressFd,
    Normalization,
    Constraints,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Convexity,
        Check::Objectivity,
        Check::Pi3,
        Check::Monotone,
        Check::AngularMomentum,
        Check::StressFd,
        Check::Normalization,
        Check::Constraints,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Convexity => "convexity",
            Check::Objectivity => "objectivity",
            Check::Pi3 => "pi3",
            Check::Monotone => "monotone",
            Check::AngularMomentum => "angular-momentum",
            Check::StressFd => "stress-fd",
            Check::Normalization => "normalization",
            Check::Constraints => "constraints",
        }
    }

    pub fn parse(s: &str) -> Option<Check> {
        Check::ALL.into_iter().find(|c| c.name() == s.trim())
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Check::Convexity | Check::Monotone => 1e-10,
            Check::Objectivity => 1e-9,
            Check::Pi3 | Check::Normalization => 1e-12,
            Check::AngularMomentum => 1e-8,
            Check::StressFd => 1e-6,
            Check::Constraints => 0.0,
        }
    }

    /// Whether the check is meaningful for network models only.
    pub fn network_only(self) -> bool {
        matches!(self, Check::Convexity | Check::Monotone | Check::Constraints)
    }
}

/// Runs one check on a network model with its default tolerance.
pub fn run_model_check(model: &VariantModel, check: Check, n: usize, seed: u64) -> Result<CheckReport> {
    let tol = check.tolerance();
    Ok(match check {
        Check::Convexity => check_model_convexity(model, n, tol, seed),
        Check::Monotone => check_monotone(model, n, tol, seed)?,
        Check::Constraints => check_constraints(model),
        _ => run_common_check(model, check, n, seed)?,
    })
}

/// Runs a check that applies to any energy.
pub fn run_common_check(model: &dyn Hyperelastic, check: Check, n: usize, seed: u64) -> Result<CheckReport> {
    let tol = check.tolerance();
    Ok(match check {
        Check::Objectivity => check_objectivity_isotropy(model, n, tol, seed),
        Check::Pi3 => check_pi3(model, n, tol, seed),
        Check::AngularMomentum => check_angular_momentum(model, n, tol, seed),
        Check::StressFd => check_stress_fd(model, n, tol, seed),
        Check::Normalization => check_normalization(model, tol),
        other => {
            return Err(Error::WrongVariant {
                check: other.name().into(),
                variant: model.label(),
            })
        }
    })
}
