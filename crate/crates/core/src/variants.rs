//! The four network families: input maps, symmetrization tables, energy
//! averaging, normalization and stresses.
//!
//! Every family evaluates one ICNN on `n` lifted copies `x^(j)` of the signed
//! singular values and averages:
//!
//! ```text
//! Ψ(F) = (1/n) Σ_j NN(x^(j)(ν(F))) + normalization
//! ```
//!
//! Each `x^(j)` is a signed selection or sum of the entries of
//! `m(t) = (t1, t2, t3, t2t3, t1t3, t1t2, t1t2t3)`, with `t = ν` for the
//! singular-value families and `t = |ν|` for the stretch-based ones.

use std::fmt;
use std::str::FromStr;

use crate::icnn::{Activation, Architecture, Constraints, IcnnParams, Tape};
use crate::kinematics::{self, SignedSingularValues, Tensor3};
use crate::{Error, Result, INCOMPRESSIBILITY_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Cssv,
    ReducedCssv,
    Ball,
    UInvar,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Cssv, Family::ReducedCssv, Family::Ball, Family::UInvar];

    pub fn slug(self) -> &'static str {
        match self {
            Family::Cssv => "cssv",
            Family::ReducedCssv => "rcssv",
            Family::Ball => "ball",
            Family::UInvar => "uinvar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VariantKind {
    pub family: Family,
    pub compressible: bool,
}

impl VariantKind {
    pub fn new(family: Family, compressible: bool) -> Self {
        Self { family, compressible }
    }

    pub fn incompressible(family: Family) -> Self {
        Self::new(family, false)
    }

    pub fn compressible(family: Family) -> Self {
        Self::new(family, true)
    }

    pub fn input_size(&self) -> usize {
        let base = match self.family {
            Family::Cssv | Family::Ball => 6,
            Family::ReducedCssv | Family::UInvar => 2,
        };
        base + usize::from(self.compressible)
    }

    pub fn tuple_count(&self) -> usize {
        match self.family {
            Family::Cssv => 24,
            Family::ReducedCssv => 4,
            Family::Ball => 6,
            Family::UInvar => 1,
        }
    }

    /// Stretch-based families see `|ν|` and must be monotone.
    pub fn is_monotone(&self) -> bool {
        matches!(self.family, Family::Ball | Family::UInvar)
    }

    /// Input columns on which the network must be non-decreasing.
    pub fn monotone_columns(&self) -> Vec<usize> {
        if !self.is_monotone() {
            return Vec::new();
        }
        match self.family {
            // the determinant argument of the compressible Ball network is free
            Family::Ball => (0..6).collect(),
            _ => (0..self.input_size()).collect(),
        }
    }

    pub fn constraints(&self) -> Constraints {
        let exempt = if self.family == Family::Ball && self.compressible {
            vec![6]
        } else {
            Vec::new()
        };
        Constraints {
            constrain_wx: self.is_monotone(),
            wx_exempt_columns: exempt,
            zero_last_wx: self.family == Family::Cssv,
        }
    }

    pub fn all() -> Vec<VariantKind> {
        let mut out = Vec::new();
        for compressible in [false, true] {
            for family in Family::ALL {
                out.push(VariantKind::new(family, compressible));
            }
        }
        out
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.compressible {
            write!(f, "inc-")?;
        }
        write!(f, "{}", self.family.slug())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let (compressible, rest) = match t.strip_prefix("inc-") {
            Some(rest) => (false, rest),
            None => (true, t.as_str()),
        };
        let family = Family::ALL
            .into_iter()
            .find(|f| f.slug() == rest)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))?;
        Ok(VariantKind::new(family, compressible))
    }
}

/// Signed, 1-based indices into `m(ν)`, one row per tuple. Literal transcription
/// of the 24 sign/permutation inputs.
const CSSV_TABLE: [[i8; 6]; 24] = [
    [1, 2, 3, 4, 5, 6],
    [-1, -2, 3, -4, -5, 6],
    [-1, 2, -3, -4, 5, -6],
    [1, -2, -3, 4, -5, -6],
    [1, 3, 2, 4, 6, 5],
    [-1, -3, 2, -4, -6, 5],
    [-1, 3, -2, -4, 6, -5],
    [1, -3, -2, 4, -6, -5],
    [2, 1, 3, 5, 4, 6],
    [-2, -1, 3, -5, -4, 6],
    [-2, 1, -3, -5, 4, -6],
    [2, -1, -3, 5, -4, -6],
    [3, 1, 2, 6, 4, 5],
    [-3, -1, 2, -6, -4, 5],
    [-3, 1, -2, -6, 4, -5],
    [3, -1, -2, 6, -4, -5],
    [2, 3, 1, 5, 6, 4],
    [-2, -3, 1, -5, -6, 4],
    [-2, 3, -1, -5, 6, -4],
    [2, -3, -1, 5, -6, -4],
    [3, 2, 1, 6, 5, 4],
    [-3, -2, 1, -6, -5, 4],
    [-3, 2, -1, -6, 5, -4],
    [3, -2, -1, 6, -5, -4],
];

/// The six permutations of the stretch-based inputs.
const BALL_TABLE: [[i8; 6]; 6] = [
    [1, 2, 3, 4, 5, 6],
    [1, 3, 2, 4, 6, 5],
    [2, 1, 3, 5, 4, 6],
    [3, 1, 2, 6, 4, 5],
    [2, 3, 1, 5, 6, 4],
    [3, 2, 1, 6, 5, 4],
];

/// Even sign patterns of the reduced inputs.
const REDUCED_SIGNS: [[f64; 3]; 4] = [
    [1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0],
];

/// A linear map from `m(t)` (7 entries) to one network input.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleMap {
    pub rows: Vec<Vec<(usize, f64)>>,
}

fn signed_rows(row: &[i8; 6], compressible: bool) -> TupleMap {
    let mut rows: Vec<Vec<(usize, f64)>> = row
        .iter()
        .map(|&s| vec![((s.unsigned_abs() - 1) as usize, f64::from(s.signum()))])
        .collect();
    if compressible {
        rows.push(vec![(6, 1.0)]);
    }
    TupleMap { rows }
}

/// The tuple maps of a variant, in table order.
pub fn tuple_maps(kind: VariantKind) -> Vec<TupleMap> {
    let c = kind.compressible;
    match kind.family {
        Family::Cssv => CSSV_TABLE.iter().map(|r| signed_rows(r, c)).collect(),
        Family::Ball => BALL_TABLE.iter().map(|r| signed_rows(r, c)).collect(),
        Family::ReducedCssv => REDUCED_SIGNS
            .iter()
            .map(|e| {
                let mut rows = vec![
                    vec![(0, e[0]), (1, e[1]), (2, e[2])],
                    vec![(3, e[1] * e[2]), (4, e[0] * e[2]), (5, e[0] * e[1])],
                ];
                if c {
                    rows.push(vec![(6, 1.0)]);
                }
                TupleMap { rows }
            })
            .collect(),
        Family::UInvar => {
            let mut rows = vec![
                vec![(0, 1.0), (1, 1.0), (2, 1.0)],
                vec![(3, 1.0), (4, 1.0), (5, 1.0)],
            ];
            if c {
                rows.push(vec![(6, 1.0)]);
            }
            vec![TupleMap { rows }]
        }
    }
}

/// `m(t)` and its Jacobian `∂m/∂t` (7×3).
fn lifted_polynomials(t: [f64; 3]) -> ([f64; 7], [[f64; 3]; 7]) {
    let [a, b, c] = t;
    let m = [a, b, c, b * c, a * c, a * b, a * b * c];
    let dm = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, c, b],
        [c, 0.0, a],
        [b, a, 0.0],
        [b * c, a * c, a * b],
    ];
    (m, dm)
}

/// Lifted network inputs of one state together with `∂x^(j)/∂ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedInputs {
    pub inputs: Vec<Vec<f64>>,
    /// `jacobians[j][r]` is the row `∂x^(j)_r/∂ν`.
    pub jacobians: Vec<Vec<[f64; 3]>>,
}

/// Precomputed symmetrization of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMap {
    pub kind: VariantKind,
    maps: Vec<TupleMap>,
}

impl InputMap {
    pub fn new(kind: VariantKind) -> Self {
        Self {
            kind,
            maps: tuple_maps(kind),
        }
    }

    pub fn tuple_count(&self) -> usize {
        self.maps.len()
    }

    pub fn lift(&self, nu: &SignedSingularValues) -> LiftedInputs {
        let (t, dt) = if self.kind.is_monotone() {
            let sign = nu.0.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
            (nu.stretches(), sign)
        } else {
            (nu.0, [1.0; 3])
        };
        let (m, dm) = lifted_polynomials(t);
        let mut inputs = Vec::with_capacity(self.maps.len());
        let mut jacobians = Vec::with_capacity(self.maps.len());
        for map in &self.maps {
            let mut x = Vec::with_capacity(map.rows.len());
            let mut jac = Vec::with_capacity(map.rows.len());
            for row in &map.rows {
                let mut value = 0.0;
                let mut grad = [0.0; 3];
                for &(idx, coeff) in row {
                    value += coeff * m[idx];
                    for k in 0..3 {
                        grad[k] += coeff * dm[idx][k] * dt[k];
                    }
                }
                x.push(value);
                jac.push(grad);
            }
            inputs.push(x);
            jacobians.push(jac);
        }
        LiftedInputs { inputs, jacobians }
    }
}

/// Network inputs `x^(j)` for the given signed singular values.
pub fn input_tuples(kind: VariantKind, nu: &SignedSingularValues) -> Vec<Vec<f64>> {
    InputMap::new(kind).lift(nu).inputs
}

/// All 24 transforms `B·diag(ε)·ν` with `ε1ε2ε3 = 1`.
pub fn pi3_orbit(nu: &SignedSingularValues) -> Vec<SignedSingularValues> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in PERMS {
        for e in REDUCED_SIGNS {
            out.push(SignedSingularValues([
                e[0] * nu.0[p[0]],
                e[1] * nu.0[p[1]],
                e[2] * nu.0[p[2]],
            ]));
        }
    }
    out
}

/// A trained (or hand-built) constitutive network.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantModel {
    pub kind: VariantKind,
    pub params: IcnnParams,
    /// Constant energy shift in MPa.
    pub normalization: f64,
    input_map: InputMap,
}

impl VariantModel {
    pub fn new(kind: VariantKind, params: IcnnParams, normalization: f64) -> Result<Self> {
        if params.input_size() != kind.input_size() {
            return Err(Error::ShapeMismatch {
                expected: kind.input_size(),
                got: params.input_size(),
            });
        }
        Ok(Self {
            kind,
            params,
            normalization,
            input_map: InputMap::new(kind),
        })
    }

    /// Freshly initialized, un-normalized model.
    pub fn init(kind: VariantKind, hidden: &[usize], seed: u64) -> Result<Self> {
        let arch = Architecture::new(kind.input_size(), hidden.to_vec())?;
        let params = IcnnParams::init(&arch, &kind.constraints(), seed);
        Self::new(kind, params, 0.0)
    }

    pub fn input_map(&self) -> &InputMap {
        &self.input_map
    }

    /// Averaged network output without the normalization shift.
    pub fn raw_energy_from_nu(&self, nu: &SignedSingularValues) -> f64 {
        let lifted = self.input_map.lift(nu);
        let mut tape = Tape::new(&self.params);
        let n = lifted.inputs.len() as f64;
        lifted
            .inputs
            .iter()
            .map(|x| tape.record(&self.params, x))
            .sum::<f64>()
            / n
    }

    pub fn energy_from_nu(&self, nu: &SignedSingularValues) -> f64 {
        self.raw_energy_from_nu(nu) + self.normalization
    }

    /// `∂Ψ/∂ν = (1/n) Σ_j (∂x^(j)/∂ν)ᵀ ∇NN(x^(j))`.
    pub fn nu_gradient(&self, nu: &SignedSingularValues) -> [f64; 3] {
        let lifted = self.input_map.lift(nu);
        let mut tape = Tape::new(&self.params);
        let a = self.params.input_size();
        let mut g = vec![0.0; a];
        let mut out = [0.0; 3];
        for (x, jac) in lifted.inputs.iter().zip(&lifted.jacobians) {
            tape.record(&self.params, x);
            g.fill(0.0);
            tape.input_gradient(&self.params, &mut g);
            for (gr, row) in g.iter().zip(jac) {
                for k in 0..3 {
                    out[k] += gr * row[k];
                }
            }
        }
        let n = lifted.inputs.len() as f64;
        out.map(|v| v / n)
    }

    fn check_domain(&self, f: &Tensor3, incompressible: bool) -> Result<f64> {
        kinematics::ensure_finite(f)?;
        let det = kinematics::det(f);
        if det <= 0.0 {
            return Err(Error::NonPositiveDet { det });
        }
        if incompressible && (det - 1.0).abs() > INCOMPRESSIBILITY_TOL {
            return Err(Error::NotIncompressible { det });
        }
        Ok(det)
    }

    /// Energy density in MPa. Incompressible variants only accept `det F = 1`.
    pub fn energy(&self, f: &Tensor3) -> Result<f64> {
        self.check_domain(f, !self.kind.compressible)?;
        self.potential(f)
    }

    /// The network potential on any `F` with `det F > 0`, ignoring the
    /// incompressibility restriction (used for derivative checks).
    pub fn potential(&self, f: &Tensor3) -> Result<f64> {
        self.check_domain(f, false)?;
        let nu = kinematics::signed_singular_values(f)?;
        Ok(self.energy_from_nu(&nu))
    }

    /// `∂Ψ/∂F = Σ_k (∂Ψ/∂ν_k) u_k ⊗ v_k`.
    ///
    /// The symmetrized energy has equal partials in repeated singular values,
    /// so the sum is exact even where individual `∂ν_k/∂F` are not unique.
    pub fn stress(&self, f: &Tensor3) -> Result<Tensor3> {
        self.check_domain(f, false)?;
        let svd = kinematics::svd3(f)?;
        let s = self.nu_gradient(&svd.nu);
        let d = svd.outer_products();
        Ok(d[0] * s[0] + d[1] * s[1] + d[2] * s[2])
    }

    /// `∂Ψ/∂F − p·F⁻ᵀ` for `det F = 1`.
    pub fn stress_incompressible(&self, f: &Tensor3, p: f64) -> Result<Tensor3> {
        self.check_domain(f, true)?;
        Ok(self.stress(f)? - kinematics::cofactor(f) * p)
    }

    /// Sets the shift so that `Ψ(I) = 0`; idempotent.
    pub fn normalize(&mut self) {
        self.normalization = -self.raw_energy_from_nu(&SignedSingularValues([1.0, 1.0, 1.0]));
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    pub fn to_json(&self) -> String {
        crate::variants::json::write_model(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::variants::json::read_model(text)
    }
}

/// Hand-built compressible ReLU network whose energy is exactly
/// `max(|ν1−ν2ν3|, |ν2−ν1ν3|, |ν3−ν1ν2|)`.
///
/// With `h1..h6 = ±(ν1−ν2ν3), ±(ν2−ν1ν3), ±(ν3−ν1ν2)` the chain
/// `L_m = ReLU(L_{m−1} − h_{m+1}) + h_{m+1}` computes `max(h1..h6)`. Writing
/// `z_m = L_m − h_{m+1}` turns it into an ICNN of unit-width layers with all
/// `W^z = 1`; the trailing linear `h6` term cancels in the 24-fold average.
pub fn mielke_exact_network() -> VariantModel {
    let kind = VariantKind::compressible(Family::Cssv);
    let arch = Architecture::new(7, vec![1; 5]).expect("valid");
    let mut params = IcnnParams::zeros(arch, kind.constraints());
    params.activation = Activation::Relu;
    // coefficients over x = (ν1, ν2, ν3, ν2ν3, ν1ν3, ν1ν2, J)
    let rows: [[f64; 7]; 5] = [
        [2.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0],  // h1 − h2
        [-1.0, -1.0, 0.0, 1.0, 1.0, 0.0, 0.0], // h2 − h3
        [0.0, 2.0, 0.0, 0.0, -2.0, 0.0, 0.0],  // h3 − h4
        [0.0, -1.0, -1.0, 0.0, 1.0, 1.0, 0.0], // h4 − h5
        [0.0, 0.0, 2.0, 0.0, 0.0, -2.0, 0.0],  // h5 − h6
    ];
    for (layer, row) in params.layers.iter_mut().zip(rows) {
        layer.wx = row.to_vec();
        layer.wz.fill(1.0);
    }
    params.layers[5].wz = vec![1.0];
    VariantModel::new(kind, params, 0.0).expect("matching input size")
}

pub(crate) mod json {
    //! Fixed-order model JSON with 17 significant digits per real.

    use serde::Deserialize;

    use super::*;

    fn real(v: f64) -> String {
        format!("{v:.16e}")
    }

    fn list(values: &[f64]) -> String {
        let items: Vec<String> = values.iter().map(|v| real(*v)).collect();
        format!("[{}]", items.join(", "))
    }

    fn lists<'a>(values: impl Iterator<Item = &'a Vec<f64>>) -> String {
        let items: Vec<String> = values.map(|v| list(v)).collect();
        format!("[{}]", items.join(", "))
    }

    pub fn write_model(model: &VariantModel) -> String {
        let p = &model.params;
        let mut out = String::from("{\n");
        out += &format!("  \"variant\": \"{}\",\n", model.kind);
        out += &format!("  \"arch\": \"{}\",\n", p.arch);
        out += &format!("  \"wx\": {},\n", lists(p.layers.iter().map(|l| &l.wx)));
        out += &format!("  \"wz\": {},\n", lists(p.layers.iter().skip(1).map(|l| &l.wz)));
        out += &format!("  \"b\": {},\n", lists(p.layers.iter().map(|l| &l.b)));
        out += &format!("  \"normalization\": {}", real(model.normalization));
        if p.activation == Activation::Relu {
            out += ",\n  \"activation\": \"relu\"";
        }
        out += "\n}\n";
        out
    }

    #[derive(Deserialize)]
    struct RawModel {
        variant: String,
        arch: String,
        wx: Vec<Vec<f64>>,
        wz: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        normalization: f64,
        #[serde(default)]
        activation: Option<String>,
    }

    pub fn read_model(text: &str) -> Result<VariantModel> {
        let raw: RawModel =
            serde_json::from_str(text).map_err(|e| Error::MalformedModel(e.to_string()))?;
        let kind: VariantKind = raw.variant.parse()?;
        let arch: Architecture = raw.arch.parse()?;
        let mut params = IcnnParams::zeros(arch, kind.constraints());
        params.activation = match raw.activation.as_deref() {
            None | Some("softplus") => Activation::Softplus,
            Some("relu") => Activation::Relu,
            Some(other) => return Err(Error::MalformedModel(format!("activation `{other}`"))),
        };
        let n = params.layers.len();
        if raw.wx.len() != n || raw.b.len() != n || raw.wz.len() + 1 != n {
            return Err(Error::MalformedModel("layer count does not match arch".into()));
        }
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let take = |src: &Vec<f64>, dst: &mut Vec<f64>, what: &str| {
                if src.len() != dst.len() {
                    return Err(Error::MalformedModel(format!(
                        "layer {i} {what}: expected {} entries, got {}",
                        dst.len(),
                        src.len()
                    )));
                }
                dst.copy_from_slice(src);
                Ok(())
            };
            take(&raw.wx[i], &mut layer.wx, "wx")?;
            take(&raw.b[i], &mut layer.b, "b")?;
            if i > 0 {
                take(&raw.wz[i - 1], &mut layer.wz, "wz")?;
            }
        }
        // sign constraints are not enforced here so that `verify` can inspect
        // hand-edited files; see `IcnnParams::satisfies_constraints`
        VariantModel::new(kind, params, raw.normalization)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::diag;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nu(a: f64, b: f64, c: f64) -> SignedSingularValues {
        SignedSingularValues([a, b, c])
    }

    fn mielke_max(v: &[f64; 3]) -> f64 {
        let [a, b, c] = *v;
        (a - b * c).abs().max((b - a * c).abs()).max((c - a * b).abs())
    }

    #[test]
    fn kind_tables() {
        let expect = [
            (Family::Cssv, 7, 6, 24),
            (Family::ReducedCssv, 3, 2, 4),
            (Family::Ball, 7, 6, 6),
            (Family::UInvar, 3, 2, 1),
        ];
        for (family, comp, inc, n) in expect {
            assert_eq!(VariantKind::compressible(family).input_size(), comp);
            assert_eq!(VariantKind::incompressible(family).input_size(), inc);
            assert_eq!(VariantKind::compressible(family).tuple_count(), n);
            assert_eq!(tuple_maps(VariantKind::compressible(family)).len(), n);
            let c = VariantKind::incompressible(family).constraints();
            assert_eq!(c.constrain_wx, matches!(family, Family::Ball | Family::UInvar));
            assert_eq!(c.zero_last_wx, family == Family::Cssv);
        }
        assert_eq!(VariantKind::compressible(Family::Ball).constraints().wx_exempt_columns, vec![6]);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in VariantKind::all() {
            assert_eq!(kind.to_string().parse::<VariantKind>().unwrap(), kind);
        }
        assert_eq!("inc-rcssv".parse::<VariantKind>().unwrap().to_string(), "inc-rcssv");
        assert!("inc-foo".parse::<VariantKind>().is_err());
    }

    #[test]
    fn cssv_identity_is_a_fixed_point() {
        let kind = VariantKind::incompressible(Family::Cssv);
        let tuples = input_tuples(kind, &nu(1.0, 1.0, 1.0));
        assert_eq!(tuples.len(), 24);
        // sign flips move ν off (1,1,1); only the unflipped permutations stay put
        let identity = vec![1.0; 6];
        let fixed = tuples.iter().filter(|t| **t == identity).count();
        assert_eq!(fixed, 6);
    }

    #[test]
    fn cssv_table_rows() {
        let kind = VariantKind::incompressible(Family::Cssv);
        let t = input_tuples(kind, &nu(2.0, 1.0, 0.5));
        assert_eq!(t[0], vec![2.0, 1.0, 0.5, 0.5, 1.0, 2.0]);
        assert_eq!(t[1], vec![-2.0, -1.0, 0.5, -0.5, -1.0, 2.0]);
        let kind = VariantKind::compressible(Family::Cssv);
        let t = input_tuples(kind, &nu(2.0, 1.0, 0.5));
        assert!(t.iter().all(|x| x.len() == 7 && x[6] == 1.0));
    }

    #[test]
    fn cssv_table_is_the_pi3_orbit() {
        // each row must equal m(πν) for a distinct π ∈ Π3
        let v = nu(1.3, -0.7, 2.1);
        let kind = VariantKind::incompressible(Family::Cssv);
        let mut table = input_tuples(kind, &v);
        let mut orbit: Vec<Vec<f64>> = pi3_orbit(&v)
            .iter()
            .map(|p| {
                let [a, b, c] = p.0;
                vec![a, b, c, b * c, a * c, a * b]
            })
            .collect();
        let key = |x: &Vec<f64>| x.iter().map(|v| format!("{v:.12}")).collect::<Vec<_>>().join(",");
        table.sort_by_key(key);
        orbit.sort_by_key(key);
        assert_eq!(table, orbit);
    }

    #[test]
    fn ball_table_is_perm3() {
        let v = nu(1.3, 0.7, 2.1);
        let kind = VariantKind::incompressible(Family::Ball);
        let t = input_tuples(kind, &v);
        assert_eq!(t.len(), 6);
        for (row, perm) in t.iter().zip([[0, 1, 2], [0, 2, 1], [1, 0, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]]) {
            let l = [v.0[perm[0]], v.0[perm[1]], v.0[perm[2]]];
            let expect = vec![l[0], l[1], l[2], l[1] * l[2], l[0] * l[2], l[0] * l[1]];
            for (a, b) in row.iter().zip(&expect) {
                assert_relative_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn reduced_table_rows() {
        let kind = VariantKind::incompressible(Family::ReducedCssv);
        let t = input_tuples(kind, &nu(2.0, 1.0, 0.5));
        assert_eq!(t[0], vec![3.5, 3.5]);
        assert_eq!(t[1], vec![-2.5, 0.5]);
        assert_eq!(t[2], vec![-1.5, -1.5]);
        assert_eq!(t[3], vec![0.5, -2.5]);
    }

    #[test]
    fn uinvar_inputs_use_absolute_values() {
        let kind = VariantKind::compressible(Family::UInvar);
        let t = input_tuples(kind, &nu(-2.0, -1.0, 0.5));
        assert_eq!(t, vec![vec![3.5, 3.5, 1.0]]);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in VariantKind::all() {
            let map = InputMap::new(kind);
            let v = nu(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let lifted = map.lift(&v);
            let h = 1e-6;
            for k in 0..3 {
                let mut vp = v;
                vp.0[k] += h;
                let mut vm = v;
                vm.0[k] -= h;
                let lp = map.lift(&vp).inputs;
                let lm = map.lift(&vm).inputs;
                for j in 0..lifted.inputs.len() {
                    for r in 0..kind.input_size() {
                        let fd = (lp[j][r] - lm[j][r]) / (2.0 * h);
                        assert!((fd - lifted.jacobians[j][r][k]).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_output_bias_is_removed_by_normalization() {
        for kind in VariantKind::all() {
            let arch = Architecture::new(kind.input_size(), vec![4]).unwrap();
            let mut params = IcnnParams::zeros(arch, kind.constraints());
            params.layers[1].b = vec![0.37];
            let mut model = VariantModel::new(kind, params, 0.0).unwrap();
            assert_relative_eq!(model.potential(&Tensor3::identity()).unwrap(), 0.37, epsilon = 1e-15);
            model.normalize();
            assert_relative_eq!(model.potential(&Tensor3::identity()).unwrap(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let kind = VariantKind::incompressible(Family::Cssv);
        let mut m = VariantModel::init(kind, &[8, 4], 1).unwrap();
        let raw = m.raw_energy_from_nu(&nu(1.0, 1.0, 1.0));
        m.normalize();
        assert_eq!(m.normalization, -raw);
        let once = m.clone();
        m.normalize();
        assert_eq!(m, once);
        assert!(m.energy(&Tensor3::identity()).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn domain_errors() {
        let inc = VariantModel::init(VariantKind::incompressible(Family::Cssv), &[4], 0).unwrap();
        assert!(matches!(
            inc.energy(&diag(1.1, 1.0, 1.0)),
            Err(Error::NotIncompressible { .. })
        ));
        assert!(matches!(
            inc.energy(&diag(-1.0, 1.0, 1.0)),
            Err(Error::NonPositiveDet { .. })
        ));
        assert!(matches!(
            inc.stress_incompressible(&diag(1.1, 1.0, 1.0), 0.0),
            Err(Error::NotIncompressible { .. })
        ));
        let comp = VariantModel::init(VariantKind::compressible(Family::Ball), &[4], 0).unwrap();
        assert!(comp.energy(&diag(1.1, 1.0, 1.0)).is_ok());
        assert!(matches!(comp.stress(&diag(1.0, -1.0, 1.0)), Err(Error::NonPositiveDet { .. })));
    }

    #[test]
    fn pressure_term() {
        let m = VariantModel::init(VariantKind::incompressible(Family::Cssv), &[8], 2)
            .unwrap()
            .normalized();
        let s = 0.5f64.sqrt();
        let f = diag(2.0, s, s);
        assert_eq!(m.stress_incompressible(&f, 0.0).unwrap(), m.stress(&f).unwrap());
        let p0 = m.stress(&Tensor3::identity()).unwrap();
        let p = m.stress_incompressible(&Tensor3::identity(), 0.8).unwrap();
        assert!((p - (p0 - Tensor3::identity() * 0.8)).norm() < 1e-15);
    }

    #[test]
    fn mielke_exact_network_matches_max_formula() {
        let model = mielke_exact_network();
        assert_eq!(model.energy_from_nu(&nu(1.0, 1.0, 1.0)), 0.0);
        assert_relative_eq!(model.energy_from_nu(&nu(2.0, 1.0, 0.5)), 1.5, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10_000 {
            let v = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let e = model.energy_from_nu(&SignedSingularValues(v));
            assert!((e - mielke_max(&v)).abs() <= 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        for kind in VariantKind::all() {
            let m = VariantModel::init(kind, &[8, 4], 13).unwrap().normalized();
            let text = m.to_json();
            assert!(text.find("\"variant\"").unwrap() < text.find("\"arch\"").unwrap());
            assert!(text.find("\"b\"").unwrap() < text.find("\"normalization\"").unwrap());
            let back = VariantModel::from_json(&text).unwrap();
            assert_eq!(back, m);
        }
        let exact = mielke_exact_network();
        assert_eq!(VariantModel::from_json(&exact.to_json()).unwrap(), exact);
    }

    #[test]
    fn json_uses_seventeen_significant_digits() {
        let m = VariantModel::init(VariantKind::incompressible(Family::UInvar), &[4], 0).unwrap();
        let text = m.to_json();
        assert!(text.contains("\"normalization\": 0.0000000000000000e0"));
        assert!(text.contains("\"arch\": \"2-4-1\""));
    }

    #[test]
    fn json_rejects_bad_input() {
        assert!(matches!(VariantModel::from_json("{}"), Err(Error::MalformedModel(_))));
        let m = VariantModel::init(VariantKind::incompressible(Family::Ball), &[4], 0).unwrap();
        let text = m.to_json();
        assert!(matches!(
            VariantModel::from_json(&text.replacen("inc-ball", "inc-bal", 1)),
            Err(Error::UnknownVariant(_))
        ));
        // arch no longer matches the stored matrices
        assert!(matches!(
            VariantModel::from_json(&text.replacen("\"6-4-1\"", "\"6-5-1\"", 1)),
            Err(Error::MalformedModel(_))
        ));
        // input size of the arch disagrees with the variant
        assert!(VariantModel::from_json(&text.replacen("inc-ball", "ball", 1)).is_err());
    }
}
