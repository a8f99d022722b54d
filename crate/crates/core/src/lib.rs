//! Frame-indifferent, isotropic and polyconvex hyperelastic energies
//! represented by input-convex neural networks.
//!
//! Four network families are provided, each built on a different convexity
//! criterion for isotropic energies written in signed singular values or
//! principal stretches:
//!
//! * [`Family::Cssv`]: convex in all elementary polynomials of the signed
//!   singular values, averaged over the 24 sign/permutation transforms,
//! * [`Family::ReducedCssv`]: convex in the elementary symmetric polynomials,
//!   averaged over the four even sign flips,
//! * [`Family::Ball`]: convex and monotone in the stretches and their
//!   pairwise products, averaged over the six permutations,
//! * [`Family::UInvar`]: convex and monotone in the invariants of `U`.
//!
//! Each family exists for compressible and incompressible materials. The
//! crate also ships analytic reference models, the load-case grids used to
//! train on them, a box-constrained quasi-Newton trainer and property
//! checkers for the physical requirements.

pub mod datagen;
pub mod icnn;
pub mod kinematics;
pub mod reference_models;
pub mod training;
pub mod variants;
pub mod verify;

pub use datagen::{Dataset, Partition, Sample};
pub use icnn::{Activation, Architecture, Constraints, IcnnParams, ParamVector};
pub use kinematics::{SignedSingularValues, SvdTriplet, Tensor3};
pub use reference_models::{MaterialModel, MaterialParams};
pub use training::{TrainConfig, TrainResult};
pub use variants::{Family, VariantKind, VariantModel};
pub use verify::CheckReport;

/// Tolerance on `|det F − 1|` for incompressible inputs.
pub const INCOMPRESSIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor contains NaN or infinite entries")]
    NonFinite,
    #[error("singular values too close for a derivative (gap {gap:e})")]
    DegenerateSpectrum { gap: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid architecture `{0}`")]
    InvalidArchitecture(String),
    #[error("deformation is not incompressible (det F = {det})")]
    NotIncompressible { det: f64 },
    #[error("deformation has non-positive determinant ({det})")]
    NonPositiveDet { det: f64 },
    #[error("Gent locking stretch exceeded (I1 - 3 = {excess}, Im - 3 = {limit})")]
    GentLockingExceeded { excess: f64, limit: f64 },
    #[error("invalid material parameters: {0}")]
    InvalidMaterial(String),
    #[error("deformation gradient must be diagonal")]
    NotDiagonal,
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown material model `{0}`")]
    UnknownModel(String),
    #[error("model is {model} but data set is {data}")]
    KindMismatch { model: &'static str, data: &'static str },
    #[error("check `{check}` does not apply to variant {variant}")]
    WrongVariant { check: String, variant: String },
    #[error("empty training partition")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
