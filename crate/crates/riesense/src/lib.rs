//! RIE-SenseNet: Poincaré-ball gyrovector operations, curvature-parameterized
//! hyperbolic attention, a sequence classifier with learnable curvature, and a
//! manifold-consistent augmentation pipeline, evaluated on a reproducible
//! synthetic multi-channel industrial-signal benchmark.

pub mod gradcheck;
pub mod geometry;
pub mod scalar;
pub mod seeding;
pub mod tape;

pub use scalar::Real;

/// Default scalar type for the full pipeline: datasets, model, harness.
pub type Fp = f64;

/// Ball point at the pipeline scalar type.
pub type BallPointFp = geometry::BallPoint<Fp>;
/// Tangent vector at the pipeline scalar type.
pub type TangentFp = geometry::TangentVector<Fp>;
/// Poincaré ball at the pipeline scalar type.
pub type PoincareBallFp = geometry::PoincareBall<Fp>;
