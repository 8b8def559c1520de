//! Numerical laboratory for calculus on the Heisenberg group H^n.

pub mod commutator;
pub mod contact;
pub mod counterexample;
pub mod deformation;
pub mod error;
pub mod field;
pub mod flow;
pub mod grid;
pub mod group;
pub mod jet;
pub mod mollifier;
pub mod quotients;
pub mod report;
pub mod scalar;

pub use error::{LabError, Result};
pub use field::{ClosedForm, Differentiable, ScalarField, Smooth1D};
pub use group::{FrameKind, GroupParams, HPoint};
pub use jet::Jet;
pub use scalar::Scalar;

pub type Point = HPoint<f64>;
pub type Point32 = HPoint<f32>;
pub type Field = ClosedForm<f64>;
pub type Field32 = ClosedForm<f32>;
