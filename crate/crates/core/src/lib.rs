//! Gradient networks: architectures whose input-output map is the gradient
//! of a scalar potential, with monotone (convex-potential) variants,
//! training, verification and the experiment harness.

pub mod activations;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod hamiltonian;
pub mod lse_oracle;
pub mod networks;
pub mod numerics;
pub mod tasks;
pub mod train;

pub use activations::{ActivationKind, ActivationPair, ActivationSpec, NeuralScalar, ScalarBase};
pub use error::{Error, Result};
pub use networks::{ConstraintMode, Network, NetworkSpec, ParamView};
pub use numerics::Matrix;
