//! Gaussian-process posterior sampling with pathwise (Matheron) updates,
//! random Fourier feature priors, and the experiments built on them.

pub mod dynamics;
pub mod error;
pub mod features;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod optimize;
pub mod pathwise;
pub mod rng;
pub mod thompson;

pub use error::{Error, Result};
pub use features::{FourierBasis, WeightVector};
pub use kernel::Kernel;
pub use metrics::{SinkhornResult, TransportPlanConfig};
pub use models::{Dataset, ExactGp, GaussianMoments, InducingModel, SparseGp};
pub use pathwise::DecoupledPath;
