//! Gaussian-process surrogate: Matérn kernels, posterior regression,
//! PI/EI/LCB acquisition, and a `gp_minimize`-style sequential optimizer.

mod acquisition;
mod kernel;
pub(crate) mod linalg;
mod minimize;
mod model;

pub use acquisition::{
    acquire, acquisition_values, normal_cdf, normal_pdf, AcquisitionChoice, AcquisitionKind,
};
pub use kernel::{matern_kernel, KernelSpec, Smoothness};
pub use minimize::{gp_minimize, gp_suggest, GpConfig, GpMinimizeResult, GpSuggestion, GpTrial};
pub use model::{gp_fit, GpModel, NoiseModel};
