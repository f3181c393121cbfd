//! Numerical library and experiment substrate for temporal-aware Mamba video
//! blocks with bypass attention, wrapped in a toy video-diffusion denoiser.
//!
//! Module map:
//! - [`tensor`], [`rng`], [`linalg`], [`graph`], [`gradcheck`], [`io`]:
//!   dense-array substrate, deterministic RNG, small linear algebra, a
//!   reverse-mode tape, gradient verification, and binary serialization.
//! - [`ssm`]: continuous/discrete state-space models, selective scan,
//!   parallel prefix scan.
//! - [`video`]: scan orders, learnable frame padding, flips.
//! - [`mamba`]: the four-branch temporal block and depth stacking.
//! - [`attention`]: temporal/sparse-causal attention, low-rank bypass maps
//!   with SVD initialization, random-projection verification.
//! - [`diffusion`]: noise schedule, training objective, DDIM sampling,
//!   synthetic data, and the training loop.

#![forbid(unsafe_code)]

pub mod attention;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod mamba;
pub mod rng;
pub mod ssm;
pub mod tensor;
pub mod timing;
pub mod video;

pub use error::{Error, Result};
pub use graph::{Graph, VarId};
pub use rng::Rng;
pub use tensor::Tensor;
pub use video::VideoTensor;
