//! All-in-one image restoration with stereo token embedding and
//! prompt-queried all-axis attention.
//!
//! The crate is organized bottom-up:
//!
//! * [`Tensor`], [`Tape`] and the ops in [`ops`]: a small `f64` array
//!   engine with reverse-mode gradients.
//! * [`embedding`]: stereo token partitioning, embedding and patch reversion.
//! * [`prompts`]: degradation-label text encoders and prompt replication.
//! * [`attention`]: all-axis attention with negative affinity plus the
//!   spatial, channel and omni baselines.
//! * [`dcffn`]: the 3-D depthwise convolutional feed-forward network and
//!   the baseline feed-forward variants.
//! * [`model`]: the four-stage restoration network, FLOP and parameter
//!   accounting, checkpoints.
//! * [`data`]: synthetic paired degradations and image I/O.
//! * [`metrics`]: PSNR and SSIM.
//! * [`train`]: losses, Adam, the training loop, evaluation and ablations.

pub mod attention;
pub mod data;
pub mod dcffn;
pub mod embedding;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod prompts;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use ops::ConvOptions;
pub use params::{Bindings, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
