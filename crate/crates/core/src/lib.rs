//! Sparse 2D Gaussian splatting: a differentiable tile rasterizer, an L1 + SSIM
//! photometric loss, an ADMM-style sparsifier that drives all but κ opacities to
//! zero during training, and the I/O needed to persist clouds and checkpoints.

pub mod cloud;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod loss;
pub mod optim;
pub mod render;
pub mod scene;
pub mod sparsify;
pub mod train;

pub use cloud::{CloudGrad, GaussianCloud, ParamGroup};
pub use error::{Error, Result};
pub use gaussian::{build_covariance, eval_gaussian, Gaussian2D};
pub use image::Image;
pub use loss::{loss, psnr, ssim, LossConfig};
pub use render::{render, render_backward, RenderSettings};
pub use sparsify::{SparsifierConfig, SparsifierState};
pub use train::{oneshot_prune_baseline, train_dense, train_gaussianspa, TrainConfig, TrainSchedule};
