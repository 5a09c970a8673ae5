//! Diffusion probabilistic modeling of 3-D point clouds.
//!
//! A point cloud is treated as a set of independent samples from a
//! point distribution conditioned on a shape latent. A forward Markov
//! chain corrupts the points into Gaussian noise; a learned reverse
//! chain, conditioned on the latent, turns noise back into a shape.
//! The crate contains everything needed to train and run the model on
//! a single CPU: a small reverse-mode autodiff engine, the closed-form
//! diffusion math, the point-wise denoiser / PointNet-style encoder /
//! affine-coupling flow prior, training loops with checkpointing,
//! generative evaluation metrics, and synthetic shape datasets.

pub mod autodiff;
pub mod diffusion;
pub mod metrics;
pub mod nets;
pub mod cloud;
pub mod config;
pub mod data;
pub mod error;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{check_gradients, Tape, Var};
pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
