//! Spherical-Fourier SE(3)-equivariant point-cloud policy toolkit.
//!
//! The crate is layered bottom-up:
//!
//! - [`so3`]: rotations, real spherical harmonics, Wigner D-matrices, grids
//!   and Fourier transforms on S² and SO(3).
//! - [`tensor`]: irreps-typed feature tensors and their equivariant algebra.
//! - [`autodiff`]: a reverse-mode tape over dense arrays plus optimizers.
//! - [`layers`]: knn graphs, spherical Fourier max-pooling and upsampling,
//!   invariant FiLM and the equivariant graph attention block.
//! - [`eptu`]: the point-transformer U-Net encoder.
//! - [`field`]: translational, gripper and rotational value heads.
//! - [`policy`]: the assembled policy, synthetic tasks, training and evaluation.
//! - [`check`]: the equivariance certification suite.

mod error;
mod real;

pub mod so3;
pub mod tensor;
pub mod autodiff;
pub mod layers;
pub mod scene;
pub mod eptu;
pub mod field;
pub mod policy;
pub mod check;

pub use error::{Error, Result};
pub use real::Real;
