//! Pseudo-label rectification for human parsing.
//!
//! A segmentation network (S-Net) trained on a few labeled images predicts
//! masks for unlabeled ones. A rectification network (R-Net) fixes two kinds
//! of mistakes in those masks before they are used for retraining:
//!
//! - whole parts given the wrong identity, such as a left arm labeled as the
//!   right one, handled by graph reasoning over category channels ([`gsm`]);
//! - small inconsistent patches inside a part, handled by reasoning over a
//!   graph projected from pixels ([`lcm`]).
//!
//! Everything runs on a small reverse-mode tensor engine ([`autodiff`]) that
//! is generic over the float type. Training paths use [`f64`].

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod export;
pub mod gradcheck;
pub mod graph;
pub mod gsm;
mod kernels;
pub mod lcm;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod rnet;
pub mod scalar;
pub mod snet;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use config::PipelineConfig;
pub use error::{Error, Result, Stage};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type SegNet64 = snet::SegNetParams<f64>;
pub type SegNet32 = snet::SegNetParams<f32>;
pub type RectNet64 = rnet::RectNetParams<f64>;
pub type RectNet32 = rnet::RectNetParams<f32>;
