//! Self-learning segmentation of an unseen object in an unlabeled video.
//!
//! The engine works on precomputed backbone outputs: per-frame response
//! stacks over seen categories, pooled-feature stacks, and optical flow.
//! It alternates two steps until the mined pseudo-labels stop changing:
//!
//! * mining: greedy maximization of a facility-location plus unary energy
//!   over connected-component proposals ([`mining`]);
//! * transfer: fitting a linear combination of seen-category responses to
//!   the mined pseudo-labels ([`transfer`]).
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are the instantiations used by the CLI.

pub mod bundle;
pub mod config;
pub mod error;
pub mod harness;
pub mod mining;
pub mod motion;
pub mod pipeline;
pub mod proposals;
pub mod scalar;
pub mod tensorio;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensorio::{FlowField, Mask, Tensor};

pub type Tensor64 = tensorio::Tensor<f64>;
pub type Tensor32 = tensorio::Tensor<f32>;
pub type FlowField64 = tensorio::FlowField<f64>;
pub type FlowField32 = tensorio::FlowField<f32>;
pub type ProposalSet64 = proposals::ProposalSet<f64>;
pub type Selection64 = mining::Selection<f64>;
pub type SimilarityMatrix64 = mining::SimilarityMatrix<f64>;
pub type TransferWeights64 = transfer::TransferWeights<f64>;
pub type SourceGallery64 = transfer::SourceGallery<f64>;
pub type VideoBundle64 = bundle::VideoBundle<f64>;
pub type PipelineConfig64 = pipeline::PipelineConfig<f64>;
pub type RunOutput64 = pipeline::RunOutput<f64>;
