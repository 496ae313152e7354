//! Black-box watermarking for self-supervised graph encoders.
//!
//! The owner of a message-passing encoder embeds a backdoor during
//! pre-training: a secret set of ego-graphs, each carrying a randomly
//! generated key node linked to its center, is trained to map into one
//! compact, off-manifold cluster in embedding space. Any downstream model
//! built on a stolen copy of the encoder then predicts those trigger
//! queries into a single category with high probability, and ownership is
//! asserted when the prediction-concentration score clears a threshold.
//!
//! Modules:
//! - [`tensor`], [`optim`], [`gradcheck`]: dense f64 autodiff, Adam, and a
//!   finite-difference oracle.
//! - [`sparse`], [`kernels`]: CSR matrices and the (optionally rayon-parallel)
//!   compute kernels.
//! - [`graph`]: graph data, ego-graph extraction, dataset ingestion and a
//!   synthetic stochastic-block-model fixture.
//! - [`encoder`]: the message-passing encoder and its checkpoint format.
//! - [`pretext`]: contrastive and generative self-supervised objectives.
//! - [`watermark`]: trigger-set generation, watermark losses, joint
//!   pre-training, concentration score.
//! - [`downstream`], [`metrics`]: simulated adversary heads, task metrics,
//!   and the three verification protocols.
//! - [`robustness`]: magnitude pruning and the robustness sweep.

pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod rng;
pub mod sparse;
pub mod tensor;

pub mod downstream;
pub mod encoder;
pub mod graph;
pub mod metrics;
pub mod pretext;
pub mod robustness;
pub mod textio;
pub mod watermark;

pub use error::{Error, Result};
pub use tensor::Tensor;
