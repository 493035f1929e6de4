//! Unstructured pruning toolkit for small dense and convolutional networks.
//!
//! The crate is `no_std` (it needs `alloc`) and pure: every random decision is
//! drawn from a seeded [`rand_chacha::ChaCha8Rng`] stream so that a ticket,
//! a training run or a sanity check can be replayed bit-for-bit.
//!
//! Module map:
//!
//! * [`tensor`] - dense tensors and a single-use reverse-mode tape.
//! * [`gradcheck`] - central-difference gradients and Hessian-vector products.
//! * [`model`] - layer specs, Kaiming initialisation, masked forward pass.
//! * [`mask`] / [`criteria`] - masks, sparsity bookkeeping, pruning scores.
//! * [`schedule`] - smart-ratio and ablation keep-ratio schedules.
//! * [`sanity`] - data corruptions and structural attacks on tickets.
//! * [`codec`] - binary checkpoint container.
//! * [`train`] - masked SGD with momentum and step learning-rate decay.
//! * [`ticket`] - end-to-end ticket constructions and the sanity suite.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod codec;
pub mod criteria;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mask;
pub mod model;
pub mod rng;
pub mod sanity;
pub mod schedule;
pub mod stats;
pub mod tensor;
pub mod ticket;
pub mod train;

pub use data::Dataset;
pub use error::{Error, Result};
pub use mask::{Mask, ScoreMap};
pub use model::{ArchFamily, Head, LayerKind, LayerSpec, LayeredParams};
pub use schedule::{KeepRatioSchedule, ScheduleKind};
pub use ticket::{Pipeline, Ticket};
pub use train::{Checkpoint, TrainConfig};
