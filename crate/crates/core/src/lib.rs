//! Raw-waveform audio anti-spoofing with heterogeneous graph attention.
//!
//! Everything runs on a self-contained reverse-mode autodiff engine
//! ([`tensor::Tape`]); no external numerics libraries are involved.

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod graph;
pub mod hetero;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod scorefile;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod wav;

pub use tensor::{Tape, Tensor, TensorId};
