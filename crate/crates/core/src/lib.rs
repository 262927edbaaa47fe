//! Small-footprint keyword spotting with a ConvMixer backbone and lightweight
//! channel/frequency attention.
//!
//! The crate is self-contained: a dense tensor engine with reverse-mode
//! gradients ([`numerics`]), MFCC extraction and augmentation ([`features`]),
//! the noisy-curriculum data pipeline ([`data`]), the network and its
//! footprint accounting ([`model`]), and the optimizer loop ([`train`]).

pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod gradsuite;
pub mod model;
pub mod numerics;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};
