//! Deep attributed-graph clustering.
//!
//! The pipeline pre-trains an attribute autoencoder and a graph autoencoder
//! whose latents are pulled together by an alignment loss, fuses the two
//! embeddings through learnable first/second-order propagation and a global
//! self-correlation step, and then trains everything jointly against a
//! sharpened Student-t target distribution shared by the fused, attribute and
//! graph embeddings.
//!
//! Everything runs on a small dense reverse-mode autodiff engine
//! ([`autodiff`]) in `f64`.

pub mod autodiff;
pub mod checkpoint;
pub mod clustering;
pub mod config;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
