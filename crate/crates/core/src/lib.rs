//! A numerical lab for a one-layer Vision Transformer on structured
//! synthetic data: data generation, token sparsification, an analytic
//! forward/backward pass, hinge-loss SGD, feature-learning probes and seeded
//! sweeps that map sample complexity.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod init;
pub mod jsonfmt;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sparsify;
pub mod train;

pub use error::{Error, Result};
