//! Latent homophilic structure learning for robust graph convolution on
//! heterophilic graphs: self-expressive structure induction, contrastive
//! refinement, masked-feature reconstruction training, and the attack
//! harness used to measure robustness and heterophily-distribution shift.

pub mod error;
pub mod attack;
pub mod encoder;
pub mod graph;
pub mod inducer;
pub mod numkit;
pub mod opt;
pub mod refiner;
pub mod seeds;

pub use error::{Error, Result};
