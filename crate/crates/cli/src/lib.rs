//! Dataset I/O, synthetic benchmark generation, and experiment
//! orchestration for the latent-structure learning library.

pub mod config;
pub mod data;
pub mod runner;
pub mod synth;
