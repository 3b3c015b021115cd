//! Multimodal gait recognition on top of `gaitfusion-core`: synthetic
//! dataset generation, image IO, preprocessing, training, retrieval
//! evaluation, and checkpointing.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evalrun;
pub mod io;
pub mod synth;
pub mod trainer;
