//! Video important-person identification.
//!
//! The pipeline extracts per-person social cues from a clip, fuses and aligns
//! them over time, ranks persons by importance and explains the top choice
//! with templated rationales. A synthetic scene generator with a known
//! importance oracle, heuristic baselines and an evaluation harness support
//! training and testing at small scale.

pub mod autodiff;
pub mod config;
pub mod cues;
pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod nn;
pub mod params;
pub mod rectifier;
pub mod refine;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Result, VipError};
