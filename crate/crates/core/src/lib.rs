//! Silent vulnerability patch detection with explainable key aspects.
//!
//! The pipeline: [`corpus`] turns commits into model inputs, [`text`] maps
//! them to token ids, [`nn`] holds the classifiers and aspect generators,
//! [`training`] fits them, [`decode`] produces aspect phrases and the
//! explanation sentence, and [`eval`] scores everything with AUC and Rouge.

#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod nn;
pub mod text;
pub mod training;

mod parallel;

pub use error::{Error, Result};
