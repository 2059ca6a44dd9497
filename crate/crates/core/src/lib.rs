//! Joint aspect/opinion term extraction and aspect-level sentiment tagging
//! with dependency-relation-embedded graph convolutions.
//!
//! The crate is self-contained: a small reverse-mode differentiation kernel
//! ([`tape`]) carries every learnable operation, [`corpus`] reads
//! pre-parsed sentences and builds dependency graphs, [`encoder`] and
//! [`heads`] define the network, [`training`] fits it, and [`evaluation`]
//! scores predictions.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod nn;
pub mod params;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
