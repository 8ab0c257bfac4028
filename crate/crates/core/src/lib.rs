//! Multilingual dialog pretraining toolkit: subtitle corpus pipeline,
//! vocabulary, corruption objectives, a small hierarchical transformer with
//! its own reverse-mode autodiff, mutual-information bounds and the
//! inconsistency-identification and next-utterance-retrieval tasks.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod lang;
pub mod mi;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod rng;
pub mod synthetic;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use lang::Lang;
pub use vocab::{TokenId, Vocabulary};
