pub mod data;
pub mod distill;
pub mod error;
pub mod lattice;
pub mod nn;
pub mod seeding;
pub mod strategies;
pub mod tensor;
pub mod trainer;

mod io_util;

pub use error::{Error, Result};

/// Vocabulary index of a non-blank output token.
pub type TokenId = u32;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/lattice.md")]
    struct Lattice;
    #[doc = include_str!("../../../book/src/distillation.md")]
    struct Distillation;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/formats.md")]
    struct Formats;
}
