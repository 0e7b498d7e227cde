pub mod cli;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod subword;
pub mod synth;
pub mod textprep;
pub mod training;

pub use error::{Error, Result};
