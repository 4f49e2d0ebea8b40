//! Learnable edit distances for pairing orthographic variants with their
//! standard spellings.
//!
//! The crate provides
//!
//! * string utilities: tokens, alphabets, Levenshtein distance;
//! * a log-space edit lattice with forward-backward and Viterbi;
//! * a memoryless stochastic edit model fitted by EM;
//! * a neural edit model whose operation probabilities depend on a
//!   bidirectional GRU encoding of both strings;
//! * negative sampling, corpus loading and splitting, training, and
//!   classification and ranking evaluation.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod lattice;
pub mod memoryless;
pub mod negatives;
pub mod neural;
pub mod optim;
pub mod strings;
pub mod synthetic;
pub mod training;

pub use corpus::TokenPair;
pub use error::{Error, Result};
pub use strings::{Alphabet, Token};
