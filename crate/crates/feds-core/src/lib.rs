//! Training a sequence recognizer against a learned, filtered surrogate of
//! edit distance.
//!
//! The crate is `no_std` and needs only `alloc`. It contains:
//!
//! - [`text`]: exact string metrics and one-hot/greedy grid encodings,
//! - [`graph`]: a dynamic computation graph with reverse-mode
//!   differentiation whose backward pass can itself be differentiated,
//! - [`surrogate`]: the Char-CNN embedding and the surrogate training loss,
//! - [`recognizer`]: a small column-convolution recognizer and its
//!   cross-entropy loss,
//! - [`synth`]: seeded synthetic word images and random word pairs,
//! - [`optim`]: ADADELTA and plain SGD,
//! - [`trainer`]: the filtering gate and the alternating post-tuning loop.
//!
//! File formats, configuration and the command-line front end live in the
//! companion `feds` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod graph;
pub mod optim;
pub mod params;
pub mod recognizer;
pub mod rng;
pub mod surrogate;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::ParamStore;
pub use tensor::Tensor;
pub use text::{Alphabet, CharGrid, MetricsReport};
