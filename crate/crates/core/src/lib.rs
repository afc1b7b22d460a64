//! Parsimonious HMM construction: likelihood-driven two-step state tying
//! with data-driven question sets, GMM-HMM training, decoding and CER
//! scoring on synthetic radical-composed corpora.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
mod order;

pub mod corpus;
pub mod decode;
pub mod error;
pub mod gstats;
pub mod hmm;
pub mod pipeline;
pub mod questions;
pub mod tying;

pub use corpus::{Corpus, FeatureSequence, Transcription};
pub use error::{Error, ErrorClass, Result};
pub use gstats::{GaussStats, StateStats};
pub use hmm::{Alignment, HmmModelSet};
pub use questions::{Question, QuestionSet};
pub use tying::{GroundTruthTying, StateTying};
