//! Per-language embeddings learned through character-level NLP tasks, and the
//! instruments used to measure which typological properties they encode.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small reverse-mode autodiff engine with the layers the task
//!   models need (embeddings, LSTM, bi-LSTM, additive attention, softmax
//!   cross-entropy, Adam/SGD).
//! - [`corpora`]: parsers for WALS tables, G2P lexicons, ASJP word lists,
//!   SIGMORPHON inflection triples and CoNLL-U treebanks.
//! - [`langspace`]: language embedding stores, snapshots and similarity.
//! - [`seq2seq`]: the attention encoder-decoder for G2P, reconstruction and
//!   inflection.
//! - [`tagger`]: the character-based bi-LSTM PoS tagger.
//! - [`typology`]: 1-NN prediction of WALS features with cross-validation,
//!   a most-frequent-class baseline and approximate randomization tests.
//! - [`analysis`]: UPGMA dendrograms, trajectories and feature rankings.
//! - [`experiment`]: config-driven end-to-end runs and run comparison.

pub mod analysis;
pub mod corpora;
pub mod error;
pub mod experiment;
pub mod langspace;
pub mod nn;
pub mod seq2seq;
pub mod tagger;
pub mod typology;

mod rng;

pub use error::{Error, Result};
