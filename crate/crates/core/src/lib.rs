//! Short-text classification for tweets mentioning products: ingestion,
//! taxonomy resolution, normalization, TF-IDF with ANOVA-F selection,
//! naive Bayes and linear learners, thesaurus-based expansion and
//! cross-validated evaluation.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod expansion;
pub mod features;
pub mod io;
pub mod learners;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod taxonomy;
pub mod textprep;

pub use error::{Error, ErrorKind, Result};
