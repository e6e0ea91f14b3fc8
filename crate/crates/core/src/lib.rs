//! Punctuation restoration for two-channel conversational transcripts.
//!
//! The pipeline runs in stages:
//!
//! - [`ingest`] parses time-marked (CTM) and punctuated transcripts,
//! - [`align`] aligns the two per channel and transfers punctuation labels
//!   onto timed words, producing a [`Dialogue`],
//! - [`features`] turns a dialogue into per-word input rows (embedding,
//!   conversation side, speaker-standardized timing),
//! - [`model`] holds the dilated CNN and stacked BLSTM labellers built on the
//!   small numeric core in [`nn`],
//! - [`training`] and [`eval`] fit and score them,
//! - [`synth`] generates labelled synthetic dialogues for desk-scale runs.

pub mod align;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod kv;
pub mod model;
pub mod nn;
pub mod synth;
pub mod training;

pub use dialogue::{Dialogue, PunctuationClass, Side, Word};
pub use error::{Error, Result};
