//! Two-stage distantly supervised named entity recognition.
//!
//! Distant labels come from gazetteer matching plus stamp-word rules
//! ([`distant`]). Stage I fits a hashed-feature softmax tagger ([`tagger`])
//! to those labels for a fixed number of Adam steps ([`stage1`]). Stage II
//! then self-trains it with a teacher–student loop on re-weighted soft
//! pseudo-labels ([`stage2`]). [`eval`] scores exact entity spans and
//! [`pipeline`] wires the phases behind a single JSON config.

pub mod corpus;
pub mod distant;
pub mod error;
pub mod eval;
pub mod optim;
pub mod pipeline;
pub mod stage1;
pub mod stage2;
pub mod synth;
pub mod tagger;

pub use error::{Error, Result};
