//! Probing toolkit for fixed sentence embeddings.
//!
//! Two complementary probes measure how much task information (domain,
//! intent, slot, dialogue act) an embedding already carries:
//!
//! * a supervised linear classifier ([`probe`]) trained on the frozen vectors;
//! * an unsupervised probe that clusters the vectors ([`cluster`]) and scores
//!   the clustering against the annotation with adjusted mutual information
//!   ([`infometrics`]).
//!
//! [`sweep`] runs the full grid (fields × speaker sides × clusterers × K) and
//! writes plot-ready CSV; [`viz`] provides tSNE projections and per-cluster
//! exemplar listings.

pub mod cli;
pub mod cluster;
pub mod corpus;
pub mod error;
mod fmt;
pub mod infometrics;
pub mod probe;
pub mod sweep;
pub mod viz;

pub use error::{Error, Result};
