//! Micro-macro childhood obesity risk modelling.
//!
//! The micro side turns NHANES-style microdata into a labelled child cohort
//! ([`ingest`], [`growth`]), trains four probabilistic classifiers
//! ([`learn`]), evaluates them ([`eval`]) and attributes predictions with
//! exact Shapley values ([`explain`]). The macro side aggregates county
//! indicators to states, builds the min-max EnvScore composite
//! ([`macroindex`]) and clusters states ([`cluster`]). [`align`] puts both
//! views side by side.

pub mod growth;
pub mod ingest;
pub mod learn;
pub mod macroindex;
pub mod align;
pub mod cluster;
pub mod eval;
pub mod explain;
