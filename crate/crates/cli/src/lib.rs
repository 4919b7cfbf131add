//! Experiment layer on top of `pvrbench-core`: declarative configs with
//! canonical hashes, cached pretraining/dataset artifacts, an append-only
//! results store, and deterministic figure emission.

pub mod config;
pub mod figure;
pub mod runner;
