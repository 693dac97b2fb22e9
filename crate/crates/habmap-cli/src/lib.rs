//! Library surface of the pipeline tool: configuration parsing, run
//! manifests, plotting, and the stage implementations. The binary in
//! `main.rs` is a thin argument-parsing shell over this crate.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plotting;
