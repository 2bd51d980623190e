//! Standard-library companion to `ctxasr-core`: file formats, manifest IO,
//! the LLM completion backend, and the experiment runner behind the CLI.

pub mod backend;
pub mod formats;
pub mod manifest;
pub mod runner;
