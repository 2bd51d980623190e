//! Description-conditioned speech recognition, desk scale.
//!
//! A miniature encoder-decoder ASR stack that conditions the decoder on a
//! per-document textual description supplied as a prompt prefix. The crate
//! carries the full pipeline: transcript normalization and WER scoring,
//! character tokenization with prompt assembly, a hand-differentiated
//! transformer, an AdamW fine-tuning loop with encoder freezing and context
//! perturbation, description generation against a pluggable text-completion
//! backend, and a synthetic homophone-collision corpus for end-to-end
//! verification.
//!
//! The crate is `no_std`-compatible (with `alloc`); all IO, file handling,
//! and the CLI live in the companion `ctxasr` crate. Byte-exact on-disk
//! formats (checkpoints, feature blocks, vocabulary files) are defined here
//! as pure byte-slice codecs so every platform agrees on them.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod descgen;
pub mod eval;
pub mod model;
pub mod rng;
pub mod text;
pub mod tokenizer;
pub mod train;
