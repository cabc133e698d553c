#![cfg_attr(not(feature = "std"), no_std)]

//! Core pipeline for rationale-augmented hate speech classification.
//!
//! An LLM extracts rationale features from each post, a frozen encoder embeds
//! the serialized features, the feature embedding is concatenated with the
//! detector's text embedding, and a two-layer MLP head is trained for binary
//! hate/non-hate classification. A companion metric suite measures how well
//! the extracted rationales align with human-annotated rationale spans.
//!
//! This crate is `no_std`-compatible (with `alloc`): it holds the pure
//! algorithmic pieces. File formats, the live LLM client, caching, and the
//! CLI live in the companion `shield-cli` crate.

extern crate alloc;

pub mod alignment;
pub mod baselines;
pub mod client;
pub mod datasets;
pub mod embedding;
pub mod extraction;
pub mod fusion;
pub mod nn;
pub mod rng;
