//! Each chapter of `book/` is attached here as module documentation, so
//! `cargo test` compiles and runs every code block in the guide. A book
//! example that drifts from the real API fails the build, not the reader.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/tape.md")]
pub mod tape {}

#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}

#[doc = include_str!("../../../book/src/topics.md")]
pub mod topics {}

#[doc = include_str!("../../../book/src/architecture.md")]
pub mod architecture {}

#[doc = include_str!("../../../book/src/decoding.md")]
pub mod decoding {}

#[doc = include_str!("../../../book/src/likelihood.md")]
pub mod likelihood {}

#[doc = include_str!("../../../book/src/self-critical.md")]
pub mod self_critical {}

#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
