//! Compiles every chapter of the guide in `book/src` as rustdoc, so the
//! snippets run under `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
#[doc = include_str!("../../../book/src/dissection.md")]
pub mod dissection {}
#[doc = include_str!("../../../book/src/core-concepts.md")]
pub mod core_concepts {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/filtering.md")]
pub mod filtering {}
#[doc = include_str!("../../../book/src/manipulation.md")]
pub mod manipulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
