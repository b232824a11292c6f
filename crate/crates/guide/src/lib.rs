//! The book's chapters, one module each, so `cargo test --doc` runs every
//! snippet against the current crate. mdbook itself can't run snippets that
//! depend on workspace crates.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/scenario.md")]
pub mod scenario {}
#[doc = include_str!("../../../book/src/channel.md")]
pub mod channel {}
#[doc = include_str!("../../../book/src/ranging.md")]
pub mod ranging {}
#[doc = include_str!("../../../book/src/classifier.md")]
pub mod classifier {}
#[doc = include_str!("../../../book/src/positioning.md")]
pub mod positioning {}
#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/studies.md")]
pub mod studies {}
