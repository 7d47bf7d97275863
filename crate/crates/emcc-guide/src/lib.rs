//! Keeps the guide honest. mdbook renders `book/` but cannot run its code
//! blocks against the workspace, so each chapter is included here as docs
//! and `cargo test --doc` does the running. One module per chapter, so a
//! failing test names its markdown file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/minutiae.md")]
pub mod minutiae {}

#[doc = include_str!("../../../book/src/descriptors.md")]
pub mod descriptors {}

#[doc = include_str!("../../../book/src/transform.md")]
pub mod transform {}

#[doc = include_str!("../../../book/src/matching.md")]
pub mod matching {}

#[doc = include_str!("../../../book/src/templates.md")]
pub mod templates {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
