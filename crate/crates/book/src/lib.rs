//! Compiles and runs the guide's code listings as doc-tests. mdbook cannot
//! link against workspace crates, so each chapter is included here as a
//! module doc and `cargo test --doc` does the work.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}

#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/prompting.md")]
pub mod prompting {}

#[doc = include_str!("../../../book/src/distillation.md")]
pub mod distillation {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
