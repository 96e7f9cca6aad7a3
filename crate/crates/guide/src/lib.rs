//! The chapters of the graphpick guide, compiled so that `cargo test`
//! runs every snippet in `book/src` as a doctest. One module per chapter
//! keeps failures traceable to their file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/survey.md")]
pub mod survey {}

#[doc = include_str!("../../../book/src/graph.md")]
pub mod graph {}

#[doc = include_str!("../../../book/src/encoder.md")]
pub mod encoder {}

#[doc = include_str!("../../../book/src/head.md")]
pub mod head {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
