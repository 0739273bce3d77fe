//! Guide chapters compiled as doc-tests.
//!
//! mdbook cannot run listings that depend on external crates, so each
//! chapter is pulled in here as the docs of an empty module and
//! `cargo test --doc` checks every Rust block.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/poses.md")]
pub mod poses {}
#[doc = include_str!("../../../book/src/gaussians.md")]
pub mod gaussians {}
#[doc = include_str!("../../../book/src/depth-filter.md")]
pub mod depth_filter {}
#[doc = include_str!("../../../book/src/slam-loop.md")]
pub mod slam_loop {}
#[doc = include_str!("../../../book/src/data-formats.md")]
pub mod data_formats {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
