//! The guide under `book/`, one module per chapter, so that `cargo test`
//! runs every example in it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/kernels.md")]
pub mod kernels {}

#[doc = include_str!("../../../book/src/nystrom.md")]
pub mod nystrom {}

#[doc = include_str!("../../../book/src/game.md")]
pub mod game {}

#[doc = include_str!("../../../book/src/exactgame.md")]
pub mod exactgame {}

#[doc = include_str!("../../../book/src/preimage.md")]
pub mod preimage {}

#[doc = include_str!("../../../book/src/adversaries.md")]
pub mod adversaries {}

#[doc = include_str!("../../../book/src/association.md")]
pub mod association {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/end_to_end.md")]
pub mod end_to_end {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
