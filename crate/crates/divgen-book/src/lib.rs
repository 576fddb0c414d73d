//! The guide in `book/` compiled as doctests, one module per chapter so a
//! failing listing points at its chapter. Nothing here is meant to be used.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/sampling.md")]
pub mod sampling {}
#[doc = include_str!("../../../book/src/generation.md")]
pub mod generation {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/curation.md")]
pub mod curation {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
