//! Runs the guide's code listings as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/sharing.md")]
mod sharing {}
#[doc = include_str!("../../../book/src/splitting.md")]
mod splitting {}
#[doc = include_str!("../../../book/src/audits.md")]
mod audits {}
#[doc = include_str!("../../../book/src/homomorphic.md")]
mod homomorphic {}
#[doc = include_str!("../../../book/src/tables.md")]
mod tables {}
#[doc = include_str!("../../../book/src/ranking.md")]
mod ranking {}
#[doc = include_str!("../../../book/src/dispatcher.md")]
mod dispatcher {}
#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
