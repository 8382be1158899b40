//! The guide's code listings, compiled and run as doc tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/memory.md")]
pub mod memory {}
#[doc = include_str!("../../../book/src/lifecycle.md")]
pub mod lifecycle {}
#[doc = include_str!("../../../book/src/responsiveness.md")]
pub mod responsiveness {}
#[doc = include_str!("../../../book/src/domains.md")]
pub mod domains {}
#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
