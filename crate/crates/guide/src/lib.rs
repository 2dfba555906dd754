//! Guide chapters compiled as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/walkthrough.md")]
pub mod walkthrough {}
#[doc = include_str!("../../../book/src/specifications.md")]
pub mod specifications {}
#[doc = include_str!("../../../book/src/abstraction.md")]
pub mod abstraction {}
#[doc = include_str!("../../../book/src/model_checking.md")]
pub mod model_checking {}
#[doc = include_str!("../../../book/src/monitoring.md")]
pub mod monitoring {}
#[doc = include_str!("../../../book/src/falsification.md")]
pub mod falsification {}
#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
