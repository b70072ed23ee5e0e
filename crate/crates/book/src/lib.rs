//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/scenes.md")]
pub mod scenes {}

#[doc = include_str!("../../../book/src/viscosity.md")]
pub mod viscosity {}

#[doc = include_str!("../../../book/src/elastoplastic.md")]
pub mod elastoplastic {}

#[doc = include_str!("../../../book/src/thermal.md")]
pub mod thermal {}

#[doc = include_str!("../../../book/src/stepping.md")]
pub mod stepping {}

#[doc = include_str!("../../../book/src/output.md")]
pub mod output {}

#[doc = include_str!("../../../book/src/testing.md")]
pub mod testing {}
