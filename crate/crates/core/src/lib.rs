pub mod accountant;
pub mod data;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/mechanism.md")]
    pub mod mechanism {}
    #[doc = include_str!("../../../book/src/accounting.md")]
    pub mod accounting {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
