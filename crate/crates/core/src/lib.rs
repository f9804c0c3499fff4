//! Restricted maximum likelihood for the random-regressions mixed model, and
//! a laboratory for studying when its maximizer lands on the boundary.

pub mod error;
pub mod experiments;
pub mod invivo;
pub mod io;
pub mod model_system;
pub mod predictor;
pub mod reml;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/predictor.md")]
    mod predictor {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/invivo.md")]
    mod invivo {}
}
