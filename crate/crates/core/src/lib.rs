//! Forecasting the ES and VX futures term structures with graph-coupled
//! recurrent networks, built from Level-1 tick data.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod features;
pub mod graphbuild;
pub mod losses;
pub mod marketdata;
pub mod model;
pub mod pipeline;
pub mod synthgen;

pub use error::{Error, Result};
