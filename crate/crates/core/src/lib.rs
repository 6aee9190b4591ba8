//! Continuous invariance learning: learning representations whose
//! domain-index regressor gains nothing from knowing the label, with the
//! discrete-environment baselines it is compared against.

pub mod datagen;
pub mod error;
pub mod harness;
pub mod models;
pub mod ndmath;
pub mod objectives;
pub mod splitter;
pub mod theorycheck;
pub mod trainer;

pub use error::{Error, Result};
