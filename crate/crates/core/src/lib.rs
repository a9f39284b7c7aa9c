pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod layers;
pub mod nlu;
pub mod params;
pub mod pipeline;
pub mod rewards;
pub mod ssg;
pub mod synthetic;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
