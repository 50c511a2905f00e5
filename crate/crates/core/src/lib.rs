pub mod cli;
pub mod error;
pub mod flow;
pub mod grouping;
pub mod model_select;
pub mod optimizer;
pub mod simulate;
pub mod survival;

pub use error::{Error, Result};
