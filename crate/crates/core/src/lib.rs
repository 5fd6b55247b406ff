pub mod artifact;
pub mod cli;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod fusion;
pub mod gin;
pub mod graph;
pub mod io;
pub mod model;
pub mod numcore;
pub mod params;
pub mod pipeline;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
