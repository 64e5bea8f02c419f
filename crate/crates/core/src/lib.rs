pub mod camera;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod skeleton;
pub mod synth;
pub mod tas;
pub mod train;

pub use error::{Error, Result};
