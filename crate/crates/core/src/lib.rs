pub mod dsm;
pub mod eval;
pub mod geometry;
pub mod matching;
pub mod pipeline;
pub mod raster;
pub mod rectification;
mod stats;
pub mod synthetic;
