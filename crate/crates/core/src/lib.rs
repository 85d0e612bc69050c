pub mod cli;
pub mod color;
pub mod config;
pub mod filter;
pub mod mlp;
pub mod pipeline;
pub mod raster;
pub mod roi;
pub mod segment;
pub mod synth;
