pub mod analysis;
pub mod dataset;
pub mod encoder;
pub mod metric;
pub mod stats;
