mod adam;
mod metrics;
mod train;

pub use adam::*;
pub use metrics::*;
pub use train::*;
