//! Sequence-level 3D multi-object tracking: a tracking-by-detection loop
//! over object point histories, a learned sequence-to-sequence refinement
//! network, training-data generation, a synthetic scene generator, and
//! CLEAR/AMOTA evaluation.

mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod ssr;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
