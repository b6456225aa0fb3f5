//! Traversability estimation: dataset handling, a synthetic scene generator,
//! the regression network with its safety loss and domain adaptation, training,
//! evaluation and a simple reactive navigation layer.

pub mod dataset;
pub mod error;
pub mod losses;
pub mod eval;
pub mod model;
pub mod nav;
pub mod optim;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{ImageFrame, PoseStamped, SectionLayout, TraversabilityVector};
