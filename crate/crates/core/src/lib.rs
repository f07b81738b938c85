pub mod benchmark;
pub mod deadline;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod fidelity;
pub mod forecasters;
pub mod metalearn;
pub mod metrics;
pub mod pipeline;
pub mod series;
pub mod space;
pub mod surrogate;
pub mod synth;
pub mod transforms;

pub use error::{Error, Result};
