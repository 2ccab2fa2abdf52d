#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ddigraph;
pub mod encoder;
pub mod error;
pub mod fdcheck;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod vgae;

pub use error::{Error, Result};
pub use params::{Bound, ParamId, ParamStore, Parameter};
pub use tape::{BackwardStats, Segments, Tape, Var};
pub use tensor::Tensor;

