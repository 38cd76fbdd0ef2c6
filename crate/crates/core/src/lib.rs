//! Design and simulation of laser-free two-qubit gates driven by a
//! symmetric-detuned microwave pair and an oscillating field gradient.

pub mod bessel;
pub mod config;
pub mod design;
pub mod drive;
pub mod error;
pub mod experiments;
pub mod propagate;
pub mod space;

pub use error::{Error, Result};
pub use config::RunConfig;
pub use design::{GateMode, GateParams};
pub use experiments::{run_gate, Frame, GateResult, SequenceSpec, Table};
pub use space::SpaceDescriptor;
