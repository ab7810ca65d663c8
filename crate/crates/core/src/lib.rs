//! Simulation and measurement toolkit for networks of spin-transfer-torque
//! oscillators used as self-oscillating RF mixers.
//!
//! The pipeline runs from macrospin dynamics ([`magnetics`], [`integrator`])
//! through coupled networks ([`network`]) to spectra and phase noise
//! ([`spectral`]) and mixer figures of merit ([`mixer`]).

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod error;
pub mod integrator;
pub mod magnetics;
pub mod mixer;
pub mod network;
pub mod pool;
pub mod spectral;
pub mod stats;
pub mod trace;

pub use error::{MixerError, ParamError, SimError, SpectralError};
pub use integrator::{RngStream, Scheme, StepperConfig};
pub use magnetics::{DeviceParams, Magnetization, Vec3};
pub use trace::{OscillatorTrace, TraceSet};
