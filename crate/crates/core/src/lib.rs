//! Amplitude x PSK unitary constellations for non-coherent SIMO block-fading
//! links.
//!
//! The crate covers the whole chain:
//!
//! - [`constellation`]: bit allocations, codebooks, Gray-labelled encoding,
//!   chordal distance and the Chernoff pairwise-error bound.
//! - [`distance`]: closed-form and enumerated distance analytics, including
//!   the critical phase-difference set and the packing upper bound.
//! - [`designer`]: successive convex approximation of the max-min amplitude
//!   design and the bit-allocation search.
//! - [`detect`]: exhaustive ML, the iterative amplitude/phase detector and the
//!   reliability-sorted decision-feedback phase detectors.
//! - [`sim`]: seeded, order-independent Monte Carlo link simulation.
//! - [`cli`]: file formats and the `ucon` command-line front end.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the default
//! `parallel` feature they run on rayon, without it they run sequentially and
//! produce identical results.

pub mod cli;
pub mod constellation;
pub mod designer;
pub mod detect;
pub mod distance;
pub mod error;
pub mod exec;
pub mod sim;

pub use constellation::{
    AmplitudeSet, BitAllocation, Codebook, DesignMetadata, MessageBits, UnitarySignal,
};
pub use error::{Error, Result};
pub use exec::Execution;
