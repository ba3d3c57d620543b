//! Core of the trust-elicitation experiment platform.
//!
//! Everything in this crate is pure: the series planner and session state
//! machine, the scripted per-question dialogue engine, survey validation,
//! the PCM16 WAV codec with tone-separated merging, and the statistics used
//! to analyse a collected corpus (per-subject normalization, random-intercept
//! mixed model, two-sample Kolmogorov-Smirnov, Spanish syllable counting,
//! Fleiss' kappa with a permutation test).
//!
//! The crate is `no_std` and only needs `alloc`. IO, persistence, the HTTP
//! service and the CLI live in the `trustel` companion crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod annotation;
pub mod audio;
pub mod dialogue;
pub mod protocol;
pub mod survey;

mod rng;

pub use rng::seeded_rng;
