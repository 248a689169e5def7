//! Monitored spin chain coupled to measured-and-reset ancillas.
//!
//! Three backends share one gate sequence ([`gates::GateSequence`]):
//! a brute-force [`dense`] oracle for small chains, a pure-state MPS engine
//! ([`mps`]) producing space-time outcome records, and a folded operator
//! evolution ([`mpo`]) giving ensemble-exact cluster probabilities and
//! autocorrelations. [`analysis`] turns both into free energies and
//! interface tensions; [`noise`] adds coupling disorder and readout errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dense;
pub mod error;
pub mod gates;
pub mod linalg;
pub mod mask;
pub mod model;
pub mod mpo;
pub mod mps;
pub mod noise;
pub mod record;
pub mod validate;

use rand::SeedableRng;

pub use error::{Error, Result};
pub use gates::GateSequence;
pub use mask::{AncillaOp, Mask};
pub use model::{ModelParams, SiteCouplings};
pub use mps::TruncationPolicy;
pub use record::TrajectoryRecord;

/// Random stream used by every sampler.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Seed of the `i`-th trajectory of a batch.
pub fn derived_seed(base: u64, i: u64) -> u64 {
    base ^ i
}
