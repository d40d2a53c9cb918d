//! Compressed structured block (CSB) sparsity for recurrent networks.
//!
//! The crate covers the whole software stack around the CSB format:
//!
//! * [`csb`]: dense and CSB matrix types, the reference CSB-MVM kernel,
//!   index-overhead metrics and the `CSB1` binary file format.
//! * [`pruner`]: the CSB projection operator, ADMM re-train/prune rounds and
//!   the progressive pruning-rate search, driven by a synthetic
//!   teacher-student regression task.
//! * [`dataflow`]: LSTM/GRU cells as primitive dataflow graphs, compiled to
//!   VLIW macro-instruction programs by ASAP list scheduling.
//! * [`scheduler`]: the micro-instruction compiler that balances kernel
//!   workloads across the PEGroup grid with torus workload sharing.
//! * [`sim`]: a cycle-level model of the CSB engine that executes micro and
//!   macro programs and reports utilization.
//! * [`suite`]: synthetic matrix suites used by the sweeps.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pin the common double-precision instantiations.

pub mod csb;
pub mod dataflow;
pub mod pruner;
pub mod scalar;
pub mod scheduler;
pub mod sim;
pub mod suite;

pub use scalar::Scalar;

pub use csb::{BlockShape, CsbError, FormatError};
pub use scheduler::{EngineConfig, SharingMode};

/// Double-precision dense matrix.
pub type DenseMatrixF64 = csb::DenseMatrix<f64>;
/// Single-precision dense matrix.
pub type DenseMatrixF32 = csb::DenseMatrix<f32>;
/// Double-precision CSB matrix (the in-memory default).
pub type CsbMatrixF64 = csb::CsbMatrix<f64>;
/// Single-precision CSB matrix (matches the on-disk value width).
pub type CsbMatrixF32 = csb::CsbMatrix<f32>;
/// Synthetic regression task in double precision.
pub type SyntheticTaskF64 = pruner::SyntheticTask<f64>;
/// Engine simulation result in double precision.
pub type SimResultF64 = sim::SimResult<f64>;
