//! Hybrid quantum-classical compressive ghost-imaging reconstruction.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numerical
//! piece of the pipeline:
//!
//! * [`qstate`]: dense statevector / density-matrix kernels and Kraus channels
//! * [`qcircuit`]: parameterized encoders + variational layers, feature readout
//! * [`qgrad`]: parameter-shift, adjoint and finite-difference jacobians
//! * [`nn`]: the fixed convolutional decoder with hand-written reverse mode and Adam
//! * [`imaging`]: ghost-imaging forward model, baselines, TV, PSNR/SSIM
//! * [`qcsgi`]: the hybrid model, physics loss, training loop, gradient-variance study
//!
//! File formats, the CLI and wall-clock timing live in the `ghostqc` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod imaging;
pub mod math;
pub mod nn;
pub mod qcircuit;
pub mod qcsgi;
pub mod qgrad;
pub mod qstate;
pub mod rng;

pub use error::{Error, Result};

/// Order-preserving map, parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> alloc::vec::Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<R>(n: usize, f: impl Fn(usize) -> R) -> alloc::vec::Vec<R> {
    (0..n).map(f).collect()
}
