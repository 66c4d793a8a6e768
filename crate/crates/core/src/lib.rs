//! Small-noise diffusions, their exit problem from the basin of a stable
//! attractor, and the Freidlin–Wentzell quantities that govern it.
//!
//! The crate is `no_std` with `alloc`. File formats, the CLI and the
//! thread-pool executor live in the companion `quasiexit` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod action;
pub mod domain;
pub mod error;
pub mod exec;
pub mod field;
pub mod mv;
pub mod numeric;
pub mod perturb;
pub mod presets;
pub mod rng;
pub mod sde;
pub mod stats;

pub use domain::{check_assumptions, AssumptionReport, BoundaryPoint, Domain, DomainKind, ProbeConfig};
pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use field::{CoefficientField, FnField, ScalarField};
pub use rng::{RngStream, SeedTag};
pub use sde::{integrate_flow, simulate_path, simulate_until_exit, IntegratorConfig, PathSample};
pub use stats::{ExitRecord, ExitStatus};
