//! Policy search guided by a constrained trajectory optimizer, where the
//! learner minimizes the control Hamiltonian instead of a distance to the
//! demonstrated controls.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! files, the command line or a clock lives in the `mpcnet` companion crate.
//!
//! Module map:
//!
//! * [`systems`]: dynamics, constraints, quadratic cost, relaxed barrier,
//!   phase encoding and the three benchmark systems.
//! * [`solver`]: equality-constrained iLQR producing nominal trajectories,
//!   feedback gains, a quadratic value model and Lagrange multipliers.
//! * [`hamiltonian`]: pointwise Hamiltonian evaluation, minimization and the
//!   optimality-gap certificate.
//! * [`replay_buffer`]: FIFO sample store with uniform batch draws.
//! * [`policy`]: mixture-of-experts and MLP policies, backpropagation, AMSGrad.
//! * [`trainer`]: the guided training loop and closed-loop evaluation.

#![no_std]
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod policy;
pub mod replay_buffer;
pub mod solver;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
