//! Velocity-level pose tracking on SE(3) in the unit dual quaternion
//! representation, with online Gaussian-process compensation of unknown
//! state-dependent disturbances.
//!
//! The crate is organised as:
//!
//! * [`dq`]: quaternion / dual-quaternion algebra, pose error construction
//!   and fixed-step integration with renormalization,
//! * [`control`]: the nominal and GP-compensated velocity controllers,
//!   Lyapunov function and ultimate-bound constants,
//! * [`gp`]: exact GP regression with antipodally invariant kernels on S³
//!   and SE(3), sliding-window datasets and probabilistic error bounds,
//! * [`sim`]: seeded kinematic simulation with disturbance injection and
//!   sensor corruption,
//! * [`harness`]: episode orchestration, sliding-window metrics, summary
//!   tables and ultimate-bound verification.

pub mod control;
pub mod dq;
pub mod gp;
pub mod harness;
pub mod sim;
