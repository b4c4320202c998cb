//! Velocity-level pose controllers and the ultimate-bound machinery.
//!
//! The nominal controller tracks a reference twist while driving the pose
//! error to the identity; the learned variant subtracts GP disturbance
//! estimates from the nominal commands. The `sign(δq₀)` factor (with
//! `sign(0) = 1`) selects the short rotation and makes the angular command
//! invariant under `δq̄ → −δq̄`.

use crate::dq::PoseError;
use crate::dq::Twist;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("gain matrix not symmetric (max asymmetry {0:.3e})")]
    AsymmetricGain(f64),
    #[error("gain matrix not positive definite enough (min eigenvalue {found:.3e}, required {required:.3e})")]
    GainTooSmall { found: f64, required: f64 },
    #[error("confidence level {0} outside (0, 1)")]
    InvalidConfidence(f64),
    #[error("negative bound constant {0}")]
    NegativeConstant(f64),
}

/// Symmetric positive definite feedback gains with certified lower bounds.
///
/// `k_omega ⪰ alpha_omega I` and `k_v ⪰ alpha_v I` are checked at
/// construction via the minimum eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub k_omega: Matrix3<f64>,
    pub k_v: Matrix3<f64>,
    pub alpha_omega: f64,
    pub alpha_v: f64,
}

const SYM_TOL: f64 = 1e-12;

fn check_gain(k: &Matrix3<f64>, alpha: f64) -> Result<(), ControlError> {
    let asym = (k - k.transpose()).abs().max();
    if asym > SYM_TOL {
        return Err(ControlError::AsymmetricGain(asym));
    }
    let eigs = k.symmetric_eigenvalues();
    let min = eigs.min();
    // small slack so alpha equal to the exact eigenvalue is accepted
    if !(alpha > 0.0) || min < alpha - 1e-12 {
        return Err(ControlError::GainTooSmall { found: min, required: alpha });
    }
    Ok(())
}

impl GainSchedule {
    pub fn new(
        k_omega: Matrix3<f64>,
        k_v: Matrix3<f64>,
        alpha_omega: f64,
        alpha_v: f64,
    ) -> Result<Self, ControlError> {
        check_gain(&k_omega, alpha_omega)?;
        check_gain(&k_v, alpha_v)?;
        Ok(GainSchedule { k_omega, k_v, alpha_omega, alpha_v })
    }

    /// Isotropic gains `k_omega = kw I`, `k_v = kv I`.
    pub fn isotropic(kw: f64, kv: f64) -> Result<Self, ControlError> {
        Self::new(
            Matrix3::identity() * kw,
            Matrix3::identity() * kv,
            kw,
            kv,
        )
    }
}

/// Hook for state-dependent gain schedules. The provided constant schedule
/// is the only one used here; the trait keeps the signature open.
pub trait GainProvider {
    fn gains_at(&self, err: &PoseError) -> GainSchedule;
}

impl GainProvider for GainSchedule {
    fn gains_at(&self, _err: &PoseError) -> GainSchedule {
        *self
    }
}

/// Commanded body angular velocity and inertial linear velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub omega_cmd: Vector3<f64>,
    pub v_cmd: Vector3<f64>,
}

impl VelocityCommand {
    pub fn as_twist(&self) -> Twist {
        Twist::new(self.omega_cmd, self.v_cmd)
    }
}

fn sign0(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Tracking controller:
/// `ω = vec(δq̄* ∘ ω̃_d ∘ δq̄) − sign(δq₀) K_ω δq⃗`,
/// `v = v_d − K_v δp` with `δp` the inertial position error.
pub fn nominal_control(err: &PoseError, tw_d: &Twist, gains: &GainSchedule) -> VelocityCommand {
    let dbar = err.attitude_error();
    let omega_ff = dbar.conj().rotate(&tw_d.omega);
    VelocityCommand {
        omega_cmd: omega_ff - gains.k_omega * err.dq_vec * sign0(err.dq0),
        v_cmd: tw_d.vel - gains.k_v * err.dp_inertial,
    }
}

/// GP-compensated controller: subtracts the disturbance estimates from the
/// nominal commands.
pub fn learned_control(
    nominal: &VelocityCommand,
    mu_omega: &Vector3<f64>,
    mu_v: &Vector3<f64>,
) -> VelocityCommand {
    VelocityCommand {
        omega_cmd: nominal.omega_cmd - mu_omega,
        v_cmd: nominal.v_cmd - mu_v,
    }
}

/// `V = ‖δq⃗‖² + ½‖δp‖²`.
pub fn lyapunov_v(err: &PoseError) -> f64 {
    err.dq_vec.norm_squared() + 0.5 * err.dp_inertial.norm_squared()
}

/// Analytic derivative of `V` along the nominal closed loop:
/// `V̇ = −|δq₀| δq⃗ᵀ K_ω δq⃗ − δpᵀ K_v δp`.
pub fn lyapunov_v_dot(err: &PoseError, gains: &GainSchedule) -> f64 {
    -err.dq0.abs() * (err.dq_vec.dot(&(gains.k_omega * err.dq_vec)))
        - err.dp_inertial.dot(&(gains.k_v * err.dp_inertial))
}

/// Constants of the probabilistic ultimate bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UltimateBound {
    pub c_omega: f64,
    pub c_v: f64,
    pub eps0: f64,
    pub m: f64,
    pub gamma: f64,
}

/// Build the ultimate bound from the worst-case disturbance-estimate error
/// constants. `eps0 = (c_omega + c_v)/α_n` with `α_n = ½ min(α_ω, α_v)`;
/// `M = max V` over the set `{|δq₀|‖δq⃗‖² + ‖δp‖² ≤ eps0}` restricted to the
/// unit sphere `δq₀² + ‖δq⃗‖² = 1`; `gamma = min(γ_ω, γ_v)`.
pub fn ultimate_bound(
    c_omega: f64,
    c_v: f64,
    gains: &GainSchedule,
    gamma_omega: f64,
    gamma_v: f64,
) -> Result<UltimateBound, ControlError> {
    for g in [gamma_omega, gamma_v] {
        if !(g > 0.0 && g <= 1.0) {
            return Err(ControlError::InvalidConfidence(g));
        }
    }
    for c in [c_omega, c_v] {
        if !(c >= 0.0) {
            return Err(ControlError::NegativeConstant(c));
        }
    }
    let alpha_n = 0.5 * gains.alpha_omega.min(gains.alpha_v);
    let eps0 = (c_omega + c_v) / alpha_n;
    Ok(UltimateBound {
        c_omega,
        c_v,
        eps0,
        m: level_set_max_v(eps0),
        gamma: gamma_omega.min(gamma_v),
    })
}

/// Maximum of `V = u² + ½ r²` over the slice
/// `{ |δq₀| u² + r² ≤ eps0, δq₀² + u² = 1 }` with `u = ‖δq⃗‖ ∈ [0, 1]`.
///
/// For fixed `u` the constraint allows `r² = eps0 − √(1−u²) u²` when that is
/// nonnegative, otherwise the slice at this `u` is empty. A 1e−3 grid over
/// `u` is refined locally around the best cell. For `eps0 = 0` only `u = 0`
/// (with `r = 0`) and `u = 1` survive; the reachable disturbance-free slice
/// is `u = 0`, so `M = 0` is returned in that case.
pub fn level_set_max_v(eps0: f64) -> f64 {
    if eps0 <= 0.0 {
        return 0.0;
    }
    let v_at = |u: f64| -> f64 {
        let r2 = eps0 - (1.0 - u * u).sqrt() * u * u;
        if r2 < 0.0 {
            f64::NEG_INFINITY
        } else {
            u * u + 0.5 * r2
        }
    };
    let coarse = 1000usize;
    let mut best_u = 0.0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=coarse {
        let u = i as f64 / coarse as f64;
        let v = v_at(u);
        if v > best {
            best = v;
            best_u = u;
        }
    }
    // local refinement around the best coarse cell
    let mut lo = (best_u - 2e-3).max(0.0);
    let mut hi = (best_u + 2e-3).min(1.0);
    for _ in 0..6 {
        let n = 100usize;
        let mut bu = lo;
        let mut bv = f64::NEG_INFINITY;
        for i in 0..=n {
            let u = lo + (hi - lo) * i as f64 / n as f64;
            let v = v_at(u);
            if v > bv {
                bv = v;
                bu = u;
            }
        }
        best = best.max(bv);
        let w = (hi - lo) / n as f64;
        lo = (bu - 2.0 * w).max(0.0);
        hi = (bu + 2.0 * w).min(1.0);
    }
    best
}
