//! Quaternion and dual-quaternion algebra.
//!
//! Storage order is `(vector, scalar)` throughout, matching the block-matrix
//! form of the Hamilton product used everywhere else in this crate; every
//! flat-array boundary (`[f64; 4]`, `[f64; 8]`) uses the same order.
//!
//! Unit dual quaternions encode poses: the principal part is the attitude
//! quaternion, the dual part is `½ p̃ ∘ P(Q)` with `p` the inertial position.
//! Constructors never canonicalize the quaternion sign; `q` and `-q` are both
//! accepted representatives of the same rotation and the controller deals
//! with the double cover via its `sign(δq₀)` factor.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm tolerance for unit-type constructors.
pub const UNIT_TOL: f64 = 1e-9;
/// Largest admissible integration step.
pub const MAX_STEP: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum DqError {
    #[error("input violates the unit-norm invariant (residual {0:.3e})")]
    NonUnitInput(f64),
    #[error("integration step {0} exceeds the maximum {MAX_STEP}")]
    StepTooLarge(f64),
    #[error("time {0} outside [0, {1}]")]
    OutOfRange(f64, f64),
}

/// General quaternion `(v, s)` with vector part `v` and scalar part `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub v: Vector3<f64>,
    pub s: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        v: Vector3::new(0.0, 0.0, 0.0),
        s: 1.0,
    };
    pub const ZERO: Quaternion = Quaternion {
        v: Vector3::new(0.0, 0.0, 0.0),
        s: 0.0,
    };

    pub fn new(v: Vector3<f64>, s: f64) -> Self {
        Quaternion { v, s }
    }

    /// Hamilton product `self ∘ rhs`:
    /// vector part `v×v' + s v' + s' v`, scalar part `s s' − v·v'`.
    pub fn mul(&self, rhs: &Quaternion) -> Quaternion {
        Quaternion {
            v: self.v.cross(&rhs.v) + rhs.v * self.s + self.v * rhs.s,
            s: self.s * rhs.s - self.v.dot(&rhs.v),
        }
    }

    /// Conjugate `(−v, s)`.
    pub fn conj(&self) -> Quaternion {
        Quaternion { v: -self.v, s: self.s }
    }

    pub fn norm(&self) -> f64 {
        (self.v.norm_squared() + self.s * self.s).sqrt()
    }

    pub fn scale(&self, k: f64) -> Quaternion {
        Quaternion { v: self.v * k, s: self.s * k }
    }

    pub fn add(&self, rhs: &Quaternion) -> Quaternion {
        Quaternion { v: self.v + rhs.v, s: self.s + rhs.s }
    }

    pub fn sub(&self, rhs: &Quaternion) -> Quaternion {
        Quaternion { v: self.v - rhs.v, s: self.s - rhs.s }
    }

    pub fn neg(&self) -> Quaternion {
        self.scale(-1.0)
    }

    /// Euclidean inner product on R⁴.
    pub fn dot(&self, rhs: &Quaternion) -> f64 {
        self.v.dot(&rhs.v) + self.s * rhs.s
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.v.x, self.v.y, self.v.z, self.s]
    }

    pub fn from_array(a: [f64; 4]) -> Quaternion {
        Quaternion::new(Vector3::new(a[0], a[1], a[2]), a[3])
    }
}

/// Quaternion with zero scalar part, the image of R³ in H.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureQuaternion(pub Vector3<f64>);

impl PureQuaternion {
    pub fn as_quat(&self) -> Quaternion {
        Quaternion::new(self.0, 0.0)
    }
}

/// Unit-norm quaternion; `|‖q‖ − 1| ≤ 1e−9` is enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion(Quaternion);

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion(Quaternion::IDENTITY);

    pub fn new(q: Quaternion) -> Result<Self, DqError> {
        let r = (q.norm() - 1.0).abs();
        if r > UNIT_TOL {
            return Err(DqError::NonUnitInput(r));
        }
        Ok(UnitQuaternion(q))
    }

    /// Rescale to exact unit norm. Panics on the zero quaternion.
    pub fn renormalized(q: Quaternion) -> Self {
        let n = q.norm();
        assert!(n > 0.0, "cannot normalize a zero quaternion");
        UnitQuaternion(q.scale(1.0 / n))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return UnitQuaternion::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        UnitQuaternion(Quaternion::new(axis * (s / n), c))
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), yaw)
    }

    pub fn as_quat(&self) -> &Quaternion {
        &self.0
    }

    pub fn conj(&self) -> UnitQuaternion {
        UnitQuaternion(self.0.conj())
    }

    pub fn neg(&self) -> UnitQuaternion {
        UnitQuaternion(self.0.neg())
    }

    pub fn mul(&self, rhs: &UnitQuaternion) -> UnitQuaternion {
        UnitQuaternion(self.0.mul(&rhs.0))
    }

    /// Sandwich rotation `q ∘ x̃ ∘ q*`.
    pub fn rotate(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let p = Quaternion::new(*x, 0.0);
        self.0.mul(&p).mul(&self.0.conj()).v
    }

    /// Explicit rotation matrix `(q₀² − q⃗ᵀq⃗)I + 2 q⃗q⃗ᵀ + 2 q₀ S(q⃗)`.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let q = &self.0.v;
        let q0 = self.0.s;
        Matrix3::identity() * (q0 * q0 - q.norm_squared())
            + q * q.transpose() * 2.0
            + skew(q) * (2.0 * q0)
    }

    /// Rotation vector of the shortest rotation taking the identity to `self`.
    pub fn log_vec(&self) -> Vector3<f64> {
        let q = if self.0.s < 0.0 { self.0.neg() } else { self.0 };
        let vn = q.v.norm();
        if vn < 1e-15 {
            return q.v * 2.0;
        }
        q.v * (2.0 * vn.atan2(q.s) / vn)
    }
}

/// Skew-symmetric matrix `S(v)` with `S(v) w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// General dual quaternion `real + ε dual`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualQuaternion {
    pub real: Quaternion,
    pub dual: Quaternion,
}

impl DualQuaternion {
    pub const IDENTITY: DualQuaternion = DualQuaternion {
        real: Quaternion::IDENTITY,
        dual: Quaternion::ZERO,
    };
    pub const ZERO: DualQuaternion = DualQuaternion {
        real: Quaternion::ZERO,
        dual: Quaternion::ZERO,
    };

    pub fn new(real: Quaternion, dual: Quaternion) -> Self {
        DualQuaternion { real, dual }
    }

    /// Product with `ε² = 0`:
    /// `real = A.real ∘ B.real`, `dual = A.real ∘ B.dual + A.dual ∘ B.real`.
    pub fn mul(&self, rhs: &DualQuaternion) -> DualQuaternion {
        DualQuaternion {
            real: self.real.mul(&rhs.real),
            dual: self.real.mul(&rhs.dual).add(&self.dual.mul(&rhs.real)),
        }
    }

    pub fn conj(&self) -> DualQuaternion {
        DualQuaternion { real: self.real.conj(), dual: self.dual.conj() }
    }

    pub fn scale(&self, k: f64) -> DualQuaternion {
        DualQuaternion { real: self.real.scale(k), dual: self.dual.scale(k) }
    }

    pub fn add(&self, rhs: &DualQuaternion) -> DualQuaternion {
        DualQuaternion { real: self.real.add(&rhs.real), dual: self.dual.add(&rhs.dual) }
    }

    pub fn sub(&self, rhs: &DualQuaternion) -> DualQuaternion {
        DualQuaternion { real: self.real.sub(&rhs.real), dual: self.dual.sub(&rhs.dual) }
    }

    pub fn to_array(&self) -> [f64; 8] {
        let r = self.real.to_array();
        let d = self.dual.to_array();
        [r[0], r[1], r[2], r[3], d[0], d[1], d[2], d[3]]
    }

    pub fn from_array(a: [f64; 8]) -> DualQuaternion {
        DualQuaternion::new(
            Quaternion::from_array([a[0], a[1], a[2], a[3]]),
            Quaternion::from_array([a[4], a[5], a[6], a[7]]),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Unit dual quaternion: `‖P(Q)‖ = 1` and `P∘D* + D∘P* = 0` within 1e−9.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitDualQuaternion(DualQuaternion);

impl UnitDualQuaternion {
    pub const IDENTITY: UnitDualQuaternion = UnitDualQuaternion(DualQuaternion::IDENTITY);

    pub fn new(q: DualQuaternion) -> Result<Self, DqError> {
        let r = unit_residual(&q);
        if r > UNIT_TOL {
            return Err(DqError::NonUnitInput(r));
        }
        Ok(UnitDualQuaternion(q))
    }

    /// Project onto the unit group: normalize the real part, then remove the
    /// component of the dual part violating `P∘D* + D∘P* = 0` via
    /// `D ← D − ½ (P∘D* + D∘P*) ∘ P`.
    pub fn renormalized(q: DualQuaternion) -> Self {
        let real = UnitQuaternion::renormalized(q.real).0;
        let defect = real.mul(&q.dual.conj()).add(&q.dual.mul(&real.conj()));
        let dual = q.dual.sub(&defect.scale(0.5).mul(&real));
        UnitDualQuaternion(DualQuaternion::new(real, dual))
    }

    pub fn as_dq(&self) -> &DualQuaternion {
        &self.0
    }

    pub fn principal(&self) -> UnitQuaternion {
        UnitQuaternion(self.0.real)
    }

    pub fn dual(&self) -> &Quaternion {
        &self.0.dual
    }

    pub fn conj(&self) -> UnitDualQuaternion {
        UnitDualQuaternion(self.0.conj())
    }

    pub fn neg(&self) -> UnitDualQuaternion {
        UnitDualQuaternion(self.0.scale(-1.0))
    }

    pub fn mul(&self, rhs: &UnitDualQuaternion) -> UnitDualQuaternion {
        UnitDualQuaternion(self.0.mul(&rhs.0))
    }

    pub fn to_array(&self) -> [f64; 8] {
        self.0.to_array()
    }
}

/// Deviation of a dual quaternion from the unit-group invariants: max of the
/// real-part norm defect and the largest component of `P∘D* + D∘P*`.
pub fn unit_residual(q: &DualQuaternion) -> f64 {
    let norm_defect = (q.real.norm() - 1.0).abs();
    let cross = q.real.mul(&q.dual.conj()).add(&q.dual.mul(&q.real.conj()));
    norm_defect
        .max(cross.s.abs())
        .max(cross.v.amax())
}

/// Attitude (unit quaternion) plus inertial-frame position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub attitude: UnitQuaternion,
    pub position: Vector3<f64>,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        attitude: UnitQuaternion::IDENTITY,
        position: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(attitude: UnitQuaternion, position: Vector3<f64>) -> Self {
        Pose { attitude, position }
    }
}

/// Body-frame angular velocity (rad/s) and inertial-frame linear velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub vel: Vector3<f64>,
}

impl Twist {
    pub const ZERO: Twist = Twist {
        omega: Vector3::new(0.0, 0.0, 0.0),
        vel: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(omega: Vector3<f64>, vel: Vector3<f64>) -> Self {
        Twist { omega, vel }
    }

    pub fn add(&self, rhs: &Twist) -> Twist {
        Twist { omega: self.omega + rhs.omega, vel: self.vel + rhs.vel }
    }
}

/// `Q = q + ε ½ (p̃ ∘ q)`.
pub fn dq_from_pose(pose: &Pose) -> UnitDualQuaternion {
    let q = pose.attitude.as_quat();
    let p = Quaternion::new(pose.position, 0.0);
    UnitDualQuaternion(DualQuaternion::new(*q, p.mul(q).scale(0.5)))
}

/// Recover `(q, p)` via `p̃ = 2 D(Q) ∘ P(Q)*`.
pub fn dq_to_pose(q: &UnitDualQuaternion) -> Pose {
    let p = q.dual().mul(&q.0.real.conj()).scale(2.0);
    Pose {
        attitude: q.principal(),
        position: p.v,
    }
}

/// Twist dual quaternion `Ω` with `P(Ω) = ω̃` and `D(Ω) = P(Q)* ∘ ṽ ∘ P(Q)`.
pub fn twist_dq(q: &UnitDualQuaternion, tw: &Twist) -> DualQuaternion {
    let qr = q.0.real;
    let v = Quaternion::new(tw.vel, 0.0);
    DualQuaternion::new(Quaternion::new(tw.omega, 0.0), qr.conj().mul(&v).mul(&qr))
}

/// Pose kinematics `Q̇ = ½ Q ∘ Ω(ω̃, ṽ)`.
pub fn dq_derivative(q: &UnitDualQuaternion, tw: &Twist) -> DualQuaternion {
    q.0.mul(&twist_dq(q, tw)).scale(0.5)
}

/// Pose error `δQ = Q_d* ∘ Q` with its cached components.
///
/// `dp_inertial` is `p − p_d`; `dp_body` is the same error rotated into the
/// desired frame, `q_d* ∘ δp̃ ∘ q_d`. The desired attitude is kept so the
/// error dynamics can be evaluated without re-supplying it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub dq: UnitDualQuaternion,
    pub dq_vec: Vector3<f64>,
    pub dq0: f64,
    pub dp_inertial: Vector3<f64>,
    pub dp_body: Vector3<f64>,
    pub q_d: UnitQuaternion,
}

impl PoseError {
    pub fn identity() -> PoseError {
        PoseError {
            dq: UnitDualQuaternion::IDENTITY,
            dq_vec: Vector3::zeros(),
            dq0: 1.0,
            dp_inertial: Vector3::zeros(),
            dp_body: Vector3::zeros(),
            q_d: UnitQuaternion::IDENTITY,
        }
    }

    /// Attitude error quaternion `δq̄ = q_d* ∘ q`.
    pub fn attitude_error(&self) -> UnitQuaternion {
        self.dq.principal()
    }

    /// Rebuild the component cache from an error dual quaternion and the
    /// desired attitude it was measured against.
    pub fn from_error_dq(dq: UnitDualQuaternion, q_d: UnitQuaternion) -> PoseError {
        let dbar = dq.principal();
        // δp̃ᵇ = 2 D(δQ) ∘ δq̄*
        let dp_body = dq.dual().mul(&dbar.as_quat().conj()).scale(2.0).v;
        let dp_inertial = q_d.rotate(&dp_body);
        PoseError {
            dq,
            dq_vec: dbar.as_quat().v,
            dq0: dbar.as_quat().s,
            dp_inertial,
            dp_body,
            q_d,
        }
    }
}

/// `δQ = Q_d* ∘ Q`.
pub fn pose_error(q_d: &UnitDualQuaternion, q: &UnitDualQuaternion) -> PoseError {
    let dq = q_d.conj().mul(q);
    PoseError::from_error_dq(dq, q_d.principal())
}

/// Error kinematics `δQ̇ = ½ δQ ∘ δΩ` with
/// `P(δΩ) = ω̃ − δq̄* ∘ ω̃_d ∘ δq̄` and
/// `D(δΩ) = δq̄* ∘ (d/dt δp̃ᵇ) ∘ δq̄`,
/// where `d/dt δp̃ᵇ = S(δpᵇ) ω_d + q_d* ∘ (ṽ − ṽ_d) ∘ q_d`.
pub fn error_derivative(err: &PoseError, tw: &Twist, tw_d: &Twist) -> DualQuaternion {
    err.dq.0.mul(&error_twist(err, tw, tw_d)).scale(0.5)
}

/// The error twist `δΩ` of the error kinematics.
pub fn error_twist(err: &PoseError, tw: &Twist, tw_d: &Twist) -> DualQuaternion {
    let dbar = err.attitude_error();
    let w_d = Quaternion::new(tw_d.omega, 0.0);
    let p_omega = Quaternion::new(tw.omega, 0.0)
        .sub(&dbar.as_quat().conj().mul(&w_d).mul(dbar.as_quat()));
    let dp_body_dot =
        err.dp_body.cross(&tw_d.omega) + err.q_d.conj().rotate(&(tw.vel - tw_d.vel));
    let d_omega = dbar
        .conj()
        .as_quat()
        .mul(&Quaternion::new(dp_body_dot, 0.0))
        .mul(dbar.as_quat());
    DualQuaternion::new(p_omega, d_omega)
}

/// Inertial-frame form of `D(δΩ)`:
/// `δq̄* ∘ (S(δpᵇ) ω_d) ∘ δq̄ + q* ∘ δṽ ∘ q` with `q = q_d ∘ δq̄`.
/// Algebraically equal to the body-frame form used by [`error_twist`].
pub fn error_twist_dual_inertial(err: &PoseError, tw: &Twist, tw_d: &Twist) -> Quaternion {
    let dbar = err.attitude_error();
    let coriolis = skew(&err.dp_body) * tw_d.omega;
    let term1 = dbar
        .conj()
        .as_quat()
        .mul(&Quaternion::new(coriolis, 0.0))
        .mul(dbar.as_quat());
    let q = err.q_d.mul(&dbar);
    let term2 = Quaternion::new(q.conj().rotate(&(tw.vel - tw_d.vel)), 0.0);
    term1.add(&term2)
}

/// Fourth-order Runge-Kutta step of `Q̇ = ½ Q ∘ Ω` with the twist held
/// constant, followed by projection back onto the unit group.
pub fn integrate_step(
    q: &UnitDualQuaternion,
    tw: &Twist,
    dt: f64,
) -> Result<UnitDualQuaternion, DqError> {
    integrate_step_fn(q, |_| *tw, 0.0, dt)
}

/// RK4 step of `Q̇ = ½ Q ∘ Ω(tw(t))` sampling a time-varying twist at the
/// stage times, followed by projection.
pub fn integrate_step_fn(
    q: &UnitDualQuaternion,
    tw: impl Fn(f64) -> Twist,
    t: f64,
    dt: f64,
) -> Result<UnitDualQuaternion, DqError> {
    if !(dt > 0.0) {
        return Err(DqError::StepTooLarge(dt));
    }
    if dt > MAX_STEP {
        return Err(DqError::StepTooLarge(dt));
    }
    let deriv = |state: &DualQuaternion, tau: f64| -> DualQuaternion {
        let omega = twist_dq_general(state, &tw(tau));
        state.mul(&omega).scale(0.5)
    };
    let y0 = q.0;
    let k1 = deriv(&y0, t);
    let k2 = deriv(&y0.add(&k1.scale(dt / 2.0)), t + dt / 2.0);
    let k3 = deriv(&y0.add(&k2.scale(dt / 2.0)), t + dt / 2.0);
    let k4 = deriv(&y0.add(&k3.scale(dt)), t + dt);
    let sum = k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4);
    Ok(UnitDualQuaternion::renormalized(y0.add(&sum.scale(dt / 6.0))))
}

// Same construction as `twist_dq` but for intermediate RK4 states whose real
// part is only approximately unit; the conjugation uses the raw real part.
fn twist_dq_general(q: &DualQuaternion, tw: &Twist) -> DualQuaternion {
    let v = Quaternion::new(tw.vel, 0.0);
    DualQuaternion::new(
        Quaternion::new(tw.omega, 0.0),
        q.real.conj().mul(&v).mul(&q.real),
    )
}
