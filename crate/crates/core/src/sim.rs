//! Seeded kinematic simulation: reference trajectories, disturbance
//! injection and sensor corruption.
//!
//! Everything downstream of a fixed seed is deterministic; an episode is a
//! pure function of (config, seed). The RNG is ChaCha8, chosen for stable
//! cross-platform streams.

use crate::control::VelocityCommand;
use crate::dq::{
    dq_from_pose, integrate_step, DqError, Pose, Twist, UnitDualQuaternion, UnitQuaternion,
};
use nalgebra::{Vector2, Vector3};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Horizontal speed profile along the reference path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedProfile {
    Constant { speed: f64 },
    LinearlyDecreasing { v0: f64, v1: f64 },
}

impl SpeedProfile {
    /// Speed at time `t` of a `duration`-long episode.
    pub fn speed(&self, t: f64, duration: f64) -> f64 {
        match self {
            SpeedProfile::Constant { speed } => *speed,
            SpeedProfile::LinearlyDecreasing { v0, v1 } => v0 + (v1 - v0) * t / duration,
        }
    }

    fn accel(&self, duration: f64) -> f64 {
        match self {
            SpeedProfile::Constant { .. } => 0.0,
            SpeedProfile::LinearlyDecreasing { v0, v1 } => (v1 - v0) / duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryShape {
    Lemniscate,
    Circle,
    Spiral,
}

/// Closed-form reference path with a parameterized horizontal speed.
///
/// Shapes (all at height `base_height`, horizontal curve parameter θ):
/// lemniscate `(A sin θ, A sin θ cos θ)`, circle `(A cos θ, A sin θ)`,
/// spiral = circle plus a constant climb at `climb_rate`. The attitude is
/// yaw-only, aligned with the horizontal velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub shape: TrajectoryShape,
    pub amplitude: f64,
    pub base_height: f64,
    pub duration: f64,
    pub speed_profile: SpeedProfile,
    /// Vertical speed for the spiral shape; ignored otherwise.
    pub climb_rate: f64,
}

impl ReferenceTrajectory {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0) {
            return Err(format!("duration {} must be positive", self.duration));
        }
        if !(self.amplitude > 0.0) {
            return Err(format!("amplitude {} must be positive", self.amplitude));
        }
        if let SpeedProfile::LinearlyDecreasing { v0, v1 } = self.speed_profile {
            if !(v0 >= v1 && v1 > 0.0) {
                return Err(format!("decreasing profile needs v0 >= v1 > 0, got {v0}, {v1}"));
            }
        }
        if let SpeedProfile::Constant { speed } = self.speed_profile {
            if !(speed > 0.0) {
                return Err(format!("speed {speed} must be positive"));
            }
        }
        Ok(())
    }

    /// Horizontal curve position at parameter θ.
    fn xy(&self, theta: f64) -> Vector2<f64> {
        let a = self.amplitude;
        match self.shape {
            TrajectoryShape::Lemniscate => {
                Vector2::new(a * theta.sin(), a * theta.sin() * theta.cos())
            }
            TrajectoryShape::Circle | TrajectoryShape::Spiral => {
                Vector2::new(a * theta.cos(), a * theta.sin())
            }
        }
    }

    /// dp/dθ of the horizontal curve.
    fn dxy(&self, theta: f64) -> Vector2<f64> {
        let a = self.amplitude;
        match self.shape {
            TrajectoryShape::Lemniscate => {
                // y = (A/2) sin 2θ
                Vector2::new(a * theta.cos(), a * (2.0 * theta).cos())
            }
            TrajectoryShape::Circle | TrajectoryShape::Spiral => {
                Vector2::new(-a * theta.sin(), a * theta.cos())
            }
        }
    }

    /// d²p/dθ² of the horizontal curve.
    fn ddxy(&self, theta: f64) -> Vector2<f64> {
        let a = self.amplitude;
        match self.shape {
            TrajectoryShape::Lemniscate => {
                Vector2::new(-a * theta.sin(), -2.0 * a * (2.0 * theta).sin())
            }
            TrajectoryShape::Circle | TrajectoryShape::Spiral => {
                Vector2::new(-a * theta.cos(), -a * theta.sin())
            }
        }
    }

    fn climb(&self) -> f64 {
        match self.shape {
            TrajectoryShape::Spiral => self.climb_rate,
            _ => 0.0,
        }
    }

    /// Precompute the θ(t) table; cost is linear in duration.
    pub fn sampler(&self) -> TrajectorySampler {
        self.validate().expect("invalid reference trajectory");
        let dt = 1e-3;
        let n = (self.duration / dt).round() as usize;
        let mut thetas = Vec::with_capacity(n + 1);
        let mut theta = 0.0f64;
        thetas.push(theta);
        // dθ/dt = s(t)/‖p'(θ)‖, integrated with RK4
        for i in 0..n {
            let t = i as f64 * dt;
            theta = rk4_theta(self, theta, t, dt);
            thetas.push(theta);
        }
        TrajectorySampler { traj: *self, grid_dt: dt, thetas }
    }
}

fn theta_rate(traj: &ReferenceTrajectory, theta: f64, t: f64) -> f64 {
    traj.speed_profile.speed(t, traj.duration) / traj.dxy(theta).norm()
}

fn rk4_theta(traj: &ReferenceTrajectory, theta: f64, t: f64, dt: f64) -> f64 {
    let k1 = theta_rate(traj, theta, t);
    let k2 = theta_rate(traj, theta + 0.5 * dt * k1, t + 0.5 * dt);
    let k3 = theta_rate(traj, theta + 0.5 * dt * k2, t + 0.5 * dt);
    let k4 = theta_rate(traj, theta + dt * k3, t + dt);
    theta + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Reference pose/twist lookup backed by the precomputed θ(t) grid.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    traj: ReferenceTrajectory,
    grid_dt: f64,
    thetas: Vec<f64>,
}

impl TrajectorySampler {
    pub fn duration(&self) -> f64 {
        self.traj.duration
    }

    /// Reference pose and twist at time `t`.
    pub fn at(&self, t: f64) -> Result<(UnitDualQuaternion, Twist), DqError> {
        let (pose, tw, _) = self.state_at(t)?;
        Ok((dq_from_pose(&pose), tw))
    }

    /// Pose, twist and yaw rate at `t`; used internally and by tests.
    pub fn state_at(&self, t: f64) -> Result<(Pose, Twist, f64), DqError> {
        if !(0.0..=self.traj.duration + 1e-9).contains(&t) {
            return Err(DqError::OutOfRange(t, self.traj.duration));
        }
        let idx = ((t / self.grid_dt).floor() as usize).min(self.thetas.len() - 1);
        let t0 = idx as f64 * self.grid_dt;
        let mut theta = self.thetas[idx];
        let rem = t - t0;
        if rem > 1e-12 {
            theta = rk4_theta(&self.traj, theta, t0, rem);
        }

        let traj = &self.traj;
        let s = traj.speed_profile.speed(t, traj.duration);
        let dp = traj.dxy(theta);
        let ddp = traj.ddxy(theta);
        let dn = dp.norm();
        let theta_dot = s / dn;
        // d/dt ‖p'‖ = θ̇ (p'·p'')/‖p'‖
        let theta_ddot =
            (traj.speed_profile.accel(traj.duration) - theta_dot * theta_dot * dp.dot(&ddp) / dn)
                / dn;

        let xy = traj.xy(theta);
        let vel_xy = dp * theta_dot;
        let acc_xy = dp * theta_ddot + ddp * (theta_dot * theta_dot);

        let climb = traj.climb();
        let position = Vector3::new(xy.x, xy.y, traj.base_height + climb * t);
        let vel = Vector3::new(vel_xy.x, vel_xy.y, climb);

        let yaw = vel_xy.y.atan2(vel_xy.x);
        let speed2 = vel_xy.norm_squared();
        let yaw_rate = (vel_xy.x * acc_xy.y - vel_xy.y * acc_xy.x) / speed2;

        let pose = Pose::new(UnitQuaternion::from_yaw(yaw), position);
        let tw = Twist::new(Vector3::new(0.0, 0.0, yaw_rate), vel);
        Ok((pose, tw, yaw_rate))
    }
}

/// Smooth state-dependent disturbance: a Gaussian bump around `center`
/// driving a yaw-rate offset and a loss of altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceField {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub yaw_rate_amp: f64,
    pub climb_amp: f64,
    /// Full-strength everywhere, ignoring position.
    pub always_on: bool,
}

impl DisturbanceField {
    pub fn off() -> DisturbanceField {
        DisturbanceField {
            center: Vector3::zeros(),
            radius: 1.0,
            yaw_rate_amp: 0.0,
            climb_amp: 0.0,
            always_on: false,
        }
    }

    /// Angular and linear disturbance at the given true pose.
    pub fn at(&self, q_true: &UnitDualQuaternion) -> (Vector3<f64>, Vector3<f64>) {
        let s = if self.always_on {
            1.0
        } else {
            let p = crate::dq::dq_to_pose(q_true).position;
            let d2 = (p - self.center).norm_squared();
            (-d2 / (2.0 * self.radius * self.radius)).exp()
        };
        (
            Vector3::new(0.0, 0.0, self.yaw_rate_amp * s),
            Vector3::new(0.0, 0.0, -self.climb_amp * s),
        )
    }
}

/// Sensor noise and rate configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Attitude measurement error angle std, rad.
    pub mag_angle_sigma: f64,
    /// Position measurement error std per axis, m.
    pub pos_sigma: f64,
    /// Gyro angle random walk, rad/sqrt(s).
    pub gyro_arw: f64,
    /// Pose measurement rate, Hz.
    pub pose_rate: f64,
    /// Inertial sampling rate, Hz.
    pub imu_rate: f64,
}

impl Default for SensorModel {
    /// Full-scale figures: 0.5 deg attitude, 0.5 m position,
    /// 1.0 deg/sqrt(h) gyro random walk, 5 Hz pose, 300 Hz inertial.
    fn default() -> SensorModel {
        SensorModel {
            mag_angle_sigma: 0.5f64.to_radians(),
            pos_sigma: 0.5,
            gyro_arw: 1.0f64.to_radians() / 60.0,
            pose_rate: 5.0,
            imu_rate: 300.0,
        }
    }
}

impl SensorModel {
    pub fn noiseless() -> SensorModel {
        SensorModel {
            mag_angle_sigma: 0.0,
            pos_sigma: 0.0,
            gyro_arw: 0.0,
            ..SensorModel::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.pose_rate > 0.0 && self.imu_rate > 0.0) {
            return Err("sensor rates must be positive".into());
        }
        if self.mag_angle_sigma < 0.0 || self.pos_sigma < 0.0 || self.gyro_arw < 0.0 {
            return Err("sensor noise figures must be nonnegative".into());
        }
        Ok(())
    }
}

/// True simulation state plus the seeded noise stream.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub q_true: UnitDualQuaternion,
    pub rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(q_true: UnitDualQuaternion, seed: u64) -> SimState {
        use rand::SeedableRng;
        SimState { t: 0.0, q_true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

fn normal3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    let n = |r: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(r) };
    Vector3::new(n(rng) * sigma, n(rng) * sigma, n(rng) * sigma)
}

/// Advance the true state by one step: the applied twist is the command
/// plus the state-dependent disturbance plus gyro noise with per-sample
/// std `arw/sqrt(dt)` on each angular axis.
pub fn apply_and_step(
    state: &mut SimState,
    cmd: &VelocityCommand,
    field: &DisturbanceField,
    noise: &SensorModel,
    dt: f64,
) -> Result<(), DqError> {
    let (rho_omega, rho_v) = field.at(&state.q_true);
    let gyro_sigma = noise.gyro_arw / dt.sqrt();
    let eta = normal3(&mut state.rng, gyro_sigma);
    let applied = Twist::new(cmd.omega_cmd + rho_omega + eta, cmd.v_cmd + rho_v);
    state.q_true = integrate_step(&state.q_true, &applied, dt)?;
    state.t += dt;
    Ok(())
}

/// True twist the vehicle would follow this step, excluding sensor noise.
/// Used by tests and the harness for logging ground truth.
pub fn applied_twist_noiseless(
    state: &SimState,
    cmd: &VelocityCommand,
    field: &DisturbanceField,
) -> Twist {
    let (rho_omega, rho_v) = field.at(&state.q_true);
    Twist::new(cmd.omega_cmd + rho_omega, cmd.v_cmd + rho_v)
}

/// Corrupt the true pose: attitude right-multiplied by a random small
/// rotation (uniform axis, angle `N(0, mag_angle_sigma²)`), position offset
/// by `N(0, pos_sigma² I)`. Rate gating and zero-order hold live in the
/// caller.
pub fn measure(state: &mut SimState, noise: &SensorModel) -> Pose {
    let pose = crate::dq::dq_to_pose(&state.q_true);
    let axis = loop {
        let a = normal3(&mut state.rng, 1.0);
        if a.norm() > 1e-9 {
            break a;
        }
    };
    let angle: f64 = {
        let z: f64 = StandardNormal.sample(&mut state.rng);
        z * noise.mag_angle_sigma
    };
    let q_rho = UnitQuaternion::from_axis_angle(&axis, angle);
    let attitude = pose.attitude.mul(&q_rho);
    let position = pose.position + normal3(&mut state.rng, noise.pos_sigma);
    Pose::new(attitude, position)
}
