//! Episode orchestration: the online learning control loop, metrics and
//! ultimate-bound verification.
//!
//! One episode runs the 100 Hz control loop against the seeded simulation.
//! Pose measurements arrive at the (slower) pose rate and are held between
//! ticks. At every pose tick a residual training sample is formed from the
//! finite-difference measured twist minus the time-averaged commanded
//! twist; after `warmup` samples and then every `batch_size` samples both
//! GPs are retrained, up to `n_end` retrainings. The controller keeps
//! using the previous posterior snapshot until a retrain completes, and
//! with `compensate` off the GPs still train but their means are never
//! injected.

use crate::control::{
    learned_control, lyapunov_v, nominal_control, ultimate_bound, GainSchedule, UltimateBound,
};
use crate::dq::{dq_from_pose, pose_error, DqError, Pose, PoseError, Twist};
use crate::gp::{
    fit_hyperparameters, fit_posterior, rho_bound, s3_input, se3_input, ErrorBoundModel,
    GPDataset, GPPosterior, GpError, HyperGrid, InputSpace, KernelConfig,
};
use crate::sim::{
    apply_and_step, measure, DisturbanceField, ReferenceTrajectory, SensorModel, SimState,
};
use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("at t={t:.3}s: {source}")]
    Integration { t: f64, source: DqError },
    #[error("at t={t:.3}s: {source}")]
    Learning { t: f64, source: GpError },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Learning-related configuration of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSettings {
    /// Train GPs at all. Off means a purely nominal run without GP columns.
    pub enabled: bool,
    /// Inject GP means into the commands. Training happens either way.
    pub compensate: bool,
    pub capacity: usize,
    /// Samples per retraining batch after the first.
    pub batch_size: usize,
    /// Maximum number of retraining events.
    pub n_end: usize,
    /// Samples collected before the first retraining.
    pub warmup: usize,
    pub kernel_omega: KernelConfig,
    pub kernel_v: KernelConfig,
    /// Refit kernels by grid search at the first retraining.
    pub fit_hypers: bool,
    pub xi: f64,
    pub gamma_omega: f64,
    pub gamma_v: f64,
}

/// Complete experiment description; an episode is a pure function of this
/// plus one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trajectory: ReferenceTrajectory,
    pub field: DisturbanceField,
    pub noise: SensorModel,
    pub gains: GainSchedule,
    pub gp: GpSettings,
    /// Control loop step, s.
    pub control_dt: f64,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.trajectory.validate().map_err(HarnessError::InvalidConfig)?;
        self.noise.validate().map_err(HarnessError::InvalidConfig)?;
        if !(self.control_dt > 0.0 && self.control_dt <= 0.1) {
            return Err(HarnessError::InvalidConfig(format!(
                "control_dt {} outside (0, 0.1]",
                self.control_dt
            )));
        }
        if self.gp.enabled {
            if self.gp.n_end < 1 {
                return Err(HarnessError::InvalidConfig("n_end must be >= 1".into()));
            }
            if self.gp.batch_size < 1 || self.gp.warmup < 1 {
                return Err(HarnessError::InvalidConfig(
                    "batch_size and warmup must be >= 1".into(),
                ));
            }
            if self.gp.capacity < 1 {
                return Err(HarnessError::InvalidConfig("gp capacity must be >= 1".into()));
            }
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::InvalidConfig("need at least one seed".into()));
        }
        Ok(())
    }

    /// Desk-scale preset for one of the three benchmark shapes. The same
    /// config runs compensated or not via `compensate`.
    ///
    /// Sensor noise is reduced from the full-scale defaults because the
    /// pose feed goes straight into feedback with no filtering stage; the
    /// pose rate is raised to 20 Hz for usable finite-difference targets.
    pub fn preset(shape: crate::sim::TrajectoryShape, compensate: bool) -> ExperimentConfig {
        use crate::sim::{SpeedProfile, TrajectoryShape};
        let trajectory = ReferenceTrajectory {
            shape,
            amplitude: 3.0,
            base_height: 2.0,
            duration: 40.0,
            speed_profile: SpeedProfile::LinearlyDecreasing { v0: 1.0, v1: 0.6 },
            climb_rate: if shape == TrajectoryShape::Spiral { 0.05 } else { 0.0 },
        };
        let noise = SensorModel {
            mag_angle_sigma: 0.1f64.to_radians(),
            pos_sigma: 0.02,
            gyro_arw: 1.0f64.to_radians() / 60.0,
            pose_rate: 20.0,
            imu_rate: 300.0,
        };
        ExperimentConfig {
            trajectory,
            field: DisturbanceField {
                center: Vector3::new(0.0, 0.0, 2.0),
                radius: 1.5,
                yaw_rate_amp: 0.3,
                climb_amp: 0.5,
                always_on: true,
            },
            noise,
            gains: GainSchedule::isotropic(1.0, 1.0).unwrap(),
            gp: GpSettings {
                enabled: true,
                compensate,
                capacity: 400,
                batch_size: 50,
                n_end: 8,
                warmup: 30,
                kernel_omega: KernelConfig::new(0.2, 0.3, 1.0),
                kernel_v: KernelConfig::new(0.5, 1.0, 8.0),
                fit_hypers: false,
                xi: 1.0,
                gamma_omega: 0.9,
                gamma_v: 0.9,
            },
            control_dt: 0.01,
            seeds: vec![1],
        }
    }
}

/// Per-control-tick record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub t: f64,
    pub q_true: [f64; 8],
    pub q_d: [f64; 8],
    /// Held measured pose driving feedback: attitude then position.
    pub meas_att: [f64; 4],
    pub meas_pos: [f64; 3],
    pub dq_vec: [f64; 3],
    pub dq0: f64,
    pub dp: [f64; 3],
    pub v_lyap: f64,
    pub cmd_omega: [f64; 3],
    pub cmd_v: [f64; 3],
    /// True injected disturbance at this state.
    pub rho_omega_true: [f64; 3],
    pub rho_v_true: [f64; 3],
    pub mu_omega: [f64; 3],
    pub mu_v: [f64; 3],
    /// Shared posterior variance of each GP.
    pub var_omega: f64,
    pub var_v: f64,
    /// Pointwise error envelopes of each GP.
    pub rho_bound_omega: f64,
    pub rho_bound_v: f64,
    /// Index of the posterior generation in use (0 = prior).
    pub gp_generation: usize,
}

/// Per-retraining record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    /// Retraining index, 1-based.
    pub n: usize,
    pub t: f64,
    /// Dataset size after the push.
    pub n_samples: usize,
    pub info_gain_omega: [f64; 3],
    pub beta_omega: [f64; 3],
    pub info_gain_v: [f64; 3],
    pub beta_v: [f64; 3],
    pub c_omega: f64,
    pub c_v: f64,
    pub eps0: f64,
    pub m: f64,
}

/// Full record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub compensated: bool,
    pub ticks: Vec<TickRow>,
    pub updates: Vec<UpdateRow>,
    /// Bound constants from the final retraining, if any happened.
    pub final_bound: Option<UltimateBound>,
}

struct GpChannel {
    dataset: GPDataset,
    posterior: Option<GPPosterior>,
    bound: Option<ErrorBoundModel>,
}

impl GpChannel {
    fn new(space: InputSpace, noise_var: [f64; 3], capacity: usize) -> GpChannel {
        GpChannel {
            dataset: GPDataset::empty(space, noise_var, capacity),
            posterior: None,
            bound: None,
        }
    }

    fn predict_with_bound(&self, x: &[f64]) -> (Vector3<f64>, f64, f64) {
        match (&self.posterior, &self.bound) {
            (Some(p), Some(b)) => {
                let (mean, var) = p.predict(x);
                (mean, var[0], rho_bound(p, b, x))
            }
            _ => (Vector3::zeros(), f64::NAN, f64::NAN),
        }
    }
}

/// Worst-case estimate-error constants over an evaluation grid standing in
/// for the compact operating sets: the grid is the union of the training
/// inputs and `extra` reference-error samples.
fn worst_case_constants(
    omega: &GpChannel,
    v: &GpChannel,
    extra_omega: &[Vec<f64>],
    extra_v: &[Vec<f64>],
    gains: &GainSchedule,
) -> (f64, f64) {
    let max_rho = |ch: &GpChannel, extra: &[Vec<f64>]| -> f64 {
        let (post, bound) = match (&ch.posterior, &ch.bound) {
            (Some(p), Some(b)) => (p, b),
            _ => return 0.0,
        };
        let mut worst = 0.0f64;
        for x in post.dataset.inputs.iter().chain(extra.iter()) {
            worst = worst.max(rho_bound(post, bound, x));
        }
        worst
    };
    let c_omega = max_rho(omega, extra_omega);
    let rho_v_max = max_rho(v, extra_v);
    let c_v = rho_v_max * rho_v_max / (2.0 * gains.alpha_v);
    (c_omega, c_v)
}

fn kernel_omega_init(cfg: &ExperimentConfig) -> KernelConfig {
    cfg.gp.kernel_omega
}

/// Seeded sample of plausible pose errors around the identity, used to pad
/// the worst-case evaluation grid beyond the visited training inputs.
fn reference_error_samples(rng: &mut ChaCha8Rng, count: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut s3 = Vec::with_capacity(count);
    let mut se3 = Vec::with_capacity(count);
    for _ in 0..count {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(-0.5..0.5f64);
        let att = crate::dq::UnitQuaternion::from_axis_angle(&axis, angle);
        let pos = Vector3::new(
            rng.gen_range(-0.5..0.5f64),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        );
        s3.push(s3_input(&att));
        se3.push(se3_input(&dq_from_pose(&Pose::new(att, pos))));
    }
    (s3, se3)
}

/// Execute one full episode.
pub fn run_episode(cfg: &ExperimentConfig, seed: u64) -> Result<EpisodeLog, HarnessError> {
    cfg.validate()?;
    let sampler = cfg.trajectory.sampler();
    let dt = cfg.control_dt;
    let n_ticks = (cfg.trajectory.duration / dt).round() as usize;
    let pose_every = (1.0 / (cfg.noise.pose_rate * dt)).round().max(1.0) as usize;
    let pose_dt = pose_every as f64 * dt;

    // start on the reference
    let (q0, _) = sampler.at(0.0).map_err(|e| HarnessError::Integration { t: 0.0, source: e })?;
    let mut state = SimState::new(q0, seed);
    // separate stream for the evaluation-grid samples so tick noise draws
    // are unaffected by grid size
    let mut grid_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (extra_omega, extra_v) = reference_error_samples(&mut grid_rng, 100);

    // finite-difference target noise from the sensor figures: two
    // independent pose errors across the interval
    let var_omega_target = {
        let s = cfg.noise.mag_angle_sigma;
        let gyro = cfg.noise.gyro_arw * cfg.noise.gyro_arw / pose_dt;
        // the angle error spreads over 3 axes; per-axis variance is s²/3
        [2.0 * s * s / 3.0 / (pose_dt * pose_dt) + gyro; 3]
    };
    let var_v_target = {
        let s = cfg.noise.pos_sigma;
        [2.0 * s * s / (pose_dt * pose_dt); 3]
    };

    let mut omega_ch = GpChannel::new(InputSpace::S3, var_omega_target, cfg.gp.capacity);
    let mut v_ch = GpChannel::new(InputSpace::Se3, var_v_target, cfg.gp.capacity);
    if cfg.gp.enabled {
        // generation 0 is the prior: zero mean, full signal variance
        let map_err = |source| HarnessError::Learning { t: 0.0, source };
        let post_omega = fit_posterior(&omega_ch.dataset, &kernel_omega_init(cfg)).map_err(map_err)?;
        let post_v = fit_posterior(&v_ch.dataset, &cfg.gp.kernel_v).map_err(map_err)?;
        omega_ch.bound = Some(
            ErrorBoundModel::from_posterior(&post_omega, cfg.gp.xi, cfg.gp.gamma_omega)
                .map_err(map_err)?,
        );
        v_ch.bound = Some(
            ErrorBoundModel::from_posterior(&post_v, cfg.gp.xi, cfg.gp.gamma_v).map_err(map_err)?,
        );
        omega_ch.posterior = Some(post_omega);
        v_ch.posterior = Some(post_v);
    }
    let mut pending: Vec<((Vec<f64>, Vector3<f64>), (Vec<f64>, Vector3<f64>))> = Vec::new();
    let mut retrain_count = 0usize;
    let mut kernel_omega = cfg.gp.kernel_omega;
    let mut kernel_v = cfg.gp.kernel_v;

    let mut held_pose = crate::dq::dq_to_pose(&q0);
    let mut prev_meas: Option<Pose> = None;
    let mut prev_err: Option<PoseError> = None;
    let mut cmd_accum = Twist::ZERO;

    let mut ticks = Vec::with_capacity(n_ticks);
    let mut updates = Vec::new();
    let mut final_bound: Option<UltimateBound> = None;

    for k in 0..n_ticks {
        let t = k as f64 * dt;
        let (q_d, tw_d) =
            sampler.at(t).map_err(|e| HarnessError::Integration { t, source: e })?;

        // pose measurement tick with zero-order hold in between
        if k % pose_every == 0 {
            let meas = measure(&mut state, &cfg.noise);
            if cfg.gp.enabled && retrain_count < cfg.gp.n_end {
                if let (Some(prev), Some(perr)) = (&prev_meas, &prev_err) {
                    // measured twist over the interval vs what was commanded
                    let rel = prev.attitude.conj().mul(&meas.attitude);
                    let omega_meas = rel.log_vec() / pose_dt;
                    let v_meas = (meas.position - prev.position) / pose_dt;
                    let cmd_avg = Twist::new(cmd_accum.omega / pose_dt, cmd_accum.vel / pose_dt);
                    let y_omega = omega_meas - cmd_avg.omega;
                    let y_v = v_meas - cmd_avg.vel;
                    let x_omega = s3_input(&perr.attitude_error());
                    let x_v = se3_input(&perr.dq);
                    pending.push(((x_omega, y_omega), (x_v, y_v)));
                }
            }
            prev_meas = Some(meas);
            held_pose = meas;
            cmd_accum = Twist::ZERO;

            // retraining schedule: first after `warmup` samples, then every
            // `batch_size`, never more than `n_end` times
            let due = if retrain_count == 0 {
                pending.len() >= cfg.gp.warmup
            } else {
                pending.len() >= cfg.gp.batch_size
            };
            if cfg.gp.enabled && retrain_count < cfg.gp.n_end && due {
                let batch_omega: Vec<_> =
                    pending.iter().map(|(o, _)| o.clone()).collect();
                let batch_v: Vec<_> = pending.iter().map(|(_, v)| v.clone()).collect();
                pending.clear();
                let map_err = |source| HarnessError::Learning { t, source };
                omega_ch.dataset = omega_ch.dataset.push(&batch_omega).map_err(map_err)?;
                v_ch.dataset = v_ch.dataset.push(&batch_v).map_err(map_err)?;
                if cfg.gp.fit_hypers && retrain_count == 0 {
                    kernel_omega =
                        fit_hyperparameters(&omega_ch.dataset, &HyperGrid::default_for(InputSpace::S3))
                            .map_err(map_err)?;
                    kernel_v =
                        fit_hyperparameters(&v_ch.dataset, &HyperGrid::default_for(InputSpace::Se3))
                            .map_err(map_err)?;
                }
                let post_omega = fit_posterior(&omega_ch.dataset, &kernel_omega).map_err(map_err)?;
                let post_v = fit_posterior(&v_ch.dataset, &kernel_v).map_err(map_err)?;
                let bound_omega =
                    ErrorBoundModel::from_posterior(&post_omega, cfg.gp.xi, cfg.gp.gamma_omega)
                        .map_err(map_err)?;
                let bound_v = ErrorBoundModel::from_posterior(&post_v, cfg.gp.xi, cfg.gp.gamma_v)
                    .map_err(map_err)?;
                // snapshot swap: the loop below only ever sees the fields
                // updated here, mirroring an atomic pointer swap
                omega_ch.posterior = Some(post_omega);
                omega_ch.bound = Some(bound_omega);
                v_ch.posterior = Some(post_v);
                v_ch.bound = Some(bound_v);
                retrain_count += 1;

                let (c_omega, c_v) =
                    worst_case_constants(&omega_ch, &v_ch, &extra_omega, &extra_v, &cfg.gains);
                let ub = ultimate_bound(c_omega, c_v, &cfg.gains, cfg.gp.gamma_omega, cfg.gp.gamma_v)
                    .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
                updates.push(UpdateRow {
                    n: retrain_count,
                    t,
                    n_samples: omega_ch.dataset.len(),
                    info_gain_omega: bound_omega.info_gain,
                    beta_omega: bound_omega.beta,
                    info_gain_v: bound_v.info_gain,
                    beta_v: bound_v.beta,
                    c_omega,
                    c_v,
                    eps0: ub.eps0,
                    m: ub.m,
                });
                final_bound = Some(ub);
            }
        }

        // feedback on the held measurement
        let q_meas_dq = dq_from_pose(&held_pose);
        let err = pose_error(&q_d, &q_meas_dq);
        let nominal = nominal_control(&err, &tw_d, &cfg.gains);
        let x_omega = s3_input(&err.attitude_error());
        let x_v = se3_input(&err.dq);
        let (mu_omega, var_omega, rho_b_omega) = if cfg.gp.enabled {
            omega_ch.predict_with_bound(&x_omega)
        } else {
            (Vector3::zeros(), 0.0, 0.0)
        };
        let (mu_v, var_v, rho_b_v) = if cfg.gp.enabled {
            v_ch.predict_with_bound(&x_v)
        } else {
            (Vector3::zeros(), 0.0, 0.0)
        };
        let cmd = if cfg.gp.compensate && retrain_count > 0 {
            learned_control(&nominal, &mu_omega, &mu_v)
        } else {
            nominal
        };
        prev_err = Some(err);

        // ground truth for the log: error of the true pose, not the
        // measured one
        let true_err = pose_error(&q_d, &state.q_true);
        let (rho_omega_true, rho_v_true) = cfg.field.at(&state.q_true);

        ticks.push(TickRow {
            t,
            q_true: state.q_true.to_array(),
            q_d: q_d.to_array(),
            meas_att: held_pose.attitude.as_quat().to_array(),
            meas_pos: held_pose.position.into(),
            dq_vec: true_err.dq_vec.into(),
            dq0: true_err.dq0,
            dp: true_err.dp_inertial.into(),
            v_lyap: lyapunov_v(&true_err),
            cmd_omega: cmd.omega_cmd.into(),
            cmd_v: cmd.v_cmd.into(),
            rho_omega_true: rho_omega_true.into(),
            rho_v_true: rho_v_true.into(),
            mu_omega: mu_omega.into(),
            mu_v: mu_v.into(),
            var_omega,
            var_v,
            rho_bound_omega: rho_b_omega,
            rho_bound_v: rho_b_v,
            gp_generation: retrain_count,
        });

        cmd_accum = cmd_accum.add(&Twist::new(cmd.omega_cmd * dt, cmd.v_cmd * dt));
        apply_and_step(&mut state, &cmd, &cfg.field, &cfg.noise, dt)
            .map_err(|e| HarnessError::Integration { t, source: e })?;
    }

    Ok(EpisodeLog { seed, compensated: cfg.gp.compensate, ticks, updates, final_bound })
}

/// Sliding-window error metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsWindow {
    pub window_len: f64,
    pub t: Vec<f64>,
    pub mae_att: Vec<f64>,
    pub mse_att: Vec<f64>,
    pub mae_pos: Vec<f64>,
    pub mse_pos: Vec<f64>,
}

/// Trailing-window MAE/MSE of `‖δq⃗‖` and `‖δp‖`, truncated at episode
/// start.
pub fn sliding_metrics(log: &EpisodeLog, window_len: f64) -> MetricsWindow {
    assert!(window_len > 0.0 && !log.ticks.is_empty());
    let n = log.ticks.len();
    let att: Vec<f64> = log.ticks.iter().map(|r| Vector3::from(r.dq_vec).norm()).collect();
    let pos: Vec<f64> = log.ticks.iter().map(|r| Vector3::from(r.dp).norm()).collect();
    let prefix = |xs: &[f64], square: bool| -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        for &x in xs {
            acc += if square { x * x } else { x.abs() };
            out.push(acc);
        }
        out
    };
    let pa = prefix(&att, false);
    let pa2 = prefix(&att, true);
    let pp = prefix(&pos, false);
    let pp2 = prefix(&pos, true);
    let dt = if n > 1 { log.ticks[1].t - log.ticks[0].t } else { 1.0 };
    let span = (window_len / dt).round().max(1.0) as usize;
    let mut out = MetricsWindow {
        window_len,
        t: Vec::with_capacity(n),
        mae_att: Vec::with_capacity(n),
        mse_att: Vec::with_capacity(n),
        mae_pos: Vec::with_capacity(n),
        mse_pos: Vec::with_capacity(n),
    };
    for i in 0..n {
        let lo = i.saturating_sub(span - 1);
        let count = (i - lo + 1) as f64;
        out.t.push(log.ticks[i].t);
        out.mae_att.push((pa[i + 1] - pa[lo]) / count);
        out.mse_att.push((pa2[i + 1] - pa2[lo]) / count);
        out.mae_pos.push((pp[i + 1] - pp[lo]) / count);
        out.mse_pos.push((pp2[i + 1] - pp2[lo]) / count);
    }
    out
}

/// Whole-episode MAE/MSE of attitude (`‖δq⃗‖`) and position (`‖δp‖`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub mae_att: f64,
    pub mse_att: f64,
    pub mae_pos: f64,
    pub mse_pos: f64,
}

pub fn episode_metrics(log: &EpisodeLog) -> EpisodeMetrics {
    let n = log.ticks.len() as f64;
    let mut m = EpisodeMetrics { mae_att: 0.0, mse_att: 0.0, mae_pos: 0.0, mse_pos: 0.0 };
    for r in &log.ticks {
        let a = Vector3::from(r.dq_vec).norm();
        let p = Vector3::from(r.dp).norm();
        m.mae_att += a;
        m.mse_att += a * a;
        m.mae_pos += p;
        m.mse_pos += p * p;
    }
    m.mae_att /= n;
    m.mse_att /= n;
    m.mae_pos /= n;
    m.mse_pos /= n;
    m
}

/// One row of the comparison table: a trajectory with seed-averaged
/// metrics, with and without compensation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub episodes_gp: usize,
    pub episodes_nogp: usize,
    pub gp: EpisodeMetrics,
    pub nogp: EpisodeMetrics,
    /// Uncompensated / compensated, per metric.
    pub improvement_att: f64,
    pub improvement_pos: f64,
}

fn mean_metrics(logs: &[EpisodeLog]) -> EpisodeMetrics {
    let n = logs.len() as f64;
    let mut out = EpisodeMetrics { mae_att: 0.0, mse_att: 0.0, mae_pos: 0.0, mse_pos: 0.0 };
    for l in logs {
        let m = episode_metrics(l);
        out.mae_att += m.mae_att / n;
        out.mse_att += m.mse_att / n;
        out.mae_pos += m.mae_pos / n;
        out.mse_pos += m.mse_pos / n;
    }
    out
}

/// Seed-averaged comparison of compensated vs uncompensated episode sets.
pub fn summary_table(cells: &[(String, Vec<EpisodeLog>, Vec<EpisodeLog>)]) -> Vec<SummaryRow> {
    cells
        .iter()
        .map(|(label, gp_logs, nogp_logs)| {
            let gp = mean_metrics(gp_logs);
            let nogp = mean_metrics(nogp_logs);
            SummaryRow {
                label: label.clone(),
                episodes_gp: gp_logs.len(),
                episodes_nogp: nogp_logs.len(),
                gp,
                nogp,
                improvement_att: nogp.mae_att / gp.mae_att,
                improvement_pos: nogp.mae_pos / gp.mae_pos,
            }
        })
        .collect()
}

/// Largest Lyapunov value observed at or after `settle`.
pub fn max_v_after(log: &EpisodeLog, settle: f64) -> f64 {
    log.ticks
        .iter()
        .filter(|r| r.t >= settle)
        .map(|r| r.v_lyap)
        .fold(0.0, f64::max)
}

/// Fraction of episodes whose Lyapunov trace stays at or below `bound.m`
/// for every tick from `settle` onward.
pub fn verify_ultimate_bound(logs: &[EpisodeLog], bound: &UltimateBound, settle: f64) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    let ok = logs.iter().filter(|l| max_v_after(l, settle) <= bound.m).count();
    ok as f64 / logs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TrajectoryShape;
    use approx::assert_abs_diff_eq;

    fn quiet_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(TrajectoryShape::Circle, false);
        cfg.field = DisturbanceField::off();
        cfg.noise = SensorModel::noiseless();
        cfg.noise.pose_rate = 100.0;
        cfg.gp.enabled = false;
        cfg
    }

    #[test]
    fn undisturbed_episode_converges() {
        let mut cfg = quiet_config();
        cfg.trajectory.duration = 20.0;
        let log = run_episode(&cfg, 3).unwrap();
        let v_end = log.ticks.last().unwrap().v_lyap;
        assert!(v_end < 1e-6, "terminal V {v_end}");
        assert!(log.updates.is_empty());
    }

    #[test]
    fn determinism() {
        let mut cfg = ExperimentConfig::preset(TrajectoryShape::Lemniscate, true);
        cfg.trajectory.duration = 6.0;
        let a = run_episode(&cfg, 11).unwrap();
        let b = run_episode(&cfg, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retrain_schedule_and_snapshot_discipline() {
        let mut cfg = ExperimentConfig::preset(TrajectoryShape::Circle, true);
        cfg.trajectory.duration = 30.0;
        let log = run_episode(&cfg, 5).unwrap();
        // warmup 30 at 20 Hz -> first retrain just after 1.5 s, then every
        // 2.5 s; well within 30 s all 8 land
        assert_eq!(log.updates.len(), cfg.gp.n_end);
        for (i, u) in log.updates.iter().enumerate() {
            assert_eq!(u.n, i + 1);
        }
        // the generation only changes at update times
        let mut gen = 0usize;
        let update_times: Vec<f64> = log.updates.iter().map(|u| u.t).collect();
        for r in &log.ticks {
            if r.gp_generation != gen {
                assert_eq!(r.gp_generation, gen + 1);
                assert!(update_times.contains(&r.t), "generation change off-schedule at {}", r.t);
                gen = r.gp_generation;
            }
        }
        assert_eq!(gen, cfg.gp.n_end);
        // dataset growth: warmup + batches, capped by capacity
        let expect: Vec<usize> = (0..cfg.gp.n_end)
            .map(|i| (cfg.gp.warmup + i * cfg.gp.batch_size).min(cfg.gp.capacity))
            .collect();
        let got: Vec<usize> = log.updates.iter().map(|u| u.n_samples).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn uncompensated_run_still_trains_but_does_not_inject() {
        let mut cfg = ExperimentConfig::preset(TrajectoryShape::Circle, false);
        cfg.trajectory.duration = 10.0;
        let log = run_episode(&cfg, 5).unwrap();
        assert!(!log.updates.is_empty());
        // commands must equal the nominal law reconstructed from the same
        // logged error; spot-check late ticks where a posterior exists
        let cfg2 = ExperimentConfig { gp: GpSettings { enabled: false, ..cfg.gp.clone() }, ..cfg.clone() };
        let log2 = run_episode(&cfg2, 5).unwrap();
        for (a, b) in log.ticks.iter().zip(&log2.ticks) {
            assert_eq!(a.cmd_omega, b.cmd_omega);
            assert_eq!(a.cmd_v, b.cmd_v);
        }
    }

    #[test]
    fn sliding_metrics_hand_oracle() {
        let mut cfg = quiet_config();
        cfg.trajectory.duration = 1.0;
        let mut log = run_episode(&cfg, 1).unwrap();
        // overwrite with a hand-built series
        log.ticks.truncate(3);
        for (i, r) in log.ticks.iter_mut().enumerate() {
            r.t = i as f64;
            r.dq_vec = [0.0, 0.0, [0.1, 0.2, 0.4][i]];
            r.dp = [[1.0, 2.0, 3.0][i], 0.0, 0.0];
        }
        // dt inferred as 1 s, window 2 s -> span 2 samples
        let m = sliding_metrics(&log, 2.0);
        assert_abs_diff_eq!(m.mae_att[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mae_att[1], 0.15000000000000002, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mae_att[2], 0.30000000000000004, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mse_pos[1], 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mae_pos[2], 2.5, epsilon = 1e-15);

        // constant series
        for r in log.ticks.iter_mut() {
            r.dq_vec = [0.0, 0.0, 0.0];
            r.dp = [0.1, 0.0, 0.0];
        }
        let m = sliding_metrics(&log, 2.0);
        assert!(m.mae_att.iter().all(|&x| x == 0.0));
        assert!(m.mae_pos.iter().all(|&x| (x - 0.1).abs() < 1e-15));
        assert!(m.mse_pos.iter().all(|&x| (x - 0.01).abs() < 1e-12));
    }

    #[test]
    fn summary_table_arithmetic() {
        let mut cfg = quiet_config();
        cfg.trajectory.duration = 2.0;
        let log = run_episode(&cfg, 1).unwrap();
        let rows = summary_table(&[("quiet".into(), vec![log.clone()], vec![log.clone()])]);
        assert_eq!(rows.len(), 1);
        assert_abs_diff_eq!(rows[0].improvement_att, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[0].improvement_pos, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ultimate_bound_verification_edges() {
        let mut cfg = quiet_config();
        cfg.trajectory.duration = 5.0;
        let log = run_episode(&cfg, 1).unwrap();
        let loose = UltimateBound { c_omega: 0.0, c_v: 0.0, eps0: 1.0, m: 10.0, gamma: 0.9 };
        assert_eq!(verify_ultimate_bound(&[log.clone()], &loose, 1.0), 1.0);
        let zero = UltimateBound { c_omega: 0.0, c_v: 0.0, eps0: 0.0, m: 0.0, gamma: 0.9 };
        // noiseless quiet run decays to ~0 but not exactly 0
        assert_eq!(verify_ultimate_bound(&[log], &zero, 1.0), 0.0);
    }
}
