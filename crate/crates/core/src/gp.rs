//! Exact Gaussian-process regression with antipodally invariant kernels.
//!
//! Inputs live either on the unit-quaternion sphere S³ or on the unit
//! dual-quaternion group; targets are 3-vectors modelled by three
//! independent scalar GPs sharing one kernel. The squared-exponential
//! kernel composes with the chordal distance `d± = √(2 − 2|⟨q,q′⟩|)`, so
//! `q` and `−q` are indistinguishable by construction.
//!
//! Posteriors are immutable snapshots holding a jittered Cholesky factor;
//! retraining builds a new snapshot, so sharing across threads is free.

use crate::dq::{dq_to_pose, DualQuaternion, UnitDualQuaternion, UnitQuaternion, Quaternion};
use nalgebra::{Cholesky, DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("input {index} violates the unit invariants (residual {residual:.3e})")]
    InvalidInput { index: usize, residual: f64 },
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Gram matrix factorization failed even with jitter {0:.1e}")]
    FactorizationFailure(f64),
    #[error("confidence level {0} outside (0, 1)")]
    InvalidConfidence(f64),
    #[error("need at least {needed} training points, have {have}")]
    NotEnoughData { needed: usize, have: usize },
}

/// Which manifold the GP inputs live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputSpace {
    /// Unit quaternions, flat 4-vectors in (vector, scalar) order.
    S3,
    /// Unit dual quaternions, flat 8-vectors (real then dual part).
    Se3,
}

impl InputSpace {
    pub fn dim(&self) -> usize {
        match self {
            InputSpace::S3 => 4,
            InputSpace::Se3 => 8,
        }
    }
}

/// Squared-exponential kernel hyperparameters. `lambda` only enters the
/// pose-space distance and is ignored for S³ inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub sigma_f2: f64,
    pub ell: f64,
    pub lambda: f64,
}

impl KernelConfig {
    pub fn new(sigma_f2: f64, ell: f64, lambda: f64) -> Self {
        assert!(
            sigma_f2 > 0.0 && ell > 0.0 && lambda > 0.0,
            "kernel hyperparameters must be strictly positive"
        );
        KernelConfig { sigma_f2, ell, lambda }
    }
}

/// Antipodally invariant chordal distance `√(2 − 2|⟨q,q′⟩|)` on S³.
/// The absolute value is applied before any other arithmetic, so negating
/// either argument leaves the result bitwise unchanged.
pub fn chordal_dist(q: &[f64; 4], q2: &[f64; 4]) -> f64 {
    let dot: f64 = q.iter().zip(q2).map(|(a, b)| a * b).sum();
    (2.0 - 2.0 * dot.abs()).max(0.0).sqrt()
}

/// Pose distance `√(d±(q,q′)² + ‖p−p′‖²/λ²)` with `(q, p)` recovered from
/// the flat dual-quaternion encoding.
pub fn se3_dist(x: &[f64; 8], x2: &[f64; 8], lambda: f64) -> f64 {
    let split = |a: &[f64; 8]| -> ([f64; 4], Vector3<f64>) {
        let dq = DualQuaternion::from_array(*a);
        // p̃ = 2 D ∘ P*, valid for either sign of the representative
        let p = dq.dual.mul(&dq.real.conj()).scale(2.0).v;
        ([a[0], a[1], a[2], a[3]], p)
    };
    let (q1, p1) = split(x);
    let (q2, p2) = split(x2);
    let d = chordal_dist(&q1, &q2);
    let dp = (p1 - p2).norm();
    (d * d + dp * dp / (lambda * lambda)).sqrt()
}

fn input_dist(space: InputSpace, cfg: &KernelConfig, a: &[f64], b: &[f64]) -> f64 {
    match space {
        InputSpace::S3 => chordal_dist(
            &[a[0], a[1], a[2], a[3]],
            &[b[0], b[1], b[2], b[3]],
        ),
        InputSpace::Se3 => se3_dist(
            &[a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]],
            &[b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]],
            cfg.lambda,
        ),
    }
}

/// `k(x, x′) = σ_f² exp(−d²/(2ℓ²))`.
pub fn kernel_eval(space: InputSpace, cfg: &KernelConfig, a: &[f64], b: &[f64]) -> f64 {
    let d = input_dist(space, cfg, a, b);
    cfg.sigma_f2 * (-d * d / (2.0 * cfg.ell * cfg.ell)).exp()
}

fn input_residual(space: InputSpace, x: &[f64]) -> f64 {
    match space {
        InputSpace::S3 => {
            let n: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            (n - 1.0).abs()
        }
        InputSpace::Se3 => {
            let dq = DualQuaternion::from_array([
                x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7],
            ]);
            crate::dq::unit_residual(&dq)
        }
    }
}

/// Sliding-window training set. Pushing returns a new snapshot; the oldest
/// pairs are evicted first once `capacity` is exceeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPDataset {
    pub space: InputSpace,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vector3<f64>>,
    /// Observation noise variance per output channel.
    pub noise_var: [f64; 3],
    pub capacity: usize,
}

impl GPDataset {
    pub fn empty(space: InputSpace, noise_var: [f64; 3], capacity: usize) -> Self {
        assert!(capacity >= 1);
        GPDataset { space, inputs: Vec::new(), targets: Vec::new(), noise_var, capacity }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Append a batch, evicting the oldest pairs beyond capacity. The
    /// receiver is unchanged; a new snapshot is returned.
    pub fn push(&self, batch: &[(Vec<f64>, Vector3<f64>)]) -> Result<GPDataset, GpError> {
        for (i, (x, _)) in batch.iter().enumerate() {
            if x.len() != self.space.dim() {
                return Err(GpError::DimensionMismatch { expected: self.space.dim(), got: x.len() });
            }
            let r = input_residual(self.space, x);
            if r > crate::dq::UNIT_TOL {
                return Err(GpError::InvalidInput { index: i, residual: r });
            }
        }
        let mut inputs = self.inputs.clone();
        let mut targets = self.targets.clone();
        for (x, y) in batch {
            inputs.push(x.clone());
            targets.push(*y);
        }
        let excess = inputs.len().saturating_sub(self.capacity);
        if excess > 0 {
            inputs.drain(..excess);
            targets.drain(..excess);
        }
        Ok(GPDataset {
            space: self.space,
            inputs,
            targets,
            noise_var: self.noise_var,
            capacity: self.capacity,
        })
    }

    /// Mean of the per-output noise variances, used on the Gram diagonal
    /// since the three outputs share a single factorization.
    pub fn mean_noise_var(&self) -> f64 {
        (self.noise_var[0] + self.noise_var[1] + self.noise_var[2]) / 3.0
    }

    /// Columnar text form: one line per pair, inputs then target then the
    /// three noise variances and capacity in a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# gp-dataset-v1 space={} noise_var={:.16e},{:.16e},{:.16e} capacity={}\n",
            match self.space {
                InputSpace::S3 => "s3",
                InputSpace::Se3 => "se3",
            },
            self.noise_var[0], self.noise_var[1], self.noise_var[2], self.capacity
        ));
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let fields: Vec<String> = x
                .iter()
                .chain([y.x, y.y, y.z].iter())
                .map(|v| format!("{v:.16e}"))
                .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<GPDataset, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty dataset file")?;
        let mut space = None;
        let mut noise_var = [0.0f64; 3];
        let mut capacity = 0usize;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("space=") {
                space = Some(match v {
                    "s3" => InputSpace::S3,
                    "se3" => InputSpace::Se3,
                    other => return Err(format!("unknown input space {other}")),
                });
            } else if let Some(v) = tok.strip_prefix("noise_var=") {
                let parts: Vec<&str> = v.split(',').collect();
                if parts.len() != 3 {
                    return Err("noise_var needs 3 entries".into());
                }
                for (i, p) in parts.iter().enumerate() {
                    noise_var[i] = p.parse().map_err(|e| format!("bad noise_var: {e}"))?;
                }
            } else if let Some(v) = tok.strip_prefix("capacity=") {
                capacity = v.parse().map_err(|e| format!("bad capacity: {e}"))?;
            }
        }
        let space = space.ok_or("header missing space=")?;
        if capacity == 0 {
            return Err("header missing capacity=".into());
        }
        let dim = space.dim();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
            let vals = vals.map_err(|e| format!("line {}: {e}", ln + 2))?;
            if vals.len() != dim + 3 {
                return Err(format!("line {}: expected {} fields, got {}", ln + 2, dim + 3, vals.len()));
            }
            inputs.push(vals[..dim].to_vec());
            targets.push(Vector3::new(vals[dim], vals[dim + 1], vals[dim + 2]));
        }
        Ok(GPDataset { space, inputs, targets, noise_var, capacity })
    }
}

/// Fitted posterior: dataset snapshot plus the Cholesky factor of the
/// jittered Gram matrix and the solved weight columns.
#[derive(Debug, Clone)]
pub struct GPPosterior {
    pub dataset: GPDataset,
    pub kernel: KernelConfig,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    alpha: [DVector<f64>; 3],
    /// Jitter actually used on the diagonal.
    pub jitter: f64,
}

/// Gram matrix `K_{j′,j} = k(x_{j′}, x_j) + δ(j,j′) σ²` (σ² optional).
fn gram(data: &GPDataset, cfg: &KernelConfig, sigma2: f64) -> DMatrix<f64> {
    let n = data.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_eval(data.space, cfg, &data.inputs[i], &data.inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += sigma2;
    }
    k
}

fn cholesky_with_jitter(
    k: &DMatrix<f64>,
) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64), GpError> {
    let mut jitter = 0.0;
    loop {
        let mut kj = k.clone();
        if jitter > 0.0 {
            for i in 0..kj.nrows() {
                kj[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-4 {
            return Err(GpError::FactorizationFailure(1e-4));
        }
    }
}

/// Factorize the Gram matrix once and solve the weights for each output
/// column. `N = 0` is allowed and yields the prior.
pub fn fit_posterior(data: &GPDataset, cfg: &KernelConfig) -> Result<GPPosterior, GpError> {
    if data.is_empty() {
        return Ok(GPPosterior {
            dataset: data.clone(),
            kernel: *cfg,
            chol: None,
            alpha: [DVector::zeros(0), DVector::zeros(0), DVector::zeros(0)],
            jitter: 0.0,
        });
    }
    let k = gram(data, cfg, data.mean_noise_var());
    let (chol, jitter) = cholesky_with_jitter(&k)?;
    let n = data.len();
    let mut alpha = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
    for i in 0..3 {
        let y = DVector::from_iterator(n, data.targets.iter().map(|t| t[i]));
        alpha[i] = chol.solve(&y);
    }
    Ok(GPPosterior { dataset: data.clone(), kernel: *cfg, chol: Some(chol), alpha, jitter })
}

impl GPPosterior {
    fn kvec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dataset.len(),
            self.dataset
                .inputs
                .iter()
                .map(|xi| kernel_eval(self.dataset.space, &self.kernel, xi, x)),
        )
    }

    /// Posterior mean per output and the shared variance (zero prior mean).
    /// The variance is clamped to be nonnegative.
    pub fn predict(&self, x: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
        let chol = match &self.chol {
            None => {
                return (Vector3::zeros(), Vector3::repeat(self.kernel.sigma_f2));
            }
            Some(c) => c,
        };
        let kv = self.kvec(x);
        let mean = Vector3::new(
            kv.dot(&self.alpha[0]),
            kv.dot(&self.alpha[1]),
            kv.dot(&self.alpha[2]),
        );
        let kxx = kernel_eval(self.dataset.space, &self.kernel, x, x);
        let solved = chol.solve(&kv);
        let var = (kxx - kv.dot(&solved)).max(0.0);
        (mean, Vector3::repeat(var))
    }

    /// Exact log marginal likelihood summed over the three outputs:
    /// `−½ Σ_i (yᵢᵀαᵢ + log det K) − (3N/2) log 2π`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let chol = match &self.chol {
            None => return 0.0,
            Some(c) => c,
        };
        let n = self.dataset.len() as f64;
        let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let mut lml = 0.0;
        for i in 0..3 {
            let y = DVector::from_iterator(
                self.dataset.len(),
                self.dataset.targets.iter().map(|t| t[i]),
            );
            lml += -0.5 * (y.dot(&self.alpha[i]) + logdet);
        }
        lml - 1.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Log-spaced candidate grid for hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub sigma_f2: Vec<f64>,
    pub ell: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl HyperGrid {
    pub fn default_for(space: InputSpace) -> HyperGrid {
        HyperGrid {
            sigma_f2: vec![0.01, 0.1, 1.0],
            ell: vec![0.1, 0.3, 1.0, 3.0],
            lambda: match space {
                InputSpace::S3 => vec![1.0],
                InputSpace::Se3 => vec![0.5, 2.0, 8.0],
            },
        }
    }
}

/// Deterministic grid search maximizing the exact log marginal likelihood.
/// Ties break toward smaller `ell`, then smaller `sigma_f2`, then smaller
/// `lambda`. Candidates whose Gram matrix cannot be factorized (the
/// antipodal metric makes large length-scales indefinite on spread-out
/// data) are skipped.
pub fn fit_hyperparameters(data: &GPDataset, grid: &HyperGrid) -> Result<KernelConfig, GpError> {
    if data.len() < 3 {
        return Err(GpError::NotEnoughData { needed: 3, have: data.len() });
    }
    let mut best: Option<(f64, KernelConfig)> = None;
    for &ell in &grid.ell {
        for &sigma_f2 in &grid.sigma_f2 {
            for &lambda in &grid.lambda {
                let cfg = KernelConfig::new(sigma_f2, ell, lambda);
                let lml = match fit_posterior(data, &cfg) {
                    Ok(p) => p.log_marginal_likelihood(),
                    Err(GpError::FactorizationFailure(_)) => continue,
                    Err(e) => return Err(e),
                };
                // strict improvement required, so earlier (smaller) grid
                // points win ties
                let improves = match &best {
                    None => true,
                    Some((b, _)) => lml > *b + 0.0,
                };
                if improves {
                    best = Some((lml, cfg));
                }
            }
        }
    }
    Ok(best.unwrap().1)
}

/// Per-output information gain surrogate `½ log det(I + σ_j⁻² K̃)` with `K̃`
/// the noise-free Gram matrix over the training set. This lower-bounds the
/// subset-maximized quantity, which is intractable to compute exactly.
pub fn information_gain(post: &GPPosterior) -> Result<[f64; 3], GpError> {
    if post.dataset.is_empty() {
        return Ok([0.0; 3]);
    }
    let kt = gram(&post.dataset, &post.kernel, 0.0);
    let n = post.dataset.len();
    let mut out = [0.0; 3];
    for j in 0..3 {
        // floor keeps the noise-free case finite
        let sigma2 = post.dataset.noise_var[j].max(1e-12);
        let m = DMatrix::identity(n, n) + kt.clone() / sigma2;
        let (chol, _) = cholesky_with_jitter(&m)?;
        let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        out[j] = 0.5 * logdet;
    }
    Ok(out)
}

/// High-probability scaling `β = √(2ξ² + 300 Γ ln³((N+1)/(1 − γ^{1/3})))`.
pub fn beta_bound(xi: f64, gamma_info: f64, n: usize, confidence: f64) -> Result<f64, GpError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(GpError::InvalidConfidence(confidence));
    }
    let ln_term = ((n as f64 + 1.0) / (1.0 - confidence.powf(1.0 / 3.0))).ln();
    Ok((2.0 * xi * xi + 300.0 * gamma_info * ln_term.powi(3)).sqrt())
}

/// Per-output error-bound parameters for one posterior generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundModel {
    /// RKHS norm bound of the unknown function, shared across outputs.
    pub rkhs_bound: f64,
    pub info_gain: [f64; 3],
    pub beta: [f64; 3],
    pub gamma: f64,
}

impl ErrorBoundModel {
    pub fn from_posterior(
        post: &GPPosterior,
        xi: f64,
        confidence: f64,
    ) -> Result<ErrorBoundModel, GpError> {
        let info_gain = information_gain(post)?;
        let n = post.dataset.len();
        let mut beta = [0.0; 3];
        for j in 0..3 {
            beta[j] = beta_bound(xi, info_gain[j], n, confidence)?;
        }
        Ok(ErrorBoundModel { rkhs_bound: xi, info_gain, beta, gamma: confidence })
    }
}

/// Pointwise error envelope `ρ‡(x) = √(Σ_i β_i² var_i(x))`.
pub fn rho_bound(post: &GPPosterior, bound: &ErrorBoundModel, x: &[f64]) -> f64 {
    let (_, var) = post.predict(x);
    (0..3).map(|i| bound.beta[i] * bound.beta[i] * var[i]).sum::<f64>().sqrt()
}

/// Flatten a unit quaternion for use as an S³ input.
pub fn s3_input(q: &UnitQuaternion) -> Vec<f64> {
    q.as_quat().to_array().to_vec()
}

/// Flatten a unit dual quaternion for use as a pose-space input.
pub fn se3_input(q: &UnitDualQuaternion) -> Vec<f64> {
    q.to_array().to_vec()
}

/// Convenience for tests: rebuild the attitude/position split of a flat
/// pose-space input.
pub fn se3_split(x: &[f64; 8]) -> (Quaternion, Vector3<f64>) {
    let dq = DualQuaternion::from_array(*x);
    let pose = dq_to_pose(&UnitDualQuaternion::renormalized(dq));
    (*pose.attitude.as_quat(), pose.position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dq::{dq_from_pose, Pose, Quaternion, UnitQuaternion};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_unit4(rng: &mut StdRng) -> [f64; 4] {
        loop {
            let q = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-3 {
                return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
            }
        }
    }

    fn random_pose_input(rng: &mut StdRng) -> [f64; 8] {
        let q = random_unit4(rng);
        let quat = UnitQuaternion::new(Quaternion::from_array(q)).unwrap();
        let p = Vector3::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        );
        dq_from_pose(&Pose::new(quat, p)).to_array()
    }

    fn s3_dataset(rng: &mut StdRng, n: usize, noise: f64) -> GPDataset {
        let mut ds = GPDataset::empty(InputSpace::S3, [noise; 3], 1000);
        let batch: Vec<(Vec<f64>, Vector3<f64>)> = (0..n)
            .map(|_| {
                (
                    random_unit4(rng).to_vec(),
                    Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                )
            })
            .collect();
        ds = ds.push(&batch).unwrap();
        ds
    }

    #[test]
    fn chordal_distance_properties() {
        let mut rng = StdRng::seed_from_u64(30);
        let q = random_unit4(&mut rng);
        assert_eq!(chordal_dist(&q, &q), 0.0);
        let neg = [-q[0], -q[1], -q[2], -q[3]];
        assert_eq!(chordal_dist(&q, &neg), 0.0);
        // orthogonal pair
        let a = [0.0, 0.0, 0.0, 1.0];
        let b = [1.0, 0.0, 0.0, 0.0];
        assert_abs_diff_eq!(chordal_dist(&a, &b), 2.0f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn se3_distance_properties() {
        let mut rng = StdRng::seed_from_u64(31);
        let x = random_pose_input(&mut rng);
        assert_eq!(se3_dist(&x, &x, 2.0), 0.0);

        // same attitude, ‖Δp‖ = λ
        let q = UnitQuaternion::from_yaw(0.4);
        let a = dq_from_pose(&Pose::new(q, Vector3::new(1.0, 0.0, 0.0))).to_array();
        let b = dq_from_pose(&Pose::new(q, Vector3::new(1.0, 2.5, 0.0))).to_array();
        assert_abs_diff_eq!(se3_dist(&a, &b, 2.5), 1.0, epsilon = 1e-12);

        // negation of one argument
        for _ in 0..20 {
            let x = random_pose_input(&mut rng);
            let y = random_pose_input(&mut rng);
            let ny = {
                let mut t = y;
                for v in &mut t {
                    *v = -*v;
                }
                t
            };
            assert_abs_diff_eq!(se3_dist(&x, &y, 1.7), se3_dist(&x, &ny, 1.7), epsilon = 1e-12);
        }
    }

    #[test]
    fn kernel_basics() {
        let cfg = KernelConfig::new(2.5, 0.7, 1.0);
        let mut rng = StdRng::seed_from_u64(32);
        let q = random_unit4(&mut rng);
        assert_abs_diff_eq!(kernel_eval(InputSpace::S3, &cfg, &q, &q), 2.5, epsilon = 1e-15);
        let neg: Vec<f64> = q.iter().map(|v| -v).collect();
        // bitwise antipodal invariance
        assert_eq!(
            kernel_eval(InputSpace::S3, &cfg, &q, &q).to_bits(),
            kernel_eval(InputSpace::S3, &cfg, &neg, &q).to_bits()
        );
        // d = ℓ√2 gives σ_f² e⁻¹; engineer two quaternions at that chordal
        // distance: need 2 − 2|dot| = 2ℓ², dot = 1 − ℓ²
        let ell: f64 = 0.7;
        let dot = 1.0 - ell * ell;
        let theta = dot.acos();
        let a = [0.0, 0.0, 0.0, 1.0];
        let b = [theta.sin(), 0.0, 0.0, theta.cos()];
        assert_abs_diff_eq!(
            kernel_eval(InputSpace::S3, &cfg, &a, &b),
            2.5 * (-1.0f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn dataset_fifo_and_validation() {
        let mut rng = StdRng::seed_from_u64(33);
        let ds = GPDataset::empty(InputSpace::S3, [0.01; 3], 5);
        let mk = |rng: &mut StdRng| (random_unit4(rng).to_vec(), Vector3::zeros());
        let b1: Vec<_> = (0..3).map(|_| mk(&mut rng)).collect();
        let b2: Vec<_> = (0..3).map(|_| mk(&mut rng)).collect();
        let d1 = ds.push(&b1).unwrap();
        let d2 = d1.push(&b2).unwrap();
        assert_eq!(d2.len(), 5);
        assert_eq!(d2.inputs[0], b1[1].0); // oldest evicted

        let same = d2.push(&[]).unwrap();
        assert_eq!(same, d2);

        let bad = vec![(vec![0.5, 0.0, 0.0, 0.0], Vector3::zeros())];
        assert!(matches!(ds.push(&bad), Err(GpError::InvalidInput { .. })));
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let mut rng = StdRng::seed_from_u64(34);
        let ds = s3_dataset(&mut rng, 7, 0.02);
        let text = ds.to_csv();
        let back = GPDataset::from_csv(&text).unwrap();
        assert_eq!(back, ds);
    }

    /// Dense-inverse oracle for mean and variance.
    fn predict_oracle(
        data: &GPDataset,
        cfg: &KernelConfig,
        x: &[f64],
    ) -> (Vector3<f64>, f64) {
        let n = data.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = kernel_eval(data.space, cfg, &data.inputs[i], &data.inputs[j]);
            }
            k[(i, i)] += data.mean_noise_var();
        }
        let kinv = k.try_inverse().unwrap();
        let kv = DVector::from_iterator(
            n,
            data.inputs.iter().map(|xi| kernel_eval(data.space, cfg, xi, x)),
        );
        let mut mean = Vector3::zeros();
        for i in 0..3 {
            let y = DVector::from_iterator(n, data.targets.iter().map(|t| t[i]));
            mean[i] = kv.dot(&(&kinv * &y));
        }
        let var = kernel_eval(data.space, cfg, x, x) - kv.dot(&(&kinv * &kv));
        (mean, var)
    }

    #[test]
    fn posterior_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(35);
        let cfg = KernelConfig::new(1.0, 0.4, 1.0);
        for n in [1usize, 5, 20, 50] {
            let ds = s3_dataset(&mut rng, n, 0.01);
            let post = fit_posterior(&ds, &cfg).unwrap();
            for _ in 0..10 {
                let x = random_unit4(&mut rng);
                let (mean, var) = post.predict(&x);
                let (omean, ovar) = predict_oracle(&ds, &cfg, &x);
                assert_abs_diff_eq!((mean - omean).norm(), 0.0, epsilon = 1e-8);
                assert_abs_diff_eq!(var[0], ovar.max(0.0), epsilon = 1e-8);
                assert_eq!(var[0], var[1]);
                assert_eq!(var[1], var[2]);
            }
        }
    }

    #[test]
    fn noise_free_interpolation_and_prior() {
        let mut rng = StdRng::seed_from_u64(36);
        let cfg = KernelConfig::new(1.3, 0.5, 1.0);

        // empty dataset: prior
        let empty = GPDataset::empty(InputSpace::S3, [0.0; 3], 10);
        let post = fit_posterior(&empty, &cfg).unwrap();
        let x = random_unit4(&mut rng);
        let (mean, var) = post.predict(&x);
        assert_eq!(mean, Vector3::zeros());
        assert_eq!(var[0], 1.3);

        // noise-free training point: exact interpolation
        let target = Vector3::new(0.3, -0.8, 0.1);
        let xi = random_unit4(&mut rng);
        let ds = empty.push(&[(xi.to_vec(), target)]).unwrap();
        let post = fit_posterior(&ds, &cfg).unwrap();
        let (mean, _) = post.predict(&xi);
        assert_abs_diff_eq!((mean - target).norm(), 0.0, epsilon = 1e-10);

        // N=1 noisy variance at the training input
        let noisy = GPDataset::empty(InputSpace::S3, [0.04; 3], 10)
            .push(&[(xi.to_vec(), target)])
            .unwrap();
        let post = fit_posterior(&noisy, &cfg).unwrap();
        let (_, var) = post.predict(&xi);
        let sf2 = 1.3;
        assert_abs_diff_eq!(var[0], sf2 - sf2 * sf2 / (sf2 + 0.04), epsilon = 1e-12);

        // far point falls back to the prior
        let far = [1.0, 0.0, 0.0, 0.0];
        let near = [0.0, 0.0, 0.0, 1.0];
        let tight = KernelConfig::new(1.3, 0.05, 1.0);
        let ds = GPDataset::empty(InputSpace::S3, [0.0; 3], 10)
            .push(&[(near.to_vec(), target)])
            .unwrap();
        let post = fit_posterior(&ds, &tight).unwrap();
        let (mean, var) = post.predict(&far);
        assert_abs_diff_eq!(mean.norm(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(var[0], 1.3, epsilon = 1e-10);
    }

    #[test]
    fn variance_never_increases_with_data() {
        let mut rng = StdRng::seed_from_u64(37);
        let cfg = KernelConfig::new(1.0, 0.35, 1.0);
        for _ in 0..10 {
            let mut ds = GPDataset::empty(InputSpace::S3, [0.05; 3], 1000);
            let tests: Vec<[f64; 4]> = (0..5).map(|_| random_unit4(&mut rng)).collect();
            let mut prev: Vec<f64> = tests.iter().map(|_| 1.0).collect();
            for _ in 0..20 {
                ds = ds
                    .push(&[(random_unit4(&mut rng).to_vec(), Vector3::zeros())])
                    .unwrap();
                let post = fit_posterior(&ds, &cfg).unwrap();
                for (t, p) in tests.iter().zip(prev.iter_mut()) {
                    let (_, var) = post.predict(t.as_slice());
                    assert!(var[0] <= *p + 1e-10, "variance grew: {} -> {}", p, var[0]);
                    *p = var[0];
                }
            }
        }
    }

    #[test]
    fn hyperparameter_fit_recovers_lengthscale() {
        // draw targets from a known kernel and check the grid pick
        let mut rng = StdRng::seed_from_u64(38);
        let true_cfg = KernelConfig::new(1.0, 0.4, 1.0);
        let n = 40;
        let inputs: Vec<[f64; 4]> = (0..n).map(|_| random_unit4(&mut rng)).collect();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] =
                    kernel_eval(InputSpace::S3, &true_cfg, &inputs[i], &inputs[j]);
            }
            k[(i, i)] += 1e-8;
        }
        let l = Cholesky::new(k).unwrap().l().clone_owned();
        let mut targets = Vec::new();
        let mut draws = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
        for d in &mut draws {
            let z = DVector::from_iterator(n, (0..n).map(|_| {
                // Box-Muller from the seeded stream
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            }));
            *d = &l * z;
        }
        for i in 0..n {
            targets.push(Vector3::new(draws[0][i], draws[1][i], draws[2][i]));
        }
        let mut ds = GPDataset::empty(InputSpace::S3, [1e-4; 3], 1000);
        let batch: Vec<_> = inputs
            .iter()
            .zip(&targets)
            .map(|(x, y)| (x.to_vec(), *y))
            .collect();
        ds = ds.push(&batch).unwrap();
        let grid = HyperGrid {
            sigma_f2: vec![0.1, 1.0, 10.0],
            ell: vec![0.1, 0.2, 0.4, 0.8, 1.6],
            lambda: vec![1.0],
        };
        let fit = fit_hyperparameters(&ds, &grid).unwrap();
        // within one grid cell of the generating length-scale
        assert!(fit.ell >= 0.2 && fit.ell <= 0.8, "fit ell {}", fit.ell);
    }

    #[test]
    fn hyperparameter_fit_zero_targets_and_ties() {
        let mut rng = StdRng::seed_from_u64(39);
        let inputs: Vec<[f64; 4]> = (0..10).map(|_| random_unit4(&mut rng)).collect();
        let batch: Vec<_> = inputs.iter().map(|x| (x.to_vec(), Vector3::zeros())).collect();
        let ds = GPDataset::empty(InputSpace::S3, [0.01; 3], 100)
            .push(&batch)
            .unwrap();
        let grid = HyperGrid {
            sigma_f2: vec![0.01, 0.1, 1.0],
            ell: vec![0.3, 0.4],
            lambda: vec![1.0],
        };
        // zero targets: smallest signal variance wins
        let fit = fit_hyperparameters(&ds, &grid).unwrap();
        assert_eq!(fit.sigma_f2, 0.01);

        assert!(matches!(
            fit_hyperparameters(
                &GPDataset::empty(InputSpace::S3, [0.01; 3], 10),
                &grid
            ),
            Err(GpError::NotEnoughData { .. })
        ));
    }

    #[test]
    fn information_gain_cases() {
        let mut rng = StdRng::seed_from_u64(40);
        let cfg = KernelConfig::new(2.0, 0.5, 1.0);

        // N = 1 closed form
        let ds = GPDataset::empty(InputSpace::S3, [0.1; 3], 10)
            .push(&[(random_unit4(&mut rng).to_vec(), Vector3::zeros())])
            .unwrap();
        let post = fit_posterior(&ds, &cfg).unwrap();
        let g = information_gain(&post).unwrap();
        assert_abs_diff_eq!(g[0], 0.5 * (1.0 + 2.0 / 0.1f64).ln(), epsilon = 1e-12);

        // vanishing signal variance
        let tiny = KernelConfig::new(1e-14, 0.5, 1.0);
        let post = fit_posterior(&ds, &tiny).unwrap();
        let g = information_gain(&post).unwrap();
        assert!(g[0] < 1e-10);

        // N = 3 dense determinant oracle
        let ds = s3_dataset(&mut rng, 3, 0.05);
        let post = fit_posterior(&ds, &cfg).unwrap();
        let g = information_gain(&post).unwrap();
        let mut kt = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                kt[(i, j)] = kernel_eval(InputSpace::S3, &cfg, &ds.inputs[i], &ds.inputs[j]);
            }
        }
        let m = DMatrix::identity(3, 3) + kt / 0.05;
        assert_abs_diff_eq!(g[0], 0.5 * m.determinant().ln(), epsilon = 1e-10);
    }

    #[test]
    fn info_gain_monotone_under_growth() {
        let mut rng = StdRng::seed_from_u64(41);
        let cfg = KernelConfig::new(1.0, 0.7, 1.0);
        let mut ds = GPDataset::empty(InputSpace::S3, [0.05; 3], 1000);
        let mut prev = 0.0;
        for _ in 0..15 {
            ds = ds
                .push(&[(random_unit4(&mut rng).to_vec(), Vector3::zeros())])
                .unwrap();
            let g = information_gain(&fit_posterior(&ds, &cfg).unwrap()).unwrap();
            assert!(g[0] >= prev - 1e-12);
            prev = g[0];
        }
    }

    #[test]
    fn beta_formula() {
        // second term vanishes
        assert_abs_diff_eq!(beta_bound(1.0, 0.0, 7, 0.5).unwrap(), 2.0f64.sqrt(), epsilon = 1e-15);

        // hand arithmetic: γ^{1/3} = 0.9 makes the log argument 10
        let b = beta_bound(0.0, 1.0, 0, 0.729).unwrap();
        let expect = (300.0 * 10.0f64.ln().powi(3)).sqrt();
        assert_abs_diff_eq!(b, expect, epsilon = 1e-10);
        assert_abs_diff_eq!(b, 60.52, epsilon = 5e-3);

        // monotone in N, Γ, γ
        let mut prev = 0.0;
        for n in [0usize, 5, 50] {
            let b = beta_bound(0.5, 1.0, n, 0.9).unwrap();
            assert!(b >= prev);
            prev = b;
        }
        prev = 0.0;
        for g in [0.5, 1.0, 4.0] {
            let b = beta_bound(0.5, g, 10, 0.9).unwrap();
            assert!(b >= prev);
            prev = b;
        }
        prev = 0.0;
        for c in [0.5, 0.9, 0.99] {
            let b = beta_bound(0.5, 1.0, 10, c).unwrap();
            assert!(b >= prev);
            prev = b;
        }

        assert!(matches!(beta_bound(1.0, 1.0, 1, 1.0), Err(GpError::InvalidConfidence(_))));
    }

    #[test]
    fn rho_bound_cases() {
        let mut rng = StdRng::seed_from_u64(42);
        let cfg = KernelConfig::new(1.0, 0.5, 1.0);

        // noise-free training point has zero variance hence zero bound
        let xi = random_unit4(&mut rng);
        let ds = GPDataset::empty(InputSpace::S3, [0.0; 3], 10)
            .push(&[(xi.to_vec(), Vector3::new(1.0, 0.0, 0.0))])
            .unwrap();
        let post = fit_posterior(&ds, &cfg).unwrap();
        let bm = ErrorBoundModel::from_posterior(&post, 1.0, 0.9).unwrap();
        assert!(rho_bound(&post, &bm, &xi) < 1e-4);

        // far from data the bound is σ_f ‖β‖
        let tight = KernelConfig::new(1.0, 0.05, 1.0);
        let ds = GPDataset::empty(InputSpace::S3, [0.0; 3], 10)
            .push(&[(vec![0.0, 0.0, 0.0, 1.0], Vector3::zeros())])
            .unwrap();
        let post = fit_posterior(&ds, &tight).unwrap();
        let bm = ErrorBoundModel::from_posterior(&post, 1.0, 0.9).unwrap();
        let far = [1.0, 0.0, 0.0, 0.0];
        let bnorm = (bm.beta.iter().map(|b| b * b).sum::<f64>()).sqrt();
        assert_abs_diff_eq!(rho_bound(&post, &bm, &far), bnorm, epsilon = 1e-10);
    }
}

