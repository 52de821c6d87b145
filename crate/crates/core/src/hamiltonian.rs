//! Two-body problem in the plane: Hamiltonian, its gradient, RK4
//! integration, training data and unrolled evaluation of learned fields.
//!
//! Phase states are packed as `[q1x, q1y, q2x, q2y, p1x, p1y, p2x, p2y]`.
//! Learned models approximate `∇H = (∂H/∂q, ∂H/∂p)` in that order, so the
//! dynamics read `dq/dt = out[4..8]`, `dp/dt = −out[0..4]`.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Network;
use crate::numerics::{mse_db, Matrix};

pub const STATE_DIM: usize = 8;
pub type PhaseState = [f64; STATE_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialConvention {
    /// `+g m1 m2 / ‖q1 − q2‖²`
    InverseSquareRepulsive,
    /// `−g m1 m2 / ‖q1 − q2‖`
    #[default]
    InverseDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitConfig {
    #[serde(default = "one")]
    pub m1: f64,
    #[serde(default = "one")]
    pub m2: f64,
    #[serde(default = "one")]
    pub g: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// RK4 substeps per `dt` for ground-truth trajectories.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub convention: PotentialConvention,
}

fn one() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.03
}
fn default_steps() -> usize {
    2000
}
fn default_substeps() -> usize {
    10
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            g: 1.0,
            dt: default_dt(),
            steps: default_steps(),
            substeps: default_substeps(),
            convention: PotentialConvention::default(),
        }
    }
}

impl OrbitConfig {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("m1", self.m1), ("m2", self.m2), ("g", self.g), ("dt", self.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{n} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be positive".into()));
        }
        Ok(())
    }

    fn reduced_mass(&self) -> f64 {
        self.m1 * self.m2 / (self.m1 + self.m2)
    }
}

fn separation(s: &[f64]) -> Result<(f64, f64, f64)> {
    let (dx, dy) = (s[0] - s[2], s[1] - s[3]);
    let r2 = dx * dx + dy * dy;
    if !(r2.sqrt() > 1e-6) {
        return Err(Error::InvalidArgument(format!("bodies coincide (separation {})", r2.sqrt())));
    }
    Ok((dx, dy, r2))
}

/// `‖p_CM‖²/(m1+m2) + (‖p1‖² + ‖p2‖²)/(2μ) + V(‖q1 − q2‖)`.
pub fn hamiltonian_value(s: &[f64], cfg: &OrbitConfig) -> Result<f64> {
    let (_, _, r2) = separation(s)?;
    let mu = cfg.reduced_mass();
    let (px, py) = (s[4] + s[6], s[5] + s[7]);
    let kin = (px * px + py * py) / (cfg.m1 + cfg.m2) + s[4..8].iter().map(|v| v * v).sum::<f64>() / (2.0 * mu);
    let k = cfg.g * cfg.m1 * cfg.m2;
    let pot = match cfg.convention {
        PotentialConvention::InverseSquareRepulsive => k / r2,
        PotentialConvention::InverseDistance => -k / r2.sqrt(),
    };
    Ok(kin + pot)
}

/// `∇H = (∂H/∂q, ∂H/∂p)` as one 8-vector.
pub fn hamiltonian_grads(s: &[f64], cfg: &OrbitConfig) -> Result<PhaseState> {
    let (dx, dy, r2) = separation(s)?;
    let mu = cfg.reduced_mass();
    let k = cfg.g * cfg.m1 * cfg.m2;
    // ∂V/∂q1 = c (q1 − q2)
    let c = match cfg.convention {
        PotentialConvention::InverseSquareRepulsive => -2.0 * k / (r2 * r2),
        PotentialConvention::InverseDistance => k / (r2 * r2.sqrt()),
    };
    let cm = 2.0 / (cfg.m1 + cfg.m2);
    let (px, py) = (s[4] + s[6], s[5] + s[7]);
    Ok([
        c * dx,
        c * dy,
        -c * dx,
        -c * dy,
        cm * px + s[4] / mu,
        cm * py + s[5] / mu,
        cm * px + s[6] / mu,
        cm * py + s[7] / mu,
    ])
}

/// Phase velocity `(∂H/∂p, −∂H/∂q)` from a gradient estimate.
pub fn phase_velocity(grad_h: &[f64]) -> PhaseState {
    let mut v = [0.0; STATE_DIM];
    v[..4].copy_from_slice(&grad_h[4..8]);
    for i in 0..4 {
        v[4 + i] = -grad_h[i];
    }
    v
}

/// Estimates of `∇H` on a batch of phase states, one per row.
pub trait GradientField {
    fn grad_h(&self, states: &Matrix) -> Result<Matrix>;
}

/// Exact gradient under the given configuration.
pub struct TrueField<'a>(pub &'a OrbitConfig);

impl GradientField for TrueField<'_> {
    fn grad_h(&self, states: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(states.rows(), STATE_DIM);
        for i in 0..states.rows() {
            out.row_mut(i).copy_from_slice(&hamiltonian_grads(states.row(i), self.0)?);
        }
        Ok(out)
    }
}

pub struct ZeroField;

impl GradientField for ZeroField {
    fn grad_h(&self, states: &Matrix) -> Result<Matrix> {
        Ok(Matrix::zeros(states.rows(), STATE_DIM))
    }
}

impl GradientField for Network {
    fn grad_h(&self, states: &Matrix) -> Result<Matrix> {
        self.forward_batch(states)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    /// Set when a non-finite state stopped the integration early.
    pub aborted: bool,
}

/// Classic RK4 for `dx/dt = field(x)`; `steps + 1` states including the start.
pub fn integrate_rk4<F>(field: F, x0: &[f64], dt: f64, steps: usize) -> Trajectory
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut tmp = vec![0.0; n];
    for _ in 0..steps {
        let k1 = field(&x);
        (0..n).for_each(|i| tmp[i] = x[i] + 0.5 * dt * k1[i]);
        let k2 = field(&tmp);
        (0..n).for_each(|i| tmp[i] = x[i] + 0.5 * dt * k2[i]);
        let k3 = field(&tmp);
        (0..n).for_each(|i| tmp[i] = x[i] + dt * k3[i]);
        let k4 = field(&tmp);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Trajectory { states, aborted: true };
        }
        states.push(x.clone());
    }
    Trajectory { states, aborted: false }
}

fn phase_rows(grad: &Matrix) -> Matrix {
    let mut v = Matrix::zeros(grad.rows(), STATE_DIM);
    for i in 0..grad.rows() {
        v.row_mut(i).copy_from_slice(&phase_velocity(grad.row(i)));
    }
    v
}

/// RK4 on all rows at once with the learned or true `∇H`; returns one
/// snapshot per recorded step. Stops at the first non-finite state.
pub fn unroll_batch<G: GradientField + ?Sized>(
    field: &G,
    x0: &Matrix,
    dt: f64,
    steps: usize,
    substeps: usize,
) -> Result<(Vec<Matrix>, bool)> {
    let h = dt / substeps as f64;
    let mut snaps = Vec::with_capacity(steps + 1);
    snaps.push(x0.clone());
    let mut x = x0.clone();
    let axpy = |base: &Matrix, k: &Matrix, a: f64| {
        let mut out = base.clone();
        out.add_scaled(a, k);
        out
    };
    for _ in 0..steps {
        for _ in 0..substeps {
            let k1 = phase_rows(&field.grad_h(&x)?);
            let k2 = phase_rows(&field.grad_h(&axpy(&x, &k1, 0.5 * h))?);
            let k3 = phase_rows(&field.grad_h(&axpy(&x, &k2, 0.5 * h))?);
            let k4 = phase_rows(&field.grad_h(&axpy(&x, &k3, h))?);
            x.add_scaled(h / 6.0, &k1);
            x.add_scaled(h / 3.0, &k2);
            x.add_scaled(h / 3.0, &k3);
            x.add_scaled(h / 6.0, &k4);
        }
        if !x.is_finite() {
            return Ok((snaps, true));
        }
        snaps.push(x.clone());
    }
    Ok((snaps, false))
}

/// Near-circular bound orbit with zero total momentum. Both bodies sit at
/// distance `radius` from the origin: with `p1 = −p2` each moves at `p_i/μ`,
/// so the midpoint stays fixed.
pub fn circular_orbit(radius: f64, angle: f64, speed_factor: f64, cfg: &OrbitConfig) -> PhaseState {
    let k = cfg.g * cfg.m1 * cfg.m2;
    let p = speed_factor * (cfg.reduced_mass() * k / (4.0 * radius)).sqrt();
    let (c, s) = (angle.cos(), angle.sin());
    [radius * c, radius * s, -radius * c, -radius * s, -p * s, p * c, p * s, -p * c]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_orbits: usize,
    /// States recorded per orbit, evenly spaced over `steps · dt`.
    #[serde(default = "default_samples")]
    pub samples_per_orbit: usize,
    #[serde(default = "default_rmin")]
    pub radius_min: f64,
    #[serde(default = "default_rmax")]
    pub radius_max: f64,
    /// Relative spread of the initial speed around the circular value.
    #[serde(default = "default_speed_noise")]
    pub speed_noise: f64,
    pub seed: u64,
}

fn default_samples() -> usize {
    50
}
fn default_rmin() -> f64 {
    0.5
}
fn default_rmax() -> f64 {
    1.5
}
fn default_speed_noise() -> f64 {
    0.1
}

impl DatasetConfig {
    pub fn new(n_orbits: usize, seed: u64) -> Self {
        Self {
            n_orbits,
            samples_per_orbit: default_samples(),
            radius_min: default_rmin(),
            radius_max: default_rmax(),
            speed_noise: default_speed_noise(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianData {
    pub initial: Vec<PhaseState>,
    /// Phase states, one per row.
    pub states: Matrix,
    /// `∇H` at each state.
    pub targets: Matrix,
}

const MAX_ATTEMPTS: usize = 1000;

/// Ground-truth trajectory of one orbit with `cfg.substeps` RK4 substeps per step.
pub fn ground_truth(x0: &PhaseState, cfg: &OrbitConfig) -> Result<Vec<Matrix>> {
    let x = Matrix::from_vec(1, STATE_DIM, x0.to_vec())?;
    let (snaps, aborted) = unroll_batch(&TrueField(cfg), &x, cfg.dt, cfg.steps, cfg.substeps)?;
    if aborted {
        return Err(Error::NonFinite("ground-truth trajectory".into()));
    }
    Ok(snaps)
}

/// Bound-orbit initial conditions; collisions and escapes are resampled.
pub fn sample_initial_conditions(cfg: &OrbitConfig, ds: &DatasetConfig) -> Result<Vec<PhaseState>> {
    cfg.validate()?;
    if cfg.convention == PotentialConvention::InverseSquareRepulsive {
        return Err(Error::InvalidArgument(
            "the as-written potential is repulsive and has no bound orbits to sample".into(),
        ));
    }
    if !(0.0 < ds.radius_min && ds.radius_min <= ds.radius_max) || !(0.0..1.0).contains(&ds.speed_noise) {
        return Err(Error::Config("orbit radius range or speed noise out of bounds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ds.seed);
    let mut out = Vec::with_capacity(ds.n_orbits);
    let mut attempts = 0;
    while out.len() < ds.n_orbits {
        attempts += 1;
        if attempts > MAX_ATTEMPTS * ds.n_orbits.max(1) {
            return Err(Error::InvalidArgument("could not sample enough bound orbits".into()));
        }
        let radius = rng.gen_range(ds.radius_min..=ds.radius_max);
        let angle = rng.gen_range(0.0..TAU);
        let speed = 1.0 + ds.speed_noise * rng.gen_range(-1.0..=1.0);
        let x0 = circular_orbit(radius, angle, speed, cfg);
        if hamiltonian_value(&x0, cfg)? < 0.0 {
            out.push(x0);
        }
    }
    Ok(out)
}

fn orbit_is_sane(snaps: &[Matrix], r0: f64) -> bool {
    snaps.iter().all(|s| {
        let r = ((s[(0, 0)] - s[(0, 2)]).powi(2) + (s[(0, 1)] - s[(0, 3)]).powi(2)).sqrt();
        r > 0.1 * r0 && r < 10.0 * r0
    })
}

/// Integrates sampled orbits and records `(state, ∇H)` pairs.
pub fn generate_dataset(cfg: &OrbitConfig, ds: &DatasetConfig) -> Result<HamiltonianData> {
    let mut initial = Vec::with_capacity(ds.n_orbits);
    let mut states = Vec::new();
    let mut targets = Vec::new();
    let mut seed = ds.seed;
    let stride = (cfg.steps / ds.samples_per_orbit.max(1)).max(1);
    while initial.len() < ds.n_orbits {
        let batch = sample_initial_conditions(cfg, &DatasetConfig { n_orbits: ds.n_orbits - initial.len(), seed, ..*ds })?;
        seed = seed.wrapping_add(0x9e37_79b9);
        for x0 in batch {
            let Ok(snaps) = ground_truth(&x0, cfg) else { continue };
            let r0 = ((x0[0] - x0[2]).powi(2) + (x0[1] - x0[3]).powi(2)).sqrt();
            if !orbit_is_sane(&snaps, r0) {
                continue;
            }
            for s in snaps.iter().step_by(stride).take(ds.samples_per_orbit) {
                states.extend_from_slice(s.row(0));
                targets.extend(hamiltonian_grads(s.row(0), cfg)?);
            }
            initial.push(x0);
        }
    }
    let n = states.len() / STATE_DIM;
    Ok(HamiltonianData {
        initial,
        states: Matrix::from_vec(n, STATE_DIM, states)?,
        targets: Matrix::from_vec(n, STATE_DIM, targets)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrollMetrics {
    pub coordinate_mse: f64,
    pub energy_mse: f64,
    pub coordinate_mse_db: f64,
    pub energy_mse_db: f64,
    /// Largest `|H(t) − H(0)| / |H(0)|` along the model trajectories.
    pub max_relative_energy_drift: f64,
    pub diverged: bool,
}

/// Unrolled model trajectories next to the reference, per orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollResult {
    pub metrics: UnrollMetrics,
    /// `model[k]` is the batch of states after `k` steps.
    pub model: Vec<Matrix>,
    pub reference: Vec<Matrix>,
}

/// Unrolls `model` from each test initial condition with RK4 at `cfg.dt`
/// (no substeps) and compares with substepped ground truth.
pub fn evaluate_unrolled<G: GradientField + ?Sized>(
    model: &G,
    cfg: &OrbitConfig,
    test: &[PhaseState],
) -> Result<UnrollResult> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::EmptyInput("evaluate_unrolled"));
    }
    let x0 = Matrix::from_vec(test.len(), STATE_DIM, test.iter().flatten().copied().collect())?;
    let (reference, ref_bad) = unroll_batch(&TrueField(cfg), &x0, cfg.dt, cfg.steps, cfg.substeps)?;
    if ref_bad {
        return Err(Error::NonFinite("ground-truth trajectory".into()));
    }
    let (model_traj, diverged) = unroll_batch(model, &x0, cfg.dt, cfg.steps, 1)?;
    let h0: Vec<f64> = test.iter().map(|s| hamiltonian_value(s, cfg)).collect::<Result<_>>()?;

    let (mut coord, mut energy, mut drift) = (0.0, 0.0, 0.0f64);
    let mut count = 0usize;
    let mut energy_ok = true;
    for (snap, truth) in model_traj.iter().zip(&reference) {
        for i in 0..test.len() {
            let (a, b) = (snap.row(i), truth.row(i));
            coord += (0..4).map(|j| (a[j] - b[j]).powi(2)).sum::<f64>();
            match hamiltonian_value(a, cfg) {
                Ok(h) => {
                    energy += (h - h0[i]).powi(2);
                    drift = drift.max(((h - h0[i]) / h0[i]).abs());
                }
                Err(_) => energy_ok = false,
            }
        }
        count += test.len();
    }
    let diverged = diverged || !energy_ok;
    let coordinate_mse = if diverged { f64::INFINITY } else { coord / (4 * count) as f64 };
    let energy_mse = if diverged { f64::INFINITY } else { energy / count as f64 };
    Ok(UnrollResult {
        metrics: UnrollMetrics {
            coordinate_mse,
            energy_mse,
            coordinate_mse_db: mse_db(coordinate_mse),
            energy_mse_db: mse_db(energy_mse),
            max_relative_energy_drift: if diverged { f64::INFINITY } else { drift },
            diverged,
        },
        model: model_traj,
        reference,
    })
}

/// `t,q1x,q1y,q2x,q2y,energy` rows for orbit `orbit` of a batch trajectory.
pub fn trajectory_csv(snaps: &[Matrix], orbit: usize, cfg: &OrbitConfig) -> String {
    let mut s = String::from("t,q1x,q1y,q2x,q2y,energy\n");
    for (k, snap) in snaps.iter().enumerate() {
        let r = snap.row(orbit);
        let e = hamiltonian_value(r, cfg).unwrap_or(f64::NAN);
        let _ = writeln!(s, "{},{},{},{},{},{}", k as f64 * cfg.dt, r[0], r[1], r[2], r[3], e);
    }
    s
}
