//! Config-driven experiment runs: gradient-field regression trials with a
//! learning-rate sweep, and the two-body Hamiltonian protocol. Produces CSV
//! text; [`write_outputs`] puts it on disk.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::error::{Error, Result};
use crate::gradcheck::{audit_symmetry, Domain};
use crate::hamiltonian::{
    evaluate_unrolled, generate_dataset, sample_initial_conditions, trajectory_csv, DatasetConfig, GradientField,
    OrbitConfig, TrueField, UnrollMetrics, ZeroField, STATE_DIM,
};
use crate::networks::{ConstraintMode, ModuleSpec, Network, NetworkSpec};
use crate::numerics::{mse_db, Matrix};
use crate::tasks::{sample_unit_cube, Task, TaskSpec};
use crate::train::{loss_mse, train_loop, AdamConfig, TrainConfig, TrainData, TrainReport};

// ---- configuration ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SingleLayer,
    GradnetM,
    GradnetC,
}

fn default_modules() -> usize {
    4
}
fn default_layers() -> usize {
    3
}
fn default_rho() -> ActivationSpec {
    ActivationSpec::Constant { value: 1.0 }
}

/// Model section: an architecture plus either a hidden width or a
/// parameter budget the width is fitted to (within 2%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default)]
    pub mode: ConstraintMode,
    pub activation: ActivationSpec,
    #[serde(default = "default_rho")]
    pub rho: ActivationSpec,
    #[serde(default = "default_modules")]
    pub modules: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub hidden: Option<usize>,
    pub param_budget: Option<usize>,
    /// Budget expressed per input dimension, `budget = params_per_dim · d`.
    pub params_per_dim: Option<usize>,
}

pub const BUDGET_TOLERANCE: f64 = 0.02;

impl ModelConfig {
    pub fn label(&self) -> String {
        let base = match self.architecture {
            Architecture::SingleLayer => "gradnet_single",
            Architecture::GradnetM => "gradnet_m",
            Architecture::GradnetC => "gradnet_c",
        };
        match self.mode {
            ConstraintMode::Monotone => format!("m{base}"),
            ConstraintMode::None => base.to_string(),
        }
    }

    fn spec_with_hidden(&self, d: usize, hidden: usize) -> NetworkSpec {
        match self.architecture {
            Architecture::SingleLayer => NetworkSpec::SingleLayer {
                dim: d,
                hidden,
                activation: self.activation.clone(),
                mode: self.mode,
            },
            Architecture::GradnetM => NetworkSpec::GradnetM {
                dim: d,
                modules: vec![
                    ModuleSpec { hidden, activation: self.activation.clone(), rho: self.rho.clone() };
                    self.modules
                ],
                mode: self.mode,
            },
            Architecture::GradnetC => NetworkSpec::GradnetC {
                dim: d,
                hidden,
                activations: vec![self.activation.clone(); self.layers],
                mode: self.mode,
            },
        }
    }

    fn budget(&self, d: usize) -> Option<usize> {
        self.param_budget.or(self.params_per_dim.map(|p| p * d))
    }

    /// Resolves the hidden width and builds a spec for input dimension `d`.
    pub fn to_spec(&self, d: usize) -> Result<NetworkSpec> {
        let given = [self.hidden.is_some(), self.param_budget.is_some(), self.params_per_dim.is_some()];
        if given.iter().filter(|&&b| b).count() != 1 {
            return Err(Error::Config("model needs exactly one of hidden, param_budget, params_per_dim".into()));
        }
        if self.modules == 0 || self.layers == 0 {
            return Err(Error::Config("modules and layers must be positive".into()));
        }
        let count = |h: usize| -> Result<usize> { Ok(probe(&self.spec_with_hidden(d, h))?.num_params()) };
        let hidden = match (self.hidden, self.budget(d)) {
            (Some(h), _) => h,
            (None, Some(budget)) => {
                // parameter count is increasing in the width
                let (mut lo, mut hi) = (1usize, 1usize);
                while count(hi)? < budget {
                    lo = hi;
                    hi *= 2;
                    if hi > 1 << 24 {
                        return Err(Error::Config(format!("parameter budget {budget} is out of reach")));
                    }
                }
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    if count(mid)? < budget {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let pick = if budget.abs_diff(count(lo)?) <= budget.abs_diff(count(hi)?) { lo } else { hi };
                let got = count(pick)?;
                if (got as f64 - budget as f64).abs() > BUDGET_TOLERANCE * budget as f64 {
                    return Err(Error::Config(format!(
                        "closest width {pick} gives {got} parameters, more than 2% from the budget {budget}"
                    )));
                }
                pick
            }
            _ => unreachable!(),
        };
        if hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        let spec = self.spec_with_hidden(d, hidden);
        probe(&spec)?;
        Ok(spec)
    }
}

fn probe(spec: &NetworkSpec) -> Result<Network> {
    Network::init(spec, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| Error::Config(format!("model: {e}")))
}

fn default_val_points() -> usize {
    10_000
}
fn default_eval_every() -> usize {
    100
}
fn default_divergence() -> f64 {
    1e6
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// One run per rate; the best by validation MSE is kept.
    pub learning_rates: Vec<f64>,
    pub batch_size: usize,
    /// Fresh samples every iteration. Exclusive with `epochs`.
    pub iterations: Option<usize>,
    /// Passes over a fixed set of `train_points` samples.
    pub epochs: Option<usize>,
    pub train_points: Option<usize>,
    #[serde(default = "default_val_points")]
    pub val_points: usize,
    #[serde(default = "default_val_points")]
    pub test_points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub projection: bool,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
    #[serde(default)]
    pub adam: Option<AdamBetas>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamBetas {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl TrainSection {
    fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() {
            return Err(Error::Config("train.learning_rates is empty".into()));
        }
        if self.val_points == 0 || self.test_points == 0 {
            return Err(Error::Config("val_points and test_points must be positive".into()));
        }
        match (self.iterations, self.epochs, self.train_points) {
            (Some(_), None, _) => {}
            (None, Some(_), Some(n)) if n > 0 => {}
            (None, Some(_), _) => return Err(Error::Config("epochs need a positive train_points".into())),
            _ => return Err(Error::Config("give exactly one of train.iterations, train.epochs".into())),
        }
        for &lr in &self.learning_rates {
            self.train_config(lr, 0, 0).validate()?;
        }
        Ok(())
    }

    fn iterations(&self, n_fixed: usize) -> usize {
        match (self.iterations, self.epochs) {
            (Some(it), _) => it,
            (None, Some(ep)) => ep * n_fixed.div_ceil(self.batch_size.max(1)),
            _ => 0,
        }
    }

    fn train_config(&self, lr: f64, iterations: usize, seed: u64) -> TrainConfig {
        let b = self.adam.unwrap_or(AdamBetas { beta1: 0.9, beta2: 0.999, eps: 1e-8 });
        TrainConfig {
            adam: AdamConfig { learning_rate: lr, beta1: b.beta1, beta2: b.beta2, eps: b.eps },
            batch_size: self.batch_size,
            iterations,
            seed,
            projection: self.projection,
            eval_every: self.eval_every,
            divergence_threshold: self.divergence_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Wall-clock seconds break byte-for-byte reproducibility, so they are opt-in.
    #[serde(default)]
    pub wall_time: bool,
    #[serde(default = "yes")]
    pub save_models: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "one")]
    pub trials: usize,
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        self.task.build().map_err(|e| Error::Config(format!("task: {e}")))?;
        self.model.to_spec(self.task.dim())?;
        self.train.validate()
    }
}

// ---- seeds and statistics ----------------------------------------------------

/// splitmix64 finaliser over `(base, trial, stream)`.
pub fn derive_seed(base: u64, trial: usize, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add((trial as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(stream.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_VAL: u64 = 3;
const STREAM_TEST: u64 = 4;
const STREAM_FIXED: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
    pub std_err: f64,
}

pub fn summarize(v: &[f64]) -> Summary {
    let n = v.len();
    if n == 0 {
        return Summary { n, mean: f64::NAN, std: f64::NAN, std_err: f64::NAN };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { n, mean, std, std_err: std / (n as f64).sqrt() }
}

// ---- gradient-field experiments -------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub trial: usize,
    pub model: String,
    pub d: usize,
    pub params: usize,
    pub learning_rate: f64,
    pub initial_val_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub mse_db: f64,
    pub diverged: bool,
    pub wall_time: f64,
}

pub const METRICS_HEADER: &str = "trial,model,d,params,learning_rate,initial_val_mse,val_mse,test_mse,mse_db,diverged";

impl MetricsRow {
    fn csv(&self, wall_time: bool) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.trial,
            self.model,
            self.d,
            self.params,
            self.learning_rate,
            self.initial_val_mse,
            self.val_mse,
            self.test_mse,
            self.mse_db,
            self.diverged
        );
        if wall_time {
            let _ = write!(s, ",{:.3}", self.wall_time);
        }
        s
    }
}

/// Everything an experiment produces, keyed by output file name.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub files: Vec<(String, String)>,
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
    pub summary_line: String,
    /// Set when some trial had every learning rate diverge.
    pub failed: bool,
    pub models: Vec<Network>,
}

impl ExperimentOutcome {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

struct ChildRun {
    net: Network,
    report: TrainReport,
    lr: f64,
}

/// Runs every trial; trial `t` uses seeds derived from `train.seed` and `t`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let task = cfg.task.build()?;
    let d = task.dim();
    let spec = cfg.model.to_spec(d)?;
    let label = cfg.model.label();
    let tr = &cfg.train;

    let mut files = Vec::new();
    let mut rows = Vec::new();
    let mut models = Vec::new();
    let mut failed = false;
    for trial in 0..cfg.trials {
        let start = Instant::now();
        let seed = |s| derive_seed(tr.seed, trial, s);
        let xv = sample_unit_cube(d, tr.val_points, &mut ChaCha8Rng::seed_from_u64(seed(STREAM_VAL)));
        let yv = task.gradient_batch(&xv);
        let xt = sample_unit_cube(d, tr.test_points, &mut ChaCha8Rng::seed_from_u64(seed(STREAM_TEST)));
        let yt = task.gradient_batch(&xt);
        let fixed = tr.train_points.filter(|_| tr.epochs.is_some()).map(|n| {
            let x = sample_unit_cube(d, n, &mut ChaCha8Rng::seed_from_u64(seed(STREAM_FIXED)));
            let y = task.gradient_batch(&x);
            (x, y)
        });
        let iterations = tr.iterations(fixed.as_ref().map_or(0, |f| f.0.rows()));

        let mut best: Option<ChildRun> = None;
        for (k, &lr) in tr.learning_rates.iter().enumerate() {
            let mut net = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed(STREAM_INIT)))?;
            let data = match &fixed {
                Some((x, y)) => TrainData::Fixed { x, y },
                None => TrainData::Fresh(&task),
            };
            let report = train_loop(&mut net, data, (&xv, &yv), &tr.train_config(lr, iterations, seed(STREAM_TRAIN)))?;
            files.push((format!("curve_trial{trial}_lr{k}.csv"), report.to_csv()));
            let ok = report.diverged.is_none() && report.final_val_mse.is_finite();
            let better = best.as_ref().is_none_or(|b| report.final_val_mse < b.report.final_val_mse);
            if ok && better {
                best = Some(ChildRun { net, report, lr });
            }
        }
        let Some(best) = best else {
            failed = true;
            break;
        };
        let test_mse = loss_mse(&best.net.forward_batch(&xt)?, &yt)?;
        rows.push(MetricsRow {
            trial,
            model: label.clone(),
            d,
            params: best.net.num_params(),
            learning_rate: best.lr,
            initial_val_mse: best.report.initial_val_mse,
            val_mse: best.report.final_val_mse,
            test_mse,
            mse_db: mse_db(test_mse),
            diverged: false,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if cfg.output.save_models {
            files.push((format!("model_trial{trial}.json"), best.net.to_json()?));
        }
        models.push(best.net);
    }

    let mut metrics = String::from(METRICS_HEADER);
    if cfg.output.wall_time {
        metrics.push_str(",wall_time");
    }
    metrics.push('\n');
    for r in &rows {
        metrics.push_str(&r.csv(cfg.output.wall_time));
        metrics.push('\n');
    }
    files.insert(0, ("metrics.csv".into(), metrics));
    let summary = summarize(&rows.iter().map(|r| r.mse_db).collect::<Vec<_>>());
    let summary_line = format!(
        "{label} d={d} MSE_dB = {:.2} ± {:.2} (std) ± {:.2} (std err), {} trial(s){}",
        summary.mean,
        summary.std,
        summary.std_err,
        summary.n,
        if failed { ", FAILED: every learning rate diverged" } else { "" }
    );
    files.push(("summary.txt".into(), format!("{summary_line}\n")));
    Ok(ExperimentOutcome { files, rows, summary, summary_line, failed, models })
}

/// Writes each `(name, contents)` pair under `dir`.
pub fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, contents) in files {
        std::fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

/// Field values and errors on a `side × side` grid over the unit square:
/// `x1,x2,true1,true2,pred1,pred2,err` with `err` the ℓ2 error.
pub fn export_field_grid(net: &Network, task: &Task, side: usize) -> Result<String> {
    if task.dim() != 2 || net.dim() != 2 {
        return Err(Error::InvalidArgument("plot export is defined for 2D tasks and models".into()));
    }
    if side < 2 {
        return Err(Error::InvalidArgument("grid side must be at least 2".into()));
    }
    let h = 1.0 / (side - 1) as f64;
    let x = Matrix::from_fn(side * side, 2, |r, j| if j == 0 { (r / side) as f64 * h } else { (r % side) as f64 * h });
    let pred = net.forward_batch(&x)?;
    let truth = task.gradient_batch(&x);
    let mut s = String::from("x1,x2,true1,true2,pred1,pred2,err\n");
    for i in 0..x.rows() {
        let (t, p) = (truth.row(i), pred.row(i));
        let err = ((t[0] - p[0]).powi(2) + (t[1] - p[1]).powi(2)).sqrt();
        let _ = writeln!(s, "{},{},{},{},{},{},{}", x[(i, 0)], x[(i, 1)], t[0], t[1], p[0], p[1], err);
    }
    Ok(s)
}

// ---- Hamiltonian experiment ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Train a network from the `[model]` section.
    #[default]
    Network,
    GroundTruth,
    Zero,
}

fn default_train_orbits() -> usize {
    40
}
fn default_test_orbits() -> usize {
    5
}
fn default_symmetry_points() -> usize {
    100
}
fn default_traj_files() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianData {
    #[serde(default = "default_train_orbits")]
    pub train_orbits: usize,
    #[serde(default = "default_test_orbits")]
    pub val_orbits: usize,
    #[serde(default = "default_test_orbits")]
    pub test_orbits: usize,
    #[serde(default = "default_samples")]
    pub samples_per_orbit: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub field: FieldKind,
    #[serde(default)]
    pub orbit: OrbitConfig,
    pub data: HamiltonianData,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainSection>,
    pub output: OutputSection,
    #[serde(default = "default_symmetry_points")]
    pub symmetry_points: usize,
    /// Test orbits whose trajectories are written out.
    #[serde(default = "default_traj_files")]
    pub trajectory_files: usize,
}

impl HamiltonianConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.orbit.validate()?;
        if self.trials == 0 || self.data.test_orbits == 0 {
            return Err(Error::Config("trials and test_orbits must be positive".into()));
        }
        if self.field == FieldKind::Network {
            let (Some(m), Some(t)) = (&self.model, &self.train) else {
                return Err(Error::Config("a network field needs [model] and [train] sections".into()));
            };
            if self.data.train_orbits == 0 || self.data.val_orbits == 0 {
                return Err(Error::Config("train_orbits and val_orbits must be positive".into()));
            }
            m.to_spec(STATE_DIM)?;
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianRow {
    pub trial: usize,
    pub model: String,
    pub learning_rate: f64,
    pub val_mse: f64,
    pub metrics: UnrollMetrics,
    pub symmetry_worst: f64,
    pub symmetry_pass: bool,
    pub wall_time: f64,
}

pub const HAMILTONIAN_HEADER: &str =
    "trial,model,learning_rate,val_mse,coordinate_mse,energy_mse,coordinate_mse_db,energy_mse_db,max_energy_drift,diverged,symmetry_worst,symmetry_pass";

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianOutcome {
    pub files: Vec<(String, String)>,
    pub rows: Vec<HamiltonianRow>,
    pub coordinate: Summary,
    pub energy: Summary,
    pub summary_line: String,
    pub failed: bool,
}

fn bounding_box(x: &Matrix) -> Domain {
    let d = x.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..x.rows() {
        for j in 0..d {
            lo[j] = lo[j].min(x[(i, j)]);
            hi[j] = hi[j].max(x[(i, j)]);
        }
    }
    Domain { lo, hi }
}

pub fn run_hamiltonian(cfg: &HamiltonianConfig) -> Result<HamiltonianOutcome> {
    cfg.validate()?;
    let orbit = &cfg.orbit;
    let dc = &cfg.data;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    let mut failed = false;
    for trial in 0..cfg.trials {
        let start = Instant::now();
        let seed = |s| derive_seed(dc.seed, trial, s);
        let ds = |n, s| DatasetConfig { samples_per_orbit: dc.samples_per_orbit, ..DatasetConfig::new(n, seed(s)) };
        let test = sample_initial_conditions(orbit, &ds(dc.test_orbits, STREAM_TEST))?;

        let (label, net, lr, val_mse, train_box) = match cfg.field {
            FieldKind::GroundTruth => ("ground_truth".to_string(), None, 0.0, 0.0, None),
            FieldKind::Zero => ("zero".to_string(), None, 0.0, f64::NAN, None),
            FieldKind::Network => {
                let (mc, tr) = (cfg.model.as_ref().expect("validated"), cfg.train.as_ref().expect("validated"));
                let spec = mc.to_spec(STATE_DIM)?;
                let train = generate_dataset(orbit, &ds(dc.train_orbits, STREAM_FIXED))?;
                let val = generate_dataset(orbit, &ds(dc.val_orbits, STREAM_VAL))?;
                let iterations = tr.iterations(train.states.rows());
                let mut best: Option<ChildRun> = None;
                for (k, &lr) in tr.learning_rates.iter().enumerate() {
                    let mut net = Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed(STREAM_INIT)))?;
                    let report = train_loop(
                        &mut net,
                        TrainData::Fixed { x: &train.states, y: &train.targets },
                        (&val.states, &val.targets),
                        &tr.train_config(lr, iterations, seed(STREAM_TRAIN)),
                    )?;
                    files.push((format!("curve_trial{trial}_lr{k}.csv"), report.to_csv()));
                    let ok = report.diverged.is_none() && report.final_val_mse.is_finite();
                    if ok && best.as_ref().is_none_or(|b| report.final_val_mse < b.report.final_val_mse) {
                        best = Some(ChildRun { net, report, lr });
                    }
                }
                let Some(best) = best else {
                    failed = true;
                    break;
                };
                if cfg.output.save_models {
                    files.push((format!("model_trial{trial}.json"), best.net.to_json()?));
                }
                let val_mse = best.report.final_val_mse;
                (mc.label(), Some(best.net), best.lr, val_mse, Some(bounding_box(&train.states)))
            }
        };

        let truth = TrueField(orbit);
        let field: &dyn GradientField = match (&net, cfg.field) {
            (Some(n), _) => n,
            (None, FieldKind::GroundTruth) => &truth,
            _ => &ZeroField,
        };
        let res = evaluate_unrolled(field, orbit, &test)?;
        let (symmetry_worst, symmetry_pass) = match (&net, train_box) {
            (Some(n), Some(dom)) => {
                let c = audit_symmetry(|x: &[f64]| n.forward(x).unwrap_or(vec![f64::NAN; STATE_DIM]), &dom, cfg.symmetry_points, 1e-5, seed(STREAM_VAL));
                (c.worst_violation, c.pass)
            }
            _ => (0.0, true),
        };
        for k in 0..cfg.trajectory_files.min(test.len()) {
            files.push((format!("trajectory_trial{trial}_orbit{k}_model.csv"), trajectory_csv(&res.model, k, orbit)));
            files.push((format!("trajectory_trial{trial}_orbit{k}_truth.csv"), trajectory_csv(&res.reference, k, orbit)));
        }
        failed |= res.metrics.diverged;
        rows.push(HamiltonianRow {
            trial,
            model: label,
            learning_rate: lr,
            val_mse,
            metrics: res.metrics,
            symmetry_worst,
            symmetry_pass,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }

    let mut csv = String::from(HAMILTONIAN_HEADER);
    if cfg.output.wall_time {
        csv.push_str(",wall_time");
    }
    csv.push('\n');
    for r in &rows {
        let m = &r.metrics;
        let _ = write!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.model,
            r.learning_rate,
            r.val_mse,
            m.coordinate_mse,
            m.energy_mse,
            m.coordinate_mse_db,
            m.energy_mse_db,
            m.max_relative_energy_drift,
            m.diverged,
            r.symmetry_worst,
            r.symmetry_pass
        );
        if cfg.output.wall_time {
            let _ = write!(csv, ",{:.3}", r.wall_time);
        }
        csv.push('\n');
    }
    files.insert(0, ("metrics.csv".into(), csv));
    let coordinate = summarize(&rows.iter().map(|r| r.metrics.coordinate_mse_db).collect::<Vec<_>>());
    let energy = summarize(&rows.iter().map(|r| r.metrics.energy_mse_db).collect::<Vec<_>>());
    let label = rows.first().map_or("none", |r| r.model.as_str());
    let summary_line = format!(
        "{label} coordinate MSE_dB = {:.2} ± {:.2} (std) ± {:.2} (std err), energy MSE_dB = {:.2} ± {:.2} (std) ± {:.2} (std err), {} trial(s){}",
        coordinate.mean,
        coordinate.std,
        coordinate.std_err,
        energy.mean,
        energy.std,
        energy.std_err,
        coordinate.n,
        if failed { ", FAILED" } else { "" }
    );
    files.push(("summary.txt".into(), format!("{summary_line}\n")));
    Ok(HamiltonianOutcome { files, rows, coordinate, energy, summary_line, failed })
}
