//! Benchmark potentials on the unit hypercube with analytic gradients.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{lse_unchecked, softmax_into, Matrix};
use crate::train::FieldSampler;

fn default_components() -> usize {
    5
}

/// Serializable task description; `seed` fixes any random instance data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Convex2d,
    Nonconvex2d,
    PiecewiseQuadratic {
        d: usize,
    },
    GmmScore {
        d: usize,
        #[serde(default = "default_components")]
        components: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl TaskSpec {
    pub fn dim(&self) -> usize {
        match self {
            TaskSpec::Convex2d | TaskSpec::Nonconvex2d => 2,
            TaskSpec::PiecewiseQuadratic { d } | TaskSpec::GmmScore { d, .. } => *d,
        }
    }

    pub fn build(&self) -> Result<Task> {
        let data = match *self {
            TaskSpec::Convex2d => TaskData::Convex2d,
            TaskSpec::Nonconvex2d => TaskData::Nonconvex2d,
            TaskSpec::PiecewiseQuadratic { d } => {
                let [s, p, q] = build_spq_matrices(d)?;
                TaskData::PiecewiseQuadratic { mats: [s, p, q] }
            }
            TaskSpec::GmmScore { d, components, seed } => {
                if d == 0 || components == 0 {
                    return Err(Error::InvalidArgument("gmm_score needs d ≥ 1 and at least one component".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let means = Matrix::from_fn(components, d, |_, _| rng.gen_range(0.3..=0.7));
                Gmm::new(means, 2.0 * (d as f64).sqrt()).map(TaskData::Gmm)?
            }
        };
        Ok(Task { spec: self.clone(), data })
    }
}

/// Equal-weight isotropic Gaussian mixture with shared variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub means: Matrix,
    pub variance: f64,
}

impl Gmm {
    pub fn new(means: Matrix, variance: f64) -> Result<Self> {
        if means.rows() == 0 || means.cols() == 0 || !(variance > 0.0) {
            return Err(Error::InvalidArgument("gmm needs components and a positive variance".into()));
        }
        Ok(Self { means, variance })
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let n = self.means.rows() as f64;
        (0..self.means.rows())
            .map(|i| {
                let sq: f64 = self.means.row(i).iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
                -n.ln() - sq / (2.0 * self.variance)
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        lse_unchecked(&self.logits(x), 1.0) - 0.5 * d * (2.0 * PI * self.variance).ln()
    }

    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let l = self.logits(x);
        let mut r = vec![0.0; l.len()];
        softmax_into(&l, 1.0, &mut r);
        r
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let r = self.responsibilities(x);
        let mut g = vec![0.0; x.len()];
        for (i, ri) in r.iter().enumerate() {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += ri * (self.means[(i, j)] - x[j]) / self.variance;
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TaskData {
    Convex2d,
    Nonconvex2d,
    PiecewiseQuadratic { mats: [Matrix; 3] },
    Gmm(Gmm),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    spec: TaskSpec,
    data: TaskData,
}

pub fn grad_convex2d(x: &[f64]) -> [f64; 2] {
    let (a, b) = (x[0], x[1]);
    [4.0 * a * a * a + a + b / 2.0, a / 2.0 + 3.0 * b - b * b]
}

pub fn potential_convex2d(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    a.powi(4) + a * a / 2.0 + a * b / 2.0 + 1.5 * b * b - b.powi(3) / 3.0
}

pub fn grad_nonconvex2d(x: &[f64]) -> [f64; 2] {
    let (a, b) = (x[0], x[1]);
    [
        PI / 2.0 * (2.0 * PI * a).cos() * (PI * b).cos() + b / 2.0,
        -PI / 4.0 * (2.0 * PI * a).sin() * (PI * b).sin() + a / 2.0 - b,
    ]
}

pub fn potential_nonconvex2d(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    0.25 * (2.0 * PI * a).sin() * (PI * b).cos() + a * b / 2.0 - b * b / 2.0
}

/// The three banded positive definite matrices `[S, P, Q]`.
pub fn build_spq_matrices(d: usize) -> Result<[Matrix; 3]> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("piecewise quadratic needs d ≥ 2, got {d}")));
    }
    let ln_d = (d as f64).ln();
    let alpha = |i: usize, j: usize| (i + j) as f64 / (2 * d - 2) as f64;
    let den = |i: usize, j: usize| 1.0 + i.abs_diff(j) as f64 * ln_d;
    Ok([
        Matrix::from_fn(d, d, |i, j| (2.0 + (4.0 * PI * alpha(i, j)).sin()) / den(i, j)),
        Matrix::from_fn(d, d, |i, j| (1.0 + 2.0 * alpha(i, j)) / den(i, j)),
        Matrix::from_fn(d, d, |i, j| (3.0 - 2.0 * alpha(i, j)) / den(i, j)),
    ])
}

fn quad_forms(mats: &[Matrix; 3], x: &[f64]) -> ([f64; 3], Vec<f64>, [Vec<f64>; 3]) {
    let z: Vec<f64> = x.iter().map(|v| v - 0.5).collect();
    let mz = mats.each_ref().map(|m| m.matvec(&z).expect("dim"));
    let vals = [0, 1, 2].map(|k| crate::numerics::dot(&z, &mz[k]));
    (vals, z, mz)
}

/// Index of the active piece: first of (S, P, Q) within 1e−12 of the max.
fn active_piece(vals: &[f64; 3]) -> usize {
    let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    vals.iter().position(|&v| v >= mx - 1e-12).unwrap_or(0)
}

impl Task {
    pub fn new(spec: &TaskSpec) -> Result<Self> {
        spec.build()
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        match &self.data {
            TaskData::Convex2d | TaskData::Nonconvex2d => 2,
            TaskData::PiecewiseQuadratic { mats } => mats[0].rows(),
            TaskData::Gmm(g) => g.means.cols(),
        }
    }

    /// True when the potential is convex on the unit cube.
    pub fn is_convex(&self) -> bool {
        matches!(self.data, TaskData::Convex2d | TaskData::PiecewiseQuadratic { .. })
    }

    pub fn spq(&self) -> Option<&[Matrix; 3]> {
        match &self.data {
            TaskData::PiecewiseQuadratic { mats } => Some(mats),
            _ => None,
        }
    }

    pub fn gmm(&self) -> Option<&Gmm> {
        match &self.data {
            TaskData::Gmm(g) => Some(g),
            _ => None,
        }
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        match &self.data {
            TaskData::Convex2d => potential_convex2d(x),
            TaskData::Nonconvex2d => potential_nonconvex2d(x),
            TaskData::PiecewiseQuadratic { mats } => {
                let (v, _, _) = quad_forms(mats, x);
                v[active_piece(&v)]
            }
            TaskData::Gmm(g) => g.log_density(x),
        }
    }

    /// Target field at `x`. On tie sets of the piecewise quadratic this is
    /// the subgradient of the first active piece.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.data {
            TaskData::Convex2d => grad_convex2d(x).to_vec(),
            TaskData::Nonconvex2d => grad_nonconvex2d(x).to_vec(),
            TaskData::PiecewiseQuadratic { mats } => {
                let (v, _, mz) = quad_forms(mats, x);
                mz[active_piece(&v)].iter().map(|u| 2.0 * u).collect()
            }
            TaskData::Gmm(g) => g.score(x),
        }
    }

    /// Margin between the largest and second largest piece; `None` for other tasks.
    pub fn piece_margin(&self, x: &[f64]) -> Option<f64> {
        let TaskData::PiecewiseQuadratic { mats } = &self.data else {
            return None;
        };
        let (mut v, _, _) = quad_forms(mats, x);
        v.sort_by(|a, b| b.total_cmp(a));
        Some(v[0] - v[1])
    }

    pub fn gradient_batch(&self, x: &Matrix) -> Matrix {
        let d = self.dim();
        let mut out = Vec::with_capacity(x.rows() * d);
        for i in 0..x.rows() {
            out.extend(self.gradient(x.row(i)));
        }
        Matrix::from_vec(x.rows(), d, out).expect("shape")
    }
}

/// `n` points uniform on `[0, 1]^d`, one per row.
pub fn sample_unit_cube(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.gen::<f64>())
}

pub fn sample_domain(task: &Task, n: usize, seed: u64) -> Matrix {
    sample_unit_cube(task.dim(), n, &mut ChaCha8Rng::seed_from_u64(seed))
}

impl FieldSampler for Task {
    fn dim(&self) -> usize {
        Task::dim(self)
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        sample_unit_cube(Task::dim(self), n, rng)
    }

    fn targets(&self, x: &Matrix) -> Matrix {
        self.gradient_batch(x)
    }
}
