//! Constructive approximants: log-sum-exp of supporting hyperplanes for
//! convex functions on the unit cube, and sigmoid staircases for
//! nondecreasing scalar functions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::activations::{ActivationPair, NeuralScalar, ScalarBase};
use crate::error::{Error, Result};
use crate::networks::{ConstraintMode, Network, SingleLayer};
use crate::numerics::{fd_gradient, Matrix};
use crate::tasks::{grad_convex2d, potential_convex2d};

pub const DEFAULT_HYPERPLANE_CAP: usize = 1_000_000;

fn default_cap() -> usize {
    DEFAULT_HYPERPLANE_CAP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LseApproxConfig {
    /// Grid step is `2^−m`.
    pub m: u32,
    pub t: f64,
    pub d: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

impl LseApproxConfig {
    pub fn new(m: u32, t: f64, d: usize) -> Self {
        Self { m, t, d, cap: DEFAULT_HYPERPLANE_CAP }
    }

    /// `(2^m − 1)^d`, or an error when it exceeds the cap.
    pub fn hyperplanes(&self) -> Result<usize> {
        if self.m == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("grid level m and dimension d must be positive".into()));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidArgument(format!("t must be positive, got {}", self.t)));
        }
        let side = 1usize
            .checked_shl(self.m)
            .filter(|_| self.m < usize::BITS)
            .map(|s| s - 1);
        let n = side.and_then(|s| s.checked_pow(self.d as u32));
        match n {
            Some(n) if n <= self.cap => Ok(n),
            _ => Err(Error::InvalidArgument(format!(
                "(2^{} - 1)^{} hyperplanes exceed the cap of {}",
                self.m, self.d, self.cap
            ))),
        }
    }

    /// `ε = L √d 2^−m` for an `L`-Lipschitz function.
    pub fn lipschitz_eps(&self, l: f64) -> f64 {
        l * (self.d as f64).sqrt() * 0.5f64.powi(self.m as i32)
    }

    /// `(d + 1) ε + log(n) / t`.
    pub fn bound(&self, eps: f64) -> Result<f64> {
        let n = self.hyperplanes()?;
        Ok((self.d as f64 + 1.0) * eps + (n as f64).ln() / self.t)
    }
}

/// Interior grid points, coordinates `i 2^−m` for `1 ≤ i ≤ 2^m − 1`.
fn construction_grid(cfg: &LseApproxConfig) -> Result<Matrix> {
    let n = cfg.hyperplanes()?;
    let side = (1usize << cfg.m) - 1;
    let h = 0.5f64.powi(cfg.m as i32);
    Ok(lattice(n, side, cfg.d, |i| (i + 1) as f64 * h))
}

/// Row-major lattice of `side^d` points, first coordinate slowest.
fn lattice(n: usize, side: usize, d: usize, coord: impl Fn(usize) -> f64) -> Matrix {
    Matrix::from_fn(n, d, |r, j| {
        let stride = side.pow((d - 1 - j) as u32);
        coord((r / stride) % side)
    })
}

/// Single-layer monotone softmax network whose potential is
/// `LSE_t({w_iᵀx + b_i})`, with `w_i` a subgradient of `f` at grid point
/// `y_i` and `b_i = f(y_i) − w_iᵀy_i`. Without `subgrad`, central differences
/// are used.
pub fn build_lse_approximant<F>(
    f: F,
    subgrad: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    cfg: &LseApproxConfig,
) -> Result<Network>
where
    F: Fn(&[f64]) -> f64,
{
    let grid = construction_grid(cfg)?;
    let (n, d) = (grid.rows(), cfg.d);
    let mut w = Matrix::zeros(n, d);
    let mut a = vec![0.0; n];
    for i in 0..n {
        let y = grid.row(i);
        let fy = f(y);
        let g = match subgrad {
            Some(s) => s(y),
            None => fd_gradient(&f, y, None)?,
        };
        if !fy.is_finite() || g.len() != d || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("convex function or subgradient at grid point {y:?}")));
        }
        a[i] = fy - g.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
        w.row_mut(i).copy_from_slice(&g);
    }
    let layer = SingleLayer::new(w, a, vec![0.0; d], ActivationPair::softmax(cfg.t)?, ConstraintMode::Monotone)?;
    Ok(layer.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub d: usize,
    pub m: u32,
    pub t: f64,
    pub n: usize,
    pub eps: f64,
    pub eval_points: usize,
    pub sup_error: f64,
    pub bound: f64,
    pub pass: bool,
}

impl fmt::Display for CertificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "d = {}", self.d)?;
        writeln!(f, "m = {}", self.m)?;
        writeln!(f, "t = {}", self.t)?;
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "eps = {:.6e}", self.eps)?;
        writeln!(f, "eval_points = {}", self.eval_points)?;
        writeln!(f, "sup_error = {:.6e}", self.sup_error)?;
        writeln!(f, "bound = {:.6e}", self.bound)?;
        write!(f, "pass = {}", self.pass)
    }
}

/// Dense grid with step `2^−(m+2)` including the boundary.
pub fn evaluation_grid(m: u32, d: usize) -> Matrix {
    let side = (1usize << (m + 2)) + 1;
    let h = 0.25 * 0.5f64.powi(m as i32);
    lattice(side.pow(d as u32), side, d, |i| i as f64 * h)
}

const CHUNK: usize = 4096;

/// Sup over the evaluation grid of `|f − potential(net)|`.
pub fn certify_bound<F>(f: F, net: &Network, cfg: &LseApproxConfig, eps: f64) -> Result<CertificationReport>
where
    F: Fn(&[f64]) -> f64,
{
    let n = cfg.hyperplanes()?;
    let bound = cfg.bound(eps)?;
    let grid = evaluation_grid(cfg.m, cfg.d);
    let mut sup: f64 = 0.0;
    let mut start = 0;
    while start < grid.rows() {
        let end = (start + CHUNK).min(grid.rows());
        let chunk = Matrix::from_vec(end - start, cfg.d, grid.as_slice()[start * cfg.d..end * cfg.d].to_vec())?;
        let pot = net.potential_batch(&chunk)?;
        for (i, p) in pot.iter().enumerate() {
            let e = (f(chunk.row(i)) - p).abs();
            // NaN must not hide behind max()
            sup = if e.is_nan() { f64::INFINITY } else { sup.max(e) };
        }
        start = end;
    }
    Ok(CertificationReport {
        d: cfg.d,
        m: cfg.m,
        t: cfg.t,
        n,
        eps,
        eval_points: grid.rows(),
        sup_error: sup,
        bound,
        pass: sup <= bound,
    })
}

/// Sup of `‖net(x) − ∇f(x)‖_∞` over a uniform grid of `side^d` points in `[lo, hi]^d`.
pub fn gradient_sup_error<G>(net: &Network, grad: G, lo: f64, hi: f64, side: usize) -> Result<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let d = net.dim();
    let step = if side > 1 { (hi - lo) / (side - 1) as f64 } else { 0.0 };
    let x = lattice(side.pow(d as u32), side, d, |i| lo + i as f64 * step);
    let out = net.forward_batch(&x)?;
    let mut sup: f64 = 0.0;
    for i in 0..x.rows() {
        let g = grad(x.row(i));
        for (a, b) in out.row(i).iter().zip(&g) {
            sup = sup.max((a - b).abs());
        }
    }
    Ok(sup)
}

/// `f(0) + Σ_k Δ_k sigmoid(t(2^{n+1}x − 2k + 1))`, `Δ_k = f(k/2^n) − f((k−1)/2^n)`,
/// as a monotone neural scalar activation.
pub fn build_staircase_monotone<F>(f: F, n_level: u32, t: f64) -> Result<ActivationPair>
where
    F: Fn(f64) -> f64,
{
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("t must be positive, got {t}")));
    }
    if n_level > 24 {
        return Err(Error::InvalidArgument(format!("staircase level {n_level} is too fine")));
    }
    let k = 1usize << n_level;
    let scale = (k as f64) * 2.0;
    let vals: Vec<f64> = (0..=k).map(|i| f(i as f64 / k as f64)).collect();
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("f({}/{k})", i)));
    }
    let mut u = Vec::with_capacity(k);
    for i in 1..=k {
        let delta = vals[i] - vals[i - 1];
        if delta < 0.0 {
            return Err(Error::Constraint(format!(
                "f decreases on [{}, {}] by {}",
                (i - 1) as f64 / k as f64,
                i as f64 / k as f64,
                -delta
            )));
        }
        u.push(delta);
    }
    let beta = (1..=k).map(|i| t * (1.0 - 2.0 * i as f64)).collect();
    ActivationPair::neural_scalar(NeuralScalar {
        base: ScalarBase::Sigmoid,
        u,
        v: vec![scale * t; k],
        beta,
        offset: vals[0],
        monotone: true,
    })
}

/// Built-in convex functions on `[0, 1]^d` with gradients and Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinConvex {
    /// `Σ_j (1 − j/(2d)) x_j + 0.25`
    Affine,
    /// `‖x − ½·1‖² / 2`
    Quadratic,
    /// The 2D quartic benchmark potential.
    Convex2d,
}

impl BuiltinConvex {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "affine" => Some(Self::Affine),
            "quadratic" => Some(Self::Quadratic),
            "convex2d" => Some(Self::Convex2d),
            _ => None,
        }
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d == 0 || (*self == Self::Convex2d && d != 2) {
            return Err(Error::InvalidArgument(format!("{self:?} is not defined for d = {d}")));
        }
        Ok(())
    }

    fn slopes(d: usize) -> impl Iterator<Item = f64> {
        (0..d).map(move |j| 1.0 - j as f64 / (2 * d) as f64)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Affine => Self::slopes(x.len()).zip(x).map(|(w, v)| w * v).sum::<f64>() + 0.25,
            Self::Quadratic => x.iter().map(|v| 0.5 * (v - 0.5) * (v - 0.5)).sum(),
            Self::Convex2d => potential_convex2d(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Affine => Self::slopes(x.len()).collect(),
            Self::Quadratic => x.iter().map(|v| v - 0.5).collect(),
            Self::Convex2d => grad_convex2d(x).to_vec(),
        }
    }

    /// Lipschitz constant on the unit cube.
    pub fn lipschitz(&self, d: usize) -> f64 {
        match self {
            Self::Affine => Self::slopes(d).map(|w| w * w).sum::<f64>().sqrt(),
            Self::Quadratic => 0.5 * (d as f64).sqrt(),
            // gradient norm is maximal at (1, 1)
            Self::Convex2d => (5.5f64 * 5.5 + 2.5 * 2.5).sqrt(),
        }
    }
}

/// Build and certify in one step, with `ε` from the Lipschitz constant.
pub fn certify_builtin(func: BuiltinConvex, cfg: &LseApproxConfig) -> Result<CertificationReport> {
    func.check_dim(cfg.d)?;
    let grad = |x: &[f64]| func.gradient(x);
    let net = build_lse_approximant(|x| func.value(x), Some(&grad), cfg)?;
    certify_bound(|x| func.value(x), &net, cfg, cfg.lipschitz_eps(func.lipschitz(cfg.d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{audit_monotone_pairs, audit_psd, audit_symmetry, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hyperplane_count_and_cap() {
        assert_eq!(LseApproxConfig::new(5, 1.0, 1).hyperplanes().unwrap(), 31);
        assert_eq!(LseApproxConfig::new(5, 1.0, 2).hyperplanes().unwrap(), 961);
        assert!(LseApproxConfig::new(11, 1.0, 2).hyperplanes().is_err());
        assert!(LseApproxConfig::new(70, 1.0, 1).hyperplanes().is_err());
        let grid = construction_grid(&LseApproxConfig::new(2, 1.0, 2)).unwrap();
        assert_eq!(grid.rows(), 9);
        assert_eq!(grid.row(0), &[0.25, 0.25]);
        assert_eq!(grid.row(5), &[0.5, 0.75]);
        assert_eq!(evaluation_grid(1, 2).rows(), 81);
    }

    #[test]
    fn affine_is_exact_up_to_lse_overshoot() {
        for (m, t, d) in [(3, 5.0, 1), (4, 50.0, 2), (2, 0.5, 3)] {
            let cfg = LseApproxConfig::new(m, t, d);
            let f = BuiltinConvex::Affine;
            let net = build_lse_approximant(|x| f.value(x), None, &cfg).unwrap();
            let rep = certify_bound(|x| f.value(x), &net, &cfg, cfg.lipschitz_eps(f.lipschitz(d))).unwrap();
            let n = cfg.hyperplanes().unwrap() as f64;
            assert!(rep.sup_error <= n.ln() / t + 1e-9, "{rep}");
            assert!(rep.pass);
        }
    }

    #[test]
    fn quadratic_1d_meets_bound() {
        let cfg = LseApproxConfig::new(5, 200.0, 1);
        let f = BuiltinConvex::Quadratic;
        let net = build_lse_approximant(|x| f.value(x), None, &cfg).unwrap();
        let eps = cfg.lipschitz_eps(0.5);
        assert!((eps - 0.5 / 32.0).abs() < 1e-15);
        let rep = certify_bound(|x| f.value(x), &net, &cfg, eps).unwrap();
        assert!(rep.pass, "{rep}");
        assert!((rep.bound - (2.0 * eps + 31f64.ln() / 200.0)).abs() < 1e-12);

        // the looser bound at t/100 still holds
        let cfg2 = LseApproxConfig::new(5, 2.0, 1);
        let net2 = build_lse_approximant(|x| f.value(x), None, &cfg2).unwrap();
        let rep2 = certify_bound(|x| f.value(x), &net2, &cfg2, eps).unwrap();
        assert!(rep2.pass && rep2.bound > rep.bound);
    }

    #[test]
    fn gradient_error_shrinks_with_m() {
        let f = BuiltinConvex::Quadratic;
        let errs: Vec<f64> = (3..=5)
            .map(|m| {
                let cfg = LseApproxConfig::new(m, 200.0, 1);
                let net = build_lse_approximant(|x| f.value(x), None, &cfg).unwrap();
                gradient_sup_error(&net, |x| f.gradient(x), 0.1, 0.9, 801).unwrap()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn approximant_is_a_monotone_gradient_network() {
        let cfg = LseApproxConfig::new(3, 20.0, 2);
        let f = BuiltinConvex::Convex2d;
        let net = build_lse_approximant(|x| f.value(x), None, &cfg).unwrap();
        net.validate().unwrap();
        let fwd = |x: &[f64]| net.forward(x).unwrap();
        let dom = Domain::unit(2);
        assert!(audit_symmetry(fwd, &dom, 50, 1e-5, 1).pass);
        assert!(audit_psd(fwd, &dom, 50, 1e-6, 2).pass);
        assert!(audit_monotone_pairs(fwd, &dom, 10_000, 1e-8, 3).pass);
    }

    #[test]
    fn random_quadratics_always_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for k in 0..20 {
            let d = 1 + k % 2;
            let b = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let mut a = b.matmul(&b.transpose()).unwrap();
            for i in 0..d {
                a[(i, i)] += 0.1;
            }
            let c: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let g: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let grad = |x: &[f64]| {
                let z: Vec<f64> = x.iter().zip(&c).map(|(u, v)| u - v).collect();
                let mut out = a.matvec(&z).unwrap();
                out.iter_mut().zip(&g).for_each(|(o, gi)| *o += gi);
                out
            };
            let f = |x: &[f64]| {
                let z: Vec<f64> = x.iter().zip(&c).map(|(u, v)| u - v).collect();
                0.5 * crate::numerics::dot(&z, &a.matvec(&z).unwrap()) + crate::numerics::dot(&g, x)
            };
            // the gradient norm is convex, so its max over the cube sits at a corner
            let l = (0..1usize << d)
                .map(|mask| {
                    let v: Vec<f64> = (0..d).map(|j| ((mask >> j) & 1) as f64).collect();
                    crate::numerics::norm(&grad(&v))
                })
                .fold(0.0, f64::max);
            let cfg = LseApproxConfig::new(5, 500.0, d);
            let net = build_lse_approximant(f, None, &cfg).unwrap();
            let rep = certify_bound(f, &net, &cfg, cfg.lipschitz_eps(l)).unwrap();
            assert!(rep.pass, "quadratic {k}: {rep}");
        }
    }

    #[test]
    fn builtin_certification() {
        for (func, d) in [(BuiltinConvex::Affine, 2), (BuiltinConvex::Quadratic, 2), (BuiltinConvex::Convex2d, 2)] {
            let rep = certify_builtin(func, &LseApproxConfig::new(4, 100.0, d)).unwrap();
            assert!(rep.pass, "{func:?}: {rep}");
        }
        assert!(certify_builtin(BuiltinConvex::Convex2d, &LseApproxConfig::new(4, 100.0, 3)).is_err());
        let text = certify_builtin(BuiltinConvex::Affine, &LseApproxConfig::new(2, 1.0, 1)).unwrap().to_string();
        assert!(text.contains("sup_error = ") && text.ends_with("pass = true"));
    }

    #[test]
    fn staircase_constant_and_identity() {
        let g = build_staircase_monotone(|_| 0.7, 4, 3.0).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(g.scalar(x), 0.7);
        }

        let g = build_staircase_monotone(|x| x, 6, 4.0).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            sup = sup.max((g.scalar(x) - x).abs());
        }
        assert!(sup <= 3.0 / 64.0, "{sup}");
    }

    #[test]
    fn staircase_is_nondecreasing() {
        let g = build_staircase_monotone(|x| (3.0 * x).tanh() + x * x, 5, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let (a, b): (f64, f64) = (rng.gen(), rng.gen());
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            assert!(g.scalar(lo) <= g.scalar(hi) + 1e-9);
        }
        assert!(g.is_monotone());
    }

    #[test]
    fn staircase_rejects_decreasing() {
        assert!(matches!(build_staircase_monotone(|x| -x, 3, 1.0), Err(Error::Constraint(_))));
    }
}
