//! Sampled audits of gradient-field properties: Jacobian symmetry, PSD
//! Jacobians, monotone and strongly monotone pairings.
//!
//! Every audit works on a black-box map through finite differences so that
//! it can judge any implementation, including deliberately broken ones.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Network;
use crate::numerics::{dot, fd_jacobian, min_sym_eigenvalue, symmetric_eigenvalues, Matrix};

/// Axis-aligned sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn unit(d: usize) -> Self {
        Self {
            lo: vec![0.0; d],
            hi: vec![1.0; d],
        }
    }

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("domain bounds must satisfy lo ≤ hi coordinatewise".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| l + (h - l) * rng.gen::<f64>()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub points_sampled: usize,
    /// Larger is worse; `pass ⇔ worst_violation ≤ tolerance`.
    pub worst_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Sample at which the worst violation occurred.
    pub location: Option<Vec<f64>>,
    pub note: Option<String>,
}

impl AuditCheck {
    fn new(name: &str, points: usize, worst: f64, tol: f64, location: Option<Vec<f64>>) -> Self {
        Self {
            name: name.into(),
            points_sampled: points,
            worst_violation: worst,
            tolerance: tol,
            pass: worst <= tol,
            location,
            note: None,
        }
    }

    /// Non-finite evaluation: recorded as a failure at `x`.
    fn broken(name: &str, points: usize, tol: f64, x: &[f64], why: String) -> Self {
        Self {
            name: name.into(),
            points_sampled: points,
            worst_violation: f64::MAX,
            tolerance: tol,
            pass: false,
            location: Some(x.to_vec()),
            note: Some(why),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub seed: u64,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed = {}", self.seed)?;
        for c in &self.checks {
            write!(
                f,
                "{:<16} points = {:<6} worst = {:<12.4e} tol = {:<8.1e} {}",
                c.name,
                c.points_sampled,
                c.worst_violation,
                c.tolerance,
                if c.pass { "PASS" } else { "FAIL" }
            )?;
            if let Some(n) = &c.note {
                write!(f, " ({n})")?;
            }
            writeln!(f)?;
        }
        write!(f, "overall = {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn jac_at<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64]) -> std::result::Result<Matrix, String> {
    match fd_jacobian(f, x, None) {
        Ok(j) if j.is_finite() => Ok(j),
        Ok(_) => Err("non-finite Jacobian".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// Worst `‖J − Jᵀ‖_F / (1 + ‖J‖_F)` of the FD Jacobian over `n_points` samples.
pub fn audit_symmetry<F>(f: F, domain: &Domain, n_points: usize, tol: f64, seed: u64) -> AuditCheck
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut at) = (0.0f64, None);
    for k in 0..n_points {
        let x = domain.sample(&mut rng);
        let j = match jac_at(&f, &x) {
            Ok(j) => j,
            Err(e) => return AuditCheck::broken("symmetry", k + 1, tol, &x, e),
        };
        if j.rows() != j.cols() {
            return AuditCheck::broken("symmetry", k + 1, tol, &x, "map is not R^d → R^d".into());
        }
        let v = j.asymmetry() / (1.0 + j.frobenius());
        if v > worst || at.is_none() {
            worst = v;
            at = Some(x);
        }
    }
    AuditCheck::new("symmetry", n_points, worst, tol, at)
}

/// Violation is `−λ_min` of the symmetrized FD Jacobian, worst over samples.
pub fn audit_psd<F>(f: F, domain: &Domain, n_points: usize, tol: f64, seed: u64) -> AuditCheck
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut at) = (f64::NEG_INFINITY, None);
    for k in 0..n_points {
        let x = domain.sample(&mut rng);
        let lam = jac_at(&f, &x).and_then(|j| min_sym_eigenvalue(&j.symmetrized()).map_err(|e| e.to_string()));
        match lam {
            Ok(l) if -l > worst => {
                worst = -l;
                at = Some(x);
            }
            Ok(_) => {}
            Err(e) => return AuditCheck::broken("psd", k + 1, tol, &x, e),
        }
    }
    if n_points == 0 {
        worst = 0.0;
    }
    AuditCheck::new("psd", n_points, worst, tol, at)
}

fn pairing<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let (fx, fy) = (f(x), f(y));
    let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
    let dx: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let p = dot(&df, &dx);
    p.is_finite().then(|| (p, dot(&dx, &dx)))
}

fn pair_audit<F, V>(name: &str, f: F, domain: &Domain, n_pairs: usize, tol: f64, seed: u64, violation: V) -> AuditCheck
where
    F: Fn(&[f64]) -> Vec<f64>,
    V: Fn(f64, f64) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut at) = (f64::NEG_INFINITY, None);
    for k in 0..n_pairs {
        let x = domain.sample(&mut rng);
        let y = domain.sample(&mut rng);
        let Some((p, sq)) = pairing(&f, &x, &y) else {
            return AuditCheck::broken(name, k + 1, tol, &x, "non-finite evaluation".into());
        };
        let v = violation(p, sq);
        if v > worst {
            worst = v;
            at = Some(x);
        }
    }
    if n_pairs == 0 {
        worst = 0.0;
    }
    AuditCheck::new(name, n_pairs, worst, tol, at)
}

/// Violation is `−(f(x) − f(y))ᵀ(x − y)`, worst over sampled pairs.
pub fn audit_monotone_pairs<F>(f: F, domain: &Domain, n_pairs: usize, tol: f64, seed: u64) -> AuditCheck
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    pair_audit("monotone_pairs", f, domain, n_pairs, tol, seed, |p, _| -p)
}

/// Violation is `μ‖x − y‖² − (f(x) − f(y))ᵀ(x − y)`.
pub fn audit_strong_monotone<F>(
    f: F,
    mu: f64,
    domain: &Domain,
    n_pairs: usize,
    tol: f64,
    seed: u64,
) -> Result<AuditCheck>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("μ must be positive, got {mu}")));
    }
    Ok(pair_audit("strong_monotone", f, domain, n_pairs, tol, seed, |p, sq| mu * sq - p))
}

/// Largest FD-Jacobian spectral norm over samples: an empirical Lipschitz
/// estimate for choosing the flip constant `L`.
pub fn estimate_lipschitz<F>(f: F, domain: &Domain, n_points: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..n_points {
        let x = domain.sample(&mut rng);
        let j = fd_jacobian(&f, &x, None)?;
        let jtj = j.transpose().matmul(&j)?;
        let top = symmetric_eigenvalues(&jtj.symmetrized())?.last().copied().unwrap_or(0.0);
        best = best.max(top.max(0.0).sqrt());
    }
    Ok(best)
}

/// Sample counts and tolerances for [`audit_network`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub points: usize,
    pub pairs: usize,
    pub symmetry_tol: f64,
    pub psd_tol: f64,
    pub pair_tol: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            points: 100,
            pairs: 10_000,
            symmetry_tol: 1e-5,
            psd_tol: 1e-6,
            pair_tol: 1e-8,
            seed: 0,
        }
    }
}

/// Symmetry always; PSD and monotone pairs for monotone networks; strong
/// monotonicity when the network carries a modulus.
pub fn audit_network(net: &Network, domain: &Domain, cfg: &AuditConfig) -> Result<AuditReport> {
    if domain.dim() != net.dim() {
        return Err(Error::Dimension(format!("domain dim {} vs network dim {}", domain.dim(), net.dim())));
    }
    let f = |x: &[f64]| net.forward(x).unwrap_or_else(|_| vec![f64::NAN; x.len()]);
    let s = cfg.seed;
    let mut checks = vec![audit_symmetry(f, domain, cfg.points, cfg.symmetry_tol, s)];
    if net.is_monotone() {
        checks.push(audit_psd(f, domain, cfg.points, cfg.psd_tol, s.wrapping_add(1)));
        checks.push(audit_monotone_pairs(f, domain, cfg.pairs, cfg.pair_tol, s.wrapping_add(2)));
    }
    if let Some(mu) = net.strong_monotonicity() {
        checks.push(audit_strong_monotone(f, mu, domain, cfg.pairs, cfg.pair_tol, s.wrapping_add(3))?);
    }
    Ok(AuditReport { seed: s, checks })
}
