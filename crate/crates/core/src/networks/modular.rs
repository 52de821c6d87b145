//! Modular gradient network: `a + Σ_m c_m ρ_m(φ_m(z_m)) W_m^T σ_m(z_m)` with
//! `z_m = W_m x + b_m` and `σ_m = ∇φ_m`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Tape};
use super::params::{ConstraintTag, SegmentInfo};
use super::single::check_monotone_activation;
use super::ConstraintMode;
use crate::activations::{ActivationKind, ActivationPair, ActivationSpec};
use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub hidden: usize,
    pub activation: ActivationSpec,
    /// Scalar gate applied to `φ_m(z_m)`; defaults to the constant 1.
    #[serde(default = "default_rho")]
    pub rho: ActivationSpec,
}

fn default_rho() -> ActivationSpec {
    ActivationSpec::Constant { value: 1.0 }
}

impl ModuleSpec {
    pub fn new(hidden: usize, activation: ActivationSpec) -> Self {
        Self {
            hidden,
            activation,
            rho: default_rho(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub(crate) w: Matrix,
    pub(crate) b: Vec<f64>,
    pub(crate) act: ActivationPair,
    pub(crate) rho: ActivationPair,
}

impl Module {
    pub fn new(w: Matrix, b: Vec<f64>, act: ActivationPair, rho: ActivationPair) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::Dimension(format!(
                "module: W has {} rows, b has {}",
                w.rows(),
                b.len()
            )));
        }
        if !act.antiderivative_known() {
            return Err(Error::InvalidArgument(format!(
                "modular network needs σ_m with a known antiderivative, got {:?}",
                act.spec()
            )));
        }
        if !rho.is_elementwise() {
            return Err(Error::InvalidArgument("ρ_m must be a scalar activation".into()));
        }
        Ok(Self { w, b, act, rho })
    }

    fn hidden(&self) -> usize {
        self.w.rows()
    }

    fn num_params(&self) -> usize {
        self.w.rows() * self.w.cols() + self.b.len() + self.act.num_params() + self.rho.num_params()
    }

    /// A constant gate has zero derivative, so `φ_m` is never needed.
    fn gate_is_constant(&self) -> bool {
        matches!(self.rho.kind(), ActivationKind::Constant { .. })
    }

    fn gate_constant(&self) -> Option<f64> {
        match self.rho.kind() {
            ActivationKind::Constant { value } => Some(*value),
            _ => None,
        }
    }
}

fn nonneg_monotone_gate(rho: &ActivationPair) -> bool {
    match rho.kind() {
        ActivationKind::Constant { value } => *value >= 0.0,
        ActivationKind::Sigmoid | ActivationKind::Softplus { .. } | ActivationKind::ReluSmooth { .. } => true,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradNetM {
    pub(crate) dim: usize,
    pub(crate) a: Vec<f64>,
    pub(crate) coeffs: Vec<f64>,
    pub(crate) modules: Vec<Module>,
    pub(crate) mode: ConstraintMode,
}

/// Per-module intermediates.
struct Pass {
    z: Matrix,
    s: Matrix,
    y: Matrix,
    phi: Vec<f64>,
    r: Vec<f64>,
}

impl GradNetM {
    pub fn new(a: Vec<f64>, coeffs: Vec<f64>, modules: Vec<Module>, mode: ConstraintMode) -> Result<Self> {
        let dim = a.len();
        if coeffs.len() != modules.len() {
            return Err(Error::Dimension(format!(
                "{} combination coefficients for {} modules",
                coeffs.len(),
                modules.len()
            )));
        }
        for (i, m) in modules.iter().enumerate() {
            if m.w.cols() != dim {
                return Err(Error::Dimension(format!(
                    "module {i} has input width {}, network dim {dim}",
                    m.w.cols()
                )));
            }
            if mode == ConstraintMode::Monotone {
                check_monotone_activation(&m.act, "module")?;
                if !nonneg_monotone_gate(&m.rho) {
                    return Err(Error::Constraint(format!(
                        "module {i}: monotone mode needs a nonnegative nondecreasing ρ, got {:?}",
                        m.rho.spec()
                    )));
                }
            }
        }
        if mode == ConstraintMode::Monotone && coeffs.iter().any(|&c| c < 0.0) {
            return Err(Error::Constraint("conic combination needs nonnegative coefficients".into()));
        }
        Ok(Self {
            dim,
            a,
            coeffs,
            modules,
            mode,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        specs: &[ModuleSpec],
        mode: ConstraintMode,
        rng: &mut R,
    ) -> Result<Self> {
        let mut modules = Vec::with_capacity(specs.len());
        for s in specs {
            let w = ops::uniform_matrix(rng, s.hidden, dim, dim);
            let act = s.activation.init(rng)?;
            let rho = s.rho.init(rng)?;
            modules.push(Module::new(w, vec![0.0; s.hidden], act, rho)?);
        }
        Self::new(vec![0.0; dim], vec![1.0; specs.len()], modules, mode)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn module_specs(&self) -> Vec<ModuleSpec> {
        self.modules
            .iter()
            .map(|m| ModuleSpec {
                hidden: m.hidden(),
                activation: m.act.spec(),
                rho: m.rho.spec(),
            })
            .collect()
    }

    pub(crate) fn num_params(&self) -> usize {
        self.dim + self.coeffs.len() + self.modules.iter().map(Module::num_params).sum::<usize>()
    }

    pub(crate) fn layout(&self, prefix: &str, out: &mut Vec<SegmentInfo>) {
        out.push(SegmentInfo::new(format!("{prefix}a"), self.dim, ConstraintTag::Free));
        let ctag = match self.mode {
            ConstraintMode::Monotone => ConstraintTag::Nonneg,
            ConstraintMode::None => ConstraintTag::Free,
        };
        out.push(SegmentInfo::new(format!("{prefix}c"), self.coeffs.len(), ctag));
        for (i, m) in self.modules.iter().enumerate() {
            let p = format!("{prefix}m{i}.");
            out.push(SegmentInfo::new(format!("{p}w"), m.w.rows() * m.w.cols(), ConstraintTag::Free));
            out.push(SegmentInfo::new(format!("{p}b"), m.b.len(), ConstraintTag::Free));
            m.act.param_layout(&format!("{p}act"), out);
            m.rho.param_layout(&format!("{p}rho"), out);
        }
    }

    pub(crate) fn params_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.a);
        out.extend_from_slice(&self.coeffs);
        for m in &self.modules {
            out.extend_from_slice(m.w.as_slice());
            out.extend_from_slice(&m.b);
            m.act.params_into(out);
            m.rho.params_into(out);
        }
    }

    pub(crate) fn assign_params(&mut self, src: &mut &[f64]) {
        let (a, rest) = src.split_at(self.dim);
        self.a.copy_from_slice(a);
        let (c, rest) = rest.split_at(self.coeffs.len());
        self.coeffs.copy_from_slice(c);
        *src = rest;
        for m in &mut self.modules {
            let nw = m.w.rows() * m.w.cols();
            let (w, rest) = src.split_at(nw);
            m.w.as_mut_slice().copy_from_slice(w);
            let (b, rest) = rest.split_at(m.b.len());
            m.b.copy_from_slice(b);
            *src = rest;
            m.act.assign_params(src);
            m.rho.assign_params(src);
        }
    }

    fn pass(&self, m: &Module, x: &Matrix, need_phi: bool) -> Pass {
        let n = x.rows();
        let mut z = Matrix::zeros(n, m.hidden());
        gemm(1.0, x, false, &m.w, true, 0.0, &mut z);
        ops::add_row_bias(&mut z, &m.b);
        let (s, _) = ops::act_forward(&m.act, &z, false);
        let mut y = Matrix::zeros(n, self.dim);
        gemm(1.0, &s, false, &m.w, false, 0.0, &mut y);
        let (phi, r) = match m.gate_constant() {
            Some(c) if !need_phi => (Vec::new(), vec![c; n]),
            _ => {
                let phi = ops::act_potential_rows(&m.act, &z);
                let r = phi.iter().map(|&p| m.rho.scalar(p)).collect();
                (phi, r)
            }
        };
        Pass { z, s, y, phi, r }
    }

    pub(crate) fn forward_batch(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.dim);
        ops::add_row_bias(&mut out, &self.a);
        for (m, &c) in self.modules.iter().zip(&self.coeffs) {
            let p = self.pass(m, x, false);
            accumulate_scaled_rows(&mut out, &p.y, &p.r, c);
        }
        out
    }

    pub(crate) fn forward_train(&self, x: &Matrix) -> (Matrix, Tape) {
        let mut out = Matrix::zeros(x.rows(), self.dim);
        ops::add_row_bias(&mut out, &self.a);
        let mut kids = Vec::with_capacity(self.modules.len());
        for (m, &c) in self.modules.iter().zip(&self.coeffs) {
            let p = self.pass(m, x, false);
            accumulate_scaled_rows(&mut out, &p.y, &p.r, c);
            kids.push(Tape {
                mats: vec![p.z, p.s, p.y],
                vecs: vec![p.phi, p.r],
                kids: Vec::new(),
            });
        }
        (out, Tape { kids, ..Tape::default() })
    }

    pub(crate) fn backward(&self, x: &Matrix, tape: &Tape, g: &Matrix, grad: &mut [f64]) {
        let d = self.dim;
        let mm = self.modules.len();
        let (ga, rest) = grad.split_at_mut(d);
        let (gc, mut rest) = rest.split_at_mut(mm);
        ops::add_col_sums(g, ga);
        for (i, (m, t)) in self.modules.iter().zip(&tape.kids).enumerate() {
            let (gm, tail) = rest.split_at_mut(m.num_params());
            rest = tail;
            let c = self.coeffs[i];
            let (z, s, y) = (&t.mats[0], &t.mats[1], &t.mats[2]);
            let (phi, r) = (&t.vecs[0], &t.vecs[1]);
            let e = ops::row_dots(g, y);
            gc[i] += e.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();

            let h = m.hidden();
            let (gw, tail) = gm.split_at_mut(h * d);
            let (gb, tail) = tail.split_at_mut(h);
            let (gact, grho) = tail.split_at_mut(m.act.num_params());
            let mut gwm = Matrix::from_vec(h, d, gw.to_vec()).expect("shape");

            let mut dy = g.clone();
            let scale: Vec<f64> = r.iter().map(|ri| c * ri).collect();
            ops::scale_rows(&mut dy, &scale);
            gemm(1.0, s, true, &dy, false, 1.0, &mut gwm);
            let mut ds = Matrix::zeros(x.rows(), h);
            gemm(1.0, &dy, false, &m.w, true, 0.0, &mut ds);
            ops::act_param_vjp(&m.act, z, &ds, gact);
            let mut dz = ops::act_vjp(&m.act, z, &ds, None);

            if !m.gate_is_constant() {
                // through φ_m: ∂φ/∂z = σ(z)
                let dphi: Vec<f64> = phi
                    .iter()
                    .zip(&e)
                    .map(|(&p, &ei)| c * m.rho.scalar_deriv(p) * ei)
                    .collect();
                for (&p, &ei) in phi.iter().zip(&e) {
                    m.rho.scalar_param_grad(p, c * ei, grho);
                }
                ops::act_potential_param_grad(&m.act, z, &dphi, gact);
                let mut sp = s.clone();
                ops::scale_rows(&mut sp, &dphi);
                dz.add_scaled(1.0, &sp);
            }
            ops::add_col_sums(&dz, gb);
            gemm(1.0, &dz, true, x, false, 1.0, &mut gwm);
            gw.copy_from_slice(gwm.as_slice());
        }
    }

    pub(crate) fn jacobian(&self, x: &[f64]) -> Matrix {
        let xb = ops::row_batch(x);
        let d = self.dim;
        let mut j = Matrix::zeros(d, d);
        for (m, &c) in self.modules.iter().zip(&self.coeffs) {
            let p = self.pass(m, &xb, true);
            let y = p.y.as_slice();
            let phi = p.phi[0];
            j.add_outer(c * m.rho.scalar_deriv(phi), y, y);
            let js = m.act.derivative(p.z.as_slice());
            let mut jw = Matrix::zeros(m.hidden(), d);
            gemm(1.0, &js, false, &m.w, false, 0.0, &mut jw);
            gemm(c * p.r[0], &m.w, true, &jw, false, 1.0, &mut j);
        }
        j
    }

    pub(crate) fn has_potential(&self) -> bool {
        self.modules.iter().all(|m| m.rho.antiderivative_known())
    }

    /// `a^T x + Σ_m c_m R_m(φ_m(z_m))` with `R_m' = ρ_m`.
    pub(crate) fn potential_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        if !self.has_potential() {
            return Err(Error::Unsupported("potential with a gate lacking an antiderivative".into()));
        }
        let d = self.dim;
        let mut p: Vec<f64> = if d == 0 {
            vec![0.0; x.rows()]
        } else {
            x.as_slice().chunks_exact(d).map(|r| crate::numerics::dot(r, &self.a)).collect()
        };
        for (m, &c) in self.modules.iter().zip(&self.coeffs) {
            let pass = self.pass(m, x, true);
            for (pi, &phi) in p.iter_mut().zip(&pass.phi) {
                *pi += c * m.rho.scalar_antiderivative(phi)?;
            }
        }
        Ok(p)
    }

    pub(crate) fn potential_backward(&self, x: &Matrix, wts: &[f64], grad: &mut [f64]) {
        let d = self.dim;
        let mm = self.modules.len();
        let (ga, rest) = grad.split_at_mut(d);
        let (gc, mut rest) = rest.split_at_mut(mm);
        let mut xs = x.clone();
        ops::scale_rows(&mut xs, wts);
        ops::add_col_sums(&xs, ga);
        for (i, m) in self.modules.iter().enumerate() {
            let (gm, tail) = rest.split_at_mut(m.num_params());
            rest = tail;
            let c = self.coeffs[i];
            let p = self.pass(m, x, true);
            let h = m.hidden();
            let (gw, tail) = gm.split_at_mut(h * d);
            let (gb, tail) = tail.split_at_mut(h);
            let (gact, grho) = tail.split_at_mut(m.act.num_params());

            for (&phi, &w) in p.phi.iter().zip(wts) {
                gc[i] += w * m.rho.scalar_antiderivative(phi).expect("checked by has_potential");
                m.rho.scalar_antiderivative_param_grad(phi, w * c, grho);
            }
            let dphi: Vec<f64> = p.r.iter().zip(wts).map(|(r, w)| w * c * r).collect();
            ops::act_potential_param_grad(&m.act, &p.z, &dphi, gact);
            let mut dz = p.s;
            ops::scale_rows(&mut dz, &dphi);
            ops::add_col_sums(&dz, gb);
            let mut gwm = Matrix::from_vec(h, d, gw.to_vec()).expect("shape");
            gemm(1.0, &dz, true, x, false, 1.0, &mut gwm);
            gw.copy_from_slice(gwm.as_slice());
        }
    }
}

/// `out_i += c r_i y_i`.
fn accumulate_scaled_rows(out: &mut Matrix, y: &Matrix, r: &[f64], c: f64) {
    let d = out.cols();
    if d == 0 {
        return;
    }
    for ((o, yr), &ri) in out
        .as_mut_slice()
        .chunks_exact_mut(d)
        .zip(y.as_slice().chunks_exact(d))
        .zip(r)
    {
        crate::numerics::axpy(c * ri, yr, o);
    }
}
