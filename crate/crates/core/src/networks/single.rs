//! Single-layer gradient network `W^T σ(Wx + a) + b`.

use rand::Rng;

use super::ops::{self, Tape};
use super::params::{ConstraintTag, SegmentInfo};
use super::ConstraintMode;
use crate::activations::{ActivationPair, ActivationSpec};
use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SingleLayer {
    pub(crate) w: Matrix,
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
    pub(crate) act: ActivationPair,
    pub(crate) mode: ConstraintMode,
}

pub(crate) fn check_monotone_activation(act: &ActivationPair, what: &str) -> Result<()> {
    if !act.is_constrained() || !act.is_monotone() {
        return Err(Error::Constraint(format!(
            "monotone mode needs a monotone {what} activation, got {:?}",
            act.spec()
        )));
    }
    Ok(())
}

impl SingleLayer {
    /// `w` is `hidden × d`, `a` has length `hidden`, `b` length `d`.
    pub fn new(w: Matrix, a: Vec<f64>, b: Vec<f64>, act: ActivationPair, mode: ConstraintMode) -> Result<Self> {
        if a.len() != w.rows() || b.len() != w.cols() {
            return Err(Error::Dimension(format!(
                "single layer: W is {}x{}, a has {}, b has {}",
                w.rows(),
                w.cols(),
                a.len(),
                b.len()
            )));
        }
        if mode == ConstraintMode::Monotone {
            check_monotone_activation(&act, "single-layer")?;
        }
        Ok(Self { w, a, b, act, mode })
    }

    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        act: &ActivationSpec,
        mode: ConstraintMode,
        rng: &mut R,
    ) -> Result<Self> {
        let w = ops::uniform_matrix(rng, hidden, dim, dim);
        let act = act.init(rng)?;
        Self::new(w, vec![0.0; hidden], vec![0.0; dim], act, mode)
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.w
    }

    pub fn activation(&self) -> &ActivationPair {
        &self.act
    }

    pub(crate) fn num_params(&self) -> usize {
        let (h, d) = (self.hidden(), self.dim());
        h * d + h + d + self.act.num_params()
    }

    pub(crate) fn layout(&self, prefix: &str, out: &mut Vec<SegmentInfo>) {
        let (h, d) = (self.hidden(), self.dim());
        out.push(SegmentInfo::new(format!("{prefix}w"), h * d, ConstraintTag::Free));
        out.push(SegmentInfo::new(format!("{prefix}a"), h, ConstraintTag::Free));
        out.push(SegmentInfo::new(format!("{prefix}b"), d, ConstraintTag::Free));
        self.act.param_layout(&format!("{prefix}act"), out);
    }

    pub(crate) fn params_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(&self.a);
        out.extend_from_slice(&self.b);
        self.act.params_into(out);
    }

    pub(crate) fn assign_params(&mut self, src: &mut &[f64]) {
        let (h, d) = (self.hidden(), self.dim());
        let (w, rest) = src.split_at(h * d);
        self.w.as_mut_slice().copy_from_slice(w);
        let (a, rest) = rest.split_at(h);
        self.a.copy_from_slice(a);
        let (b, rest) = rest.split_at(d);
        self.b.copy_from_slice(b);
        *src = rest;
        self.act.assign_params(src);
    }

    fn preactivation(&self, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.rows(), self.hidden());
        gemm(1.0, x, false, &self.w, true, 0.0, &mut z);
        ops::add_row_bias(&mut z, &self.a);
        z
    }

    pub(crate) fn forward_train(&self, x: &Matrix) -> (Matrix, Tape) {
        let z = self.preactivation(x);
        let (s, deriv) = ops::act_forward(&self.act, &z, true);
        let mut out = Matrix::zeros(x.rows(), self.dim());
        gemm(1.0, &s, false, &self.w, false, 0.0, &mut out);
        ops::add_row_bias(&mut out, &self.b);
        let mut mats = vec![z, s];
        mats.extend(deriv);
        (out, Tape { mats, ..Tape::default() })
    }

    pub(crate) fn forward_batch(&self, x: &Matrix) -> Matrix {
        let z = self.preactivation(x);
        let (s, _) = ops::act_forward(&self.act, &z, false);
        let mut out = Matrix::zeros(x.rows(), self.dim());
        gemm(1.0, &s, false, &self.w, false, 0.0, &mut out);
        ops::add_row_bias(&mut out, &self.b);
        out
    }

    pub(crate) fn backward(&self, x: &Matrix, tape: &Tape, g: &Matrix, grad: &mut [f64]) {
        let (h, d) = (self.hidden(), self.dim());
        let (z, s) = (&tape.mats[0], &tape.mats[1]);
        let deriv = tape.mats.get(2);
        let (gw, rest) = grad.split_at_mut(h * d);
        let (ga, rest) = rest.split_at_mut(h);
        let (gb, gact) = rest.split_at_mut(d);
        let mut gw = Matrix::from_vec(h, d, gw.to_vec()).expect("shape");

        ops::add_col_sums(g, gb);
        gemm(1.0, s, true, g, false, 1.0, &mut gw);
        let mut ds = Matrix::zeros(x.rows(), h);
        gemm(1.0, g, false, &self.w, true, 0.0, &mut ds);
        ops::act_param_vjp(&self.act, z, &ds, gact);
        let dz = ops::act_vjp(&self.act, z, &ds, deriv);
        ops::add_col_sums(&dz, ga);
        gemm(1.0, &dz, true, x, false, 1.0, &mut gw);
        grad[..h * d].copy_from_slice(gw.as_slice());
    }

    pub(crate) fn jacobian(&self, x: &[f64]) -> Matrix {
        let z = self.preactivation(&ops::row_batch(x));
        let js = self.act.derivative(z.as_slice());
        // W^T J_σ W
        let mut jw = Matrix::zeros(self.hidden(), self.dim());
        gemm(1.0, &js, false, &self.w, false, 0.0, &mut jw);
        let mut j = Matrix::zeros(self.dim(), self.dim());
        gemm(1.0, &self.w, true, &jw, false, 0.0, &mut j);
        j
    }

    pub(crate) fn has_potential(&self) -> bool {
        self.act.antiderivative_known()
    }

    /// `ψ(Wx + a) + b^T x` per row.
    pub(crate) fn potential_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        if !self.has_potential() {
            return Err(Error::Unsupported(format!(
                "potential with {:?} activation",
                self.act.spec()
            )));
        }
        let z = self.preactivation(x);
        let mut p = ops::act_potential_rows(&self.act, &z);
        let d = self.dim();
        for (pi, xr) in p.iter_mut().zip(x.as_slice().chunks_exact(d.max(1))) {
            *pi += crate::numerics::dot(&self.b, xr);
        }
        Ok(p)
    }

    /// Accumulates `Σ_i w_i ∂P(x_i)/∂θ`.
    pub(crate) fn potential_backward(&self, x: &Matrix, wts: &[f64], grad: &mut [f64]) {
        let (h, d) = (self.hidden(), self.dim());
        let z = self.preactivation(x);
        let (mut dz, _) = ops::act_forward(&self.act, &z, false);
        ops::scale_rows(&mut dz, wts);
        let (gw, rest) = grad.split_at_mut(h * d);
        let (ga, rest) = rest.split_at_mut(h);
        let (gb, gact) = rest.split_at_mut(d);
        let mut gwm = Matrix::from_vec(h, d, gw.to_vec()).expect("shape");
        gemm(1.0, &dz, true, x, false, 1.0, &mut gwm);
        gw.copy_from_slice(gwm.as_slice());
        ops::add_col_sums(&dz, ga);
        let mut xs = x.clone();
        ops::scale_rows(&mut xs, wts);
        ops::add_col_sums(&xs, gb);
        ops::act_potential_param_grad(&self.act, &z, wts, gact);
    }
}
