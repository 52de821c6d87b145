//! Transformed network `h(x) = γ(G(x) + β) · g(x)` where `G` is the tracked
//! potential of `g`. With `outer_softplus`, `γ = softplus ∘ τ`.

use super::ops::{self, Tape};
use super::params::{ConstraintTag, SegmentInfo};
use super::{ConstraintMode, Network};
use crate::activations::{ActivationKind, ActivationPair};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub(crate) inner: Box<Network>,
    pub(crate) gamma: ActivationPair,
    pub(crate) outer_softplus: bool,
    pub(crate) beta: f64,
    pub(crate) mode: ConstraintMode,
}

impl Transformed {
    pub fn new(
        inner: Network,
        gamma: ActivationPair,
        outer_softplus: bool,
        beta: f64,
        mode: ConstraintMode,
    ) -> Result<Self> {
        if !inner.has_potential() {
            return Err(Error::Unsupported(
                "transformed composition of a network without a tracked potential".into(),
            ));
        }
        if !gamma.is_elementwise() {
            return Err(Error::InvalidArgument("γ must be a scalar activation".into()));
        }
        if mode == ConstraintMode::Monotone {
            if !inner.is_monotone() {
                return Err(Error::Constraint("monotone transform needs a monotone inner network".into()));
            }
            let ok = if outer_softplus {
                gamma.is_constrained() && gamma.is_monotone()
            } else {
                match gamma.kind() {
                    ActivationKind::Constant { value } => *value >= 0.0,
                    ActivationKind::Sigmoid
                    | ActivationKind::Softplus { .. }
                    | ActivationKind::ReluSmooth { .. } => true,
                    _ => false,
                }
            };
            if !ok {
                return Err(Error::Constraint(format!(
                    "monotone transform needs a nonnegative nondecreasing γ, got {:?}",
                    gamma.spec()
                )));
            }
        }
        Ok(Self {
            inner: Box::new(inner),
            gamma,
            outer_softplus,
            beta,
            mode,
        })
    }

    pub fn inner(&self) -> &Network {
        &self.inner
    }

    pub(crate) fn num_params(&self) -> usize {
        self.inner.num_params() + self.gamma.num_params() + 1
    }

    pub(crate) fn layout(&self, prefix: &str, out: &mut Vec<SegmentInfo>) {
        self.inner.layout_into(&format!("{prefix}g."), out);
        self.gamma.param_layout(&format!("{prefix}gamma"), out);
        out.push(SegmentInfo::new(format!("{prefix}shift"), 1, ConstraintTag::Free));
    }

    pub(crate) fn params_into(&self, out: &mut Vec<f64>) {
        self.inner.params_into(out);
        self.gamma.params_into(out);
        out.push(self.beta);
    }

    pub(crate) fn assign_params(&mut self, src: &mut &[f64]) {
        self.inner.assign_params(src);
        self.gamma.assign_params(src);
        self.beta = src[0];
        *src = &src[1..];
    }

    /// `(γ(u), γ'(u))`.
    fn gate(&self, u: f64) -> (f64, f64) {
        let (t, dt) = self.gamma.scalar_with_deriv(u);
        if self.outer_softplus {
            (softplus(t), sigmoid(t) * dt)
        } else {
            (t, dt)
        }
    }

    /// Accumulates `w · ∂γ(u)/∂θ`.
    fn gate_param_grad(&self, u: f64, w: f64, out: &mut [f64]) {
        if self.outer_softplus {
            let t = self.gamma.scalar(u);
            self.gamma.scalar_param_grad(u, w * sigmoid(t), out);
        } else {
            self.gamma.scalar_param_grad(u, w, out);
        }
    }

    fn shifted_potential(&self, x: &Matrix) -> Vec<f64> {
        let mut p = self.inner.potential_batch_unchecked(x);
        p.iter_mut().for_each(|v| *v += self.beta);
        p
    }

    pub(crate) fn forward_batch(&self, x: &Matrix) -> Matrix {
        let mut out = self.inner.forward_batch_unchecked(x);
        let scale: Vec<f64> = self.shifted_potential(x).iter().map(|&u| self.gate(u).0).collect();
        ops::scale_rows(&mut out, &scale);
        out
    }

    pub(crate) fn forward_train(&self, x: &Matrix) -> (Matrix, Tape) {
        let (g, kid) = self.inner.forward_train(x);
        let u = self.shifted_potential(x);
        let scale: Vec<f64> = u.iter().map(|&v| self.gate(v).0).collect();
        let mut out = g.clone();
        ops::scale_rows(&mut out, &scale);
        let tape = Tape {
            mats: vec![g],
            vecs: vec![u, scale],
            kids: vec![kid],
        };
        (out, tape)
    }

    pub(crate) fn backward(&self, x: &Matrix, tape: &Tape, gout: &Matrix, grad: &mut [f64]) {
        let ni = self.inner.num_params();
        let ng = self.gamma.num_params();
        let (gi, rest) = grad.split_at_mut(ni);
        let (gg, gb) = rest.split_at_mut(ng);
        let (g, u, scale) = (&tape.mats[0], &tape.vecs[0], &tape.vecs[1]);
        let e = ops::row_dots(gout, g);
        let mut wts = Vec::with_capacity(u.len());
        for (&ui, &ei) in u.iter().zip(&e) {
            let (_, dgam) = self.gate(ui);
            wts.push(dgam * ei);
            self.gate_param_grad(ui, ei, gg);
        }
        gb[0] += wts.iter().sum::<f64>();
        self.inner.potential_backward(x, &wts, gi);
        let mut gs = gout.clone();
        ops::scale_rows(&mut gs, scale);
        self.inner.backward(x, &tape.kids[0], &gs, gi);
    }

    pub(crate) fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let g = self.inner.forward(x)?;
        let u = self.inner.potential(x)? + self.beta;
        let (gam, dgam) = self.gate(u);
        let mut j = self.inner.jacobian(x)?;
        j.scale(gam);
        j.add_outer(dgam, &g, &g);
        Ok(j)
    }
}
