//! Activations packaged with their derivative and, where one exists in closed
//! form, their scalar antiderivative `ψ` (so that `σ = ∇ψ`).
//!
//! Elementwise kinds act coordinatewise and have diagonal Jacobians. Group
//! kinds (`softmax`, the softmax/softmin mix) consume the whole vector and
//! have dense, symmetric Jacobians.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::params::{ConstraintTag, SegmentInfo};
use crate::numerics::{self, log_cosh, lse_unchecked, sigmoid, softmax_into, softplus, Matrix};

/// Default hidden width of a learnable scalar activation.
pub const DEFAULT_NEURAL_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    Elementwise,
    Group,
}

/// Bounded, nondecreasing base nonlinearity of a [`NeuralScalar`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarBase {
    Sigmoid,
    Tanh,
}

impl ScalarBase {
    #[inline]
    fn value(self, x: f64) -> f64 {
        match self {
            ScalarBase::Sigmoid => sigmoid(x),
            ScalarBase::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn deriv(self, x: f64) -> f64 {
        match self {
            ScalarBase::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ScalarBase::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Antiderivative of the base.
    #[inline]
    fn integral(self, x: f64) -> f64 {
        match self {
            ScalarBase::Sigmoid => softplus(x),
            ScalarBase::Tanh => log_cosh(x),
        }
    }
}

/// Scalar-to-scalar network `offset + Σ_k u_k s(v_k x + β_k)` used as an
/// elementwise activation.
///
/// With `monotone` set, every pair satisfies `u_k v_k ≥ 0`, which makes the
/// function nondecreasing for a nondecreasing base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralScalar {
    pub base: ScalarBase,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub beta: Vec<f64>,
    pub offset: f64,
    pub monotone: bool,
}

const TINY_SLOPE: f64 = 1e-8;

impl NeuralScalar {
    fn width(&self) -> usize {
        self.u.len()
    }

    fn validate(&self) -> Result<()> {
        let k = self.u.len();
        if self.v.len() != k || self.beta.len() != k {
            return Err(Error::Dimension(format!(
                "neural scalar activation: u, v, beta lengths {}, {}, {}",
                k,
                self.v.len(),
                self.beta.len()
            )));
        }
        if self.monotone {
            if let Some(i) = (0..k).find(|&i| self.u[i] * self.v[i] < 0.0) {
                return Err(Error::Constraint(format!(
                    "monotone neural scalar activation needs u_k v_k >= 0; unit {i} has u={}, v={}",
                    self.u[i], self.v[i]
                )));
            }
        }
        Ok(())
    }

    #[inline]
    fn value(&self, x: f64) -> f64 {
        let mut acc = self.offset;
        for k in 0..self.width() {
            acc += self.u[k] * self.base.value(self.v[k] * x + self.beta[k]);
        }
        acc
    }

    #[inline]
    fn deriv(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.width() {
            acc += self.u[k] * self.v[k] * self.base.deriv(self.v[k] * x + self.beta[k]);
        }
        acc
    }

    fn integral(&self, x: f64) -> f64 {
        let mut acc = self.offset * x;
        for k in 0..self.width() {
            let (u, v, b) = (self.u[k], self.v[k], self.beta[k]);
            if v.abs() < TINY_SLOPE {
                acc += u * self.base.value(b) * x;
            } else {
                acc += u * (self.base.integral(v * x + b) - self.base.integral(b)) / v;
            }
        }
        acc
    }

    /// Accumulates `w · ∂σ(x)/∂θ` into `[u | v | beta | offset]`.
    fn value_param_grad(&self, x: f64, w: f64, out: &mut [f64]) {
        let k = self.width();
        for i in 0..k {
            let a = self.v[i] * x + self.beta[i];
            let s = self.base.value(a);
            let ds = self.base.deriv(a);
            out[i] += w * s;
            out[k + i] += w * self.u[i] * ds * x;
            out[2 * k + i] += w * self.u[i] * ds;
        }
        out[3 * k] += w;
    }

    /// Accumulates `w · ∂ψ(x)/∂θ`, matching the branch choice of `integral`.
    fn integral_param_grad(&self, x: f64, w: f64, out: &mut [f64]) {
        let k = self.width();
        for i in 0..k {
            let (u, v, b) = (self.u[i], self.v[i], self.beta[i]);
            if v.abs() < TINY_SLOPE {
                let sb = self.base.value(b);
                let dsb = self.base.deriv(b);
                out[i] += w * sb * x;
                out[k + i] += w * u * dsb * x * x * 0.5;
                out[2 * k + i] += w * u * dsb * x;
            } else {
                let a = v * x + b;
                let big = self.base.integral(a) - self.base.integral(b);
                out[i] += w * big / v;
                out[k + i] += w * (u * self.base.value(a) * x / v - u * big / (v * v));
                out[2 * k + i] += w * u * (self.base.value(a) - self.base.value(b)) / v;
            }
        }
        out[3 * k] += w * x;
    }

    fn project(&mut self) {
        if !self.monotone {
            return;
        }
        // Nearest point of {u v >= 0}: zero the smaller-magnitude coordinate.
        for k in 0..self.width() {
            if self.u[k] * self.v[k] < 0.0 {
                if self.u[k].abs() <= self.v[k].abs() {
                    self.u[k] = 0.0;
                } else {
                    self.v[k] = 0.0;
                }
            }
        }
    }
}

/// Activation kind together with its current (possibly learnable) values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Tanh,
    Sigmoid,
    Softplus { beta: f64 },
    /// Quadratically smoothed ReLU with transition width `width`.
    ReluSmooth { width: f64 },
    Constant { value: f64 },
    /// `α tanh(x) + β (x − tanh(x))`.
    ScaledTanhMix { alpha: f64, beta: f64, constrained: bool },
    /// `α softmax_t(x) − β softmin_t(x)` with `softmin_t(x) = softmax_t(−x)`.
    SoftmaxSoftminMix { alpha: f64, beta: f64, t: f64, constrained: bool },
    Softmax { t: f64 },
    NeuralScalar(NeuralScalar),
}

/// Architecture-level description of an activation (no learned values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationSpec {
    Identity,
    Tanh,
    Sigmoid,
    Softplus { beta: f64 },
    ReluSmooth { width: f64 },
    Constant { value: f64 },
    ScaledTanhMix { constrained: bool },
    SoftmaxSoftminMix { t: f64, constrained: bool },
    Softmax { t: f64 },
    NeuralScalar { width: usize, base: ScalarBase, monotone: bool },
}

impl ActivationSpec {
    /// Fresh activation; learnable mixes start at `α = β = 1`, neural scalar
    /// units draw `u, v ~ U(−1, 1)` (`U(0, 1)` when monotone) with zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ActivationPair> {
        let kind = match *self {
            ActivationSpec::Identity => ActivationKind::Identity,
            ActivationSpec::Tanh => ActivationKind::Tanh,
            ActivationSpec::Sigmoid => ActivationKind::Sigmoid,
            ActivationSpec::Softplus { beta } => ActivationKind::Softplus { beta },
            ActivationSpec::ReluSmooth { width } => ActivationKind::ReluSmooth { width },
            ActivationSpec::Constant { value } => ActivationKind::Constant { value },
            ActivationSpec::ScaledTanhMix { constrained } => ActivationKind::ScaledTanhMix {
                alpha: 1.0,
                beta: 1.0,
                constrained,
            },
            ActivationSpec::SoftmaxSoftminMix { t, constrained } => {
                ActivationKind::SoftmaxSoftminMix {
                    alpha: 1.0,
                    beta: 1.0,
                    t,
                    constrained,
                }
            }
            ActivationSpec::Softmax { t } => ActivationKind::Softmax { t },
            ActivationSpec::NeuralScalar {
                width,
                base,
                monotone,
            } => {
                let lo = if monotone { 0.0 } else { -1.0 };
                let u = (0..width).map(|_| rng.gen_range(lo..1.0)).collect();
                let v = (0..width).map(|_| rng.gen_range(lo..1.0)).collect();
                ActivationKind::NeuralScalar(NeuralScalar {
                    base,
                    u,
                    v,
                    beta: vec![0.0; width],
                    offset: 0.0,
                    monotone,
                })
            }
        };
        ActivationPair::new(kind)
    }

    pub fn arity(&self) -> Arity {
        match self {
            ActivationSpec::Softmax { .. } | ActivationSpec::SoftmaxSoftminMix { .. } => {
                Arity::Group
            }
            _ => Arity::Elementwise,
        }
    }
}

/// An activation `σ` with derivative and, when known, antiderivative `ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivationPair {
    kind: ActivationKind,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

impl ActivationPair {
    pub fn new(kind: ActivationKind) -> Result<Self> {
        match &kind {
            ActivationKind::Softplus { beta } => check_positive("softplus beta", *beta)?,
            ActivationKind::ReluSmooth { width } => check_positive("relu_smooth width", *width)?,
            ActivationKind::Softmax { t } => check_positive("softmax temperature", *t)?,
            ActivationKind::SoftmaxSoftminMix {
                alpha,
                beta,
                t,
                constrained,
            } => {
                check_positive("softmax temperature", *t)?;
                if *constrained && (*alpha < 0.0 || *beta < 0.0) {
                    return Err(Error::Constraint(format!(
                        "constrained softmax/softmin mix needs alpha, beta >= 0 (got {alpha}, {beta})"
                    )));
                }
            }
            ActivationKind::ScaledTanhMix {
                alpha,
                beta,
                constrained,
            } => {
                if *constrained && (*alpha < 0.0 || *beta < 0.0) {
                    return Err(Error::Constraint(format!(
                        "constrained tanh mix needs alpha, beta >= 0 (got {alpha}, {beta})"
                    )));
                }
            }
            ActivationKind::NeuralScalar(ns) => ns.validate()?,
            _ => {}
        }
        Ok(Self { kind })
    }

    pub fn identity() -> Self {
        Self { kind: ActivationKind::Identity }
    }

    pub fn tanh() -> Self {
        Self { kind: ActivationKind::Tanh }
    }

    pub fn sigmoid() -> Self {
        Self { kind: ActivationKind::Sigmoid }
    }

    pub fn softmax(t: f64) -> Result<Self> {
        Self::new(ActivationKind::Softmax { t })
    }

    pub fn softplus(beta: f64) -> Result<Self> {
        Self::new(ActivationKind::Softplus { beta })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            kind: ActivationKind::Constant { value },
        }
    }

    pub fn scaled_tanh_mix(alpha: f64, beta: f64, constrained: bool) -> Result<Self> {
        Self::new(ActivationKind::ScaledTanhMix {
            alpha,
            beta,
            constrained,
        })
    }

    pub fn softmax_softmin_mix(alpha: f64, beta: f64, t: f64, constrained: bool) -> Result<Self> {
        Self::new(ActivationKind::SoftmaxSoftminMix {
            alpha,
            beta,
            t,
            constrained,
        })
    }

    /// Scalar network `offset + u^T s(v x + β)` as an elementwise activation.
    /// Monotone mode rejects any unit with `u_k v_k < 0`.
    pub fn neural_scalar(params: NeuralScalar) -> Result<Self> {
        Self::new(ActivationKind::NeuralScalar(params))
    }

    pub fn kind(&self) -> &ActivationKind {
        &self.kind
    }

    pub fn spec(&self) -> ActivationSpec {
        match &self.kind {
            ActivationKind::Identity => ActivationSpec::Identity,
            ActivationKind::Tanh => ActivationSpec::Tanh,
            ActivationKind::Sigmoid => ActivationSpec::Sigmoid,
            ActivationKind::Softplus { beta } => ActivationSpec::Softplus { beta: *beta },
            ActivationKind::ReluSmooth { width } => ActivationSpec::ReluSmooth { width: *width },
            ActivationKind::Constant { value } => ActivationSpec::Constant { value: *value },
            ActivationKind::ScaledTanhMix { constrained, .. } => ActivationSpec::ScaledTanhMix {
                constrained: *constrained,
            },
            ActivationKind::SoftmaxSoftminMix { t, constrained, .. } => {
                ActivationSpec::SoftmaxSoftminMix {
                    t: *t,
                    constrained: *constrained,
                }
            }
            ActivationKind::Softmax { t } => ActivationSpec::Softmax { t: *t },
            ActivationKind::NeuralScalar(ns) => ActivationSpec::NeuralScalar {
                width: ns.width(),
                base: ns.base,
                monotone: ns.monotone,
            },
        }
    }

    pub fn arity(&self) -> Arity {
        self.spec().arity()
    }

    pub fn is_elementwise(&self) -> bool {
        self.arity() == Arity::Elementwise
    }

    /// Whether monotonicity (nonnegative derivative, or PSD Jacobian for group
    /// kinds) holds for the current values.
    pub fn is_monotone(&self) -> bool {
        match &self.kind {
            ActivationKind::ScaledTanhMix { alpha, beta, .. }
            | ActivationKind::SoftmaxSoftminMix { alpha, beta, .. } => {
                *alpha >= 0.0 && *beta >= 0.0
            }
            ActivationKind::NeuralScalar(ns) => {
                (0..ns.width()).all(|k| ns.u[k] * ns.v[k] >= 0.0)
            }
            _ => true,
        }
    }

    /// Whether monotonicity is enforced on the learnable values.
    pub fn is_constrained(&self) -> bool {
        match &self.kind {
            ActivationKind::ScaledTanhMix { constrained, .. }
            | ActivationKind::SoftmaxSoftminMix { constrained, .. } => *constrained,
            ActivationKind::NeuralScalar(ns) => ns.monotone,
            _ => true,
        }
    }

    pub fn antiderivative_known(&self) -> bool {
        !matches!(self.kind, ActivationKind::Softplus { .. })
    }

    // ---- parameters -------------------------------------------------------

    pub fn num_params(&self) -> usize {
        match &self.kind {
            ActivationKind::ScaledTanhMix { .. } | ActivationKind::SoftmaxSoftminMix { .. } => 2,
            ActivationKind::NeuralScalar(ns) => 3 * ns.width() + 1,
            _ => 0,
        }
    }

    pub fn param_layout(&self, prefix: &str, out: &mut Vec<SegmentInfo>) {
        match &self.kind {
            ActivationKind::ScaledTanhMix { constrained, .. }
            | ActivationKind::SoftmaxSoftminMix { constrained, .. } => {
                let tag = if *constrained {
                    ConstraintTag::Nonneg
                } else {
                    ConstraintTag::Free
                };
                out.push(SegmentInfo::new(format!("{prefix}.alpha"), 1, tag));
                out.push(SegmentInfo::new(format!("{prefix}.beta"), 1, tag));
            }
            ActivationKind::NeuralScalar(ns) => {
                let k = ns.width();
                let tag = if ns.monotone {
                    ConstraintTag::NonnegProduct
                } else {
                    ConstraintTag::Free
                };
                out.push(SegmentInfo::new(format!("{prefix}.u"), k, tag));
                out.push(SegmentInfo::new(format!("{prefix}.v"), k, tag));
                out.push(SegmentInfo::new(format!("{prefix}.beta"), k, ConstraintTag::Free));
                out.push(SegmentInfo::new(format!("{prefix}.offset"), 1, ConstraintTag::Free));
            }
            _ => {}
        }
    }

    pub fn params_into(&self, out: &mut Vec<f64>) {
        match &self.kind {
            ActivationKind::ScaledTanhMix { alpha, beta, .. }
            | ActivationKind::SoftmaxSoftminMix { alpha, beta, .. } => {
                out.push(*alpha);
                out.push(*beta);
            }
            ActivationKind::NeuralScalar(ns) => {
                out.extend_from_slice(&ns.u);
                out.extend_from_slice(&ns.v);
                out.extend_from_slice(&ns.beta);
                out.push(ns.offset);
            }
            _ => {}
        }
    }

    /// Overwrites learnable values from the front of `src`, advancing it.
    pub fn assign_params(&mut self, src: &mut &[f64]) {
        let n = self.num_params();
        let (head, rest) = src.split_at(n);
        match &mut self.kind {
            ActivationKind::ScaledTanhMix { alpha, beta, .. }
            | ActivationKind::SoftmaxSoftminMix { alpha, beta, .. } => {
                *alpha = head[0];
                *beta = head[1];
            }
            ActivationKind::NeuralScalar(ns) => {
                let k = ns.width();
                ns.u.copy_from_slice(&head[..k]);
                ns.v.copy_from_slice(&head[k..2 * k]);
                ns.beta.copy_from_slice(&head[2 * k..3 * k]);
                ns.offset = head[3 * k];
            }
            _ => {}
        }
        *src = rest;
    }

    pub fn project(&mut self) {
        match &mut self.kind {
            ActivationKind::ScaledTanhMix {
                alpha,
                beta,
                constrained: true,
            }
            | ActivationKind::SoftmaxSoftminMix {
                alpha,
                beta,
                constrained: true,
                ..
            } => {
                *alpha = alpha.max(0.0);
                *beta = beta.max(0.0);
            }
            ActivationKind::NeuralScalar(ns) => ns.project(),
            _ => {}
        }
    }

    pub fn check_constraints(&self) -> Result<()> {
        if self.is_constrained() && !self.is_monotone() {
            return Err(Error::Constraint(format!(
                "{:?} activation violates its monotonicity constraint",
                self.spec()
            )));
        }
        Ok(())
    }

    // ---- scalar (elementwise) evaluation ----------------------------------

    /// `σ(x)` for an elementwise kind.
    #[inline]
    pub fn scalar(&self, x: f64) -> f64 {
        match &self.kind {
            ActivationKind::Identity => x,
            ActivationKind::Tanh => numerics::tanh(x),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Softplus { beta } => softplus(beta * x) / beta,
            ActivationKind::ReluSmooth { width } => {
                if x <= 0.0 {
                    0.0
                } else if x < *width {
                    x * x / (2.0 * width)
                } else {
                    x - 0.5 * width
                }
            }
            ActivationKind::Constant { value } => *value,
            ActivationKind::ScaledTanhMix { alpha, beta, .. } => {
                let t = numerics::tanh(x);
                alpha * t + beta * (x - t)
            }
            ActivationKind::NeuralScalar(ns) => ns.value(x),
            ActivationKind::Softmax { .. } | ActivationKind::SoftmaxSoftminMix { .. } => {
                panic!("scalar evaluation of a group activation")
            }
        }
    }

    /// `(σ(x), σ'(x))` for an elementwise kind.
    #[inline]
    pub fn scalar_with_deriv(&self, x: f64) -> (f64, f64) {
        match &self.kind {
            ActivationKind::Identity => (x, 1.0),
            ActivationKind::Tanh => {
                let t = numerics::tanh(x);
                (t, 1.0 - t * t)
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            ActivationKind::Softplus { beta } => (softplus(beta * x) / beta, sigmoid(beta * x)),
            ActivationKind::ReluSmooth { width } => {
                if x <= 0.0 {
                    (0.0, 0.0)
                } else if x < *width {
                    (x * x / (2.0 * width), x / width)
                } else {
                    (x - 0.5 * width, 1.0)
                }
            }
            ActivationKind::Constant { value } => (*value, 0.0),
            ActivationKind::ScaledTanhMix { alpha, beta, .. } => {
                let t = numerics::tanh(x);
                let sech2 = 1.0 - t * t;
                (alpha * t + beta * (x - t), alpha * sech2 + beta * (1.0 - sech2))
            }
            ActivationKind::NeuralScalar(ns) => (ns.value(x), ns.deriv(x)),
            ActivationKind::Softmax { .. } | ActivationKind::SoftmaxSoftminMix { .. } => {
                panic!("scalar evaluation of a group activation")
            }
        }
    }

    #[inline]
    pub fn scalar_deriv(&self, x: f64) -> f64 {
        self.scalar_with_deriv(x).1
    }

    /// Scalar antiderivative of an elementwise kind.
    pub fn scalar_antiderivative(&self, x: f64) -> Result<f64> {
        Ok(match &self.kind {
            ActivationKind::Identity => 0.5 * x * x,
            ActivationKind::Tanh => log_cosh(x),
            ActivationKind::Sigmoid => softplus(x),
            ActivationKind::ReluSmooth { width } => {
                let w = *width;
                if x <= 0.0 {
                    0.0
                } else if x < w {
                    x * x * x / (6.0 * w)
                } else {
                    0.5 * x * x - 0.5 * w * x + w * w / 6.0
                }
            }
            ActivationKind::Constant { value } => value * x,
            ActivationKind::ScaledTanhMix { alpha, beta, .. } => {
                let lc = log_cosh(x);
                alpha * lc + beta * (0.5 * x * x - lc)
            }
            ActivationKind::NeuralScalar(ns) => ns.integral(x),
            ActivationKind::Softplus { .. } => {
                return Err(Error::Unsupported("softplus antiderivative".into()))
            }
            ActivationKind::Softmax { .. } | ActivationKind::SoftmaxSoftminMix { .. } => {
                return Err(Error::Unsupported("scalar antiderivative of a group activation".into()))
            }
        })
    }

    /// Accumulates `w · ∂σ(x)/∂θ` for an elementwise kind.
    #[inline]
    pub fn scalar_param_grad(&self, x: f64, w: f64, out: &mut [f64]) {
        match &self.kind {
            ActivationKind::ScaledTanhMix { .. } => {
                let t = numerics::tanh(x);
                out[0] += w * t;
                out[1] += w * (x - t);
            }
            ActivationKind::NeuralScalar(ns) => ns.value_param_grad(x, w, out),
            _ => {}
        }
    }

    /// Accumulates `w · ∂ψ(x)/∂θ` for an elementwise kind.
    pub fn scalar_antiderivative_param_grad(&self, x: f64, w: f64, out: &mut [f64]) {
        match &self.kind {
            ActivationKind::ScaledTanhMix { .. } => {
                let lc = log_cosh(x);
                out[0] += w * lc;
                out[1] += w * (0.5 * x * x - lc);
            }
            ActivationKind::NeuralScalar(ns) => ns.integral_param_grad(x, w, out),
            _ => {}
        }
    }

    // ---- vector evaluation ------------------------------------------------

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.eval_into(z, &mut out);
        out
    }

    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        match &self.kind {
            ActivationKind::Softmax { t } => softmax_into(z, *t, out),
            ActivationKind::SoftmaxSoftminMix { alpha, beta, t, .. } => {
                softmax_into(z, *t, out);
                let neg: Vec<f64> = z.iter().map(|v| -v).collect();
                let mut s2 = vec![0.0; z.len()];
                softmax_into(&neg, *t, &mut s2);
                for (o, s) in out.iter_mut().zip(&s2) {
                    *o = alpha * *o - beta * s;
                }
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(z) {
                    *o = self.scalar(x);
                }
            }
        }
    }

    /// Jacobian `J_σ(z)`: diagonal for elementwise kinds, `t (diag(s) − s s^T)`
    /// (and its mix) for group kinds.
    pub fn derivative(&self, z: &[f64]) -> Matrix {
        let n = z.len();
        match &self.kind {
            ActivationKind::Softmax { t } => softmax_jacobian(z, *t, 1.0),
            ActivationKind::SoftmaxSoftminMix { alpha, beta, t, .. } => {
                let mut j = softmax_jacobian(z, *t, *alpha);
                let neg: Vec<f64> = z.iter().map(|v| -v).collect();
                j.add_scaled(1.0, &softmax_jacobian(&neg, *t, *beta));
                j
            }
            _ => {
                let mut m = Matrix::zeros(n, n);
                for (i, &x) in z.iter().enumerate() {
                    m[(i, i)] = self.scalar_deriv(x);
                }
                m
            }
        }
    }

    /// `dz = J_σ(z)^T ds` (overwrites `dz`).
    pub fn vjp_into(&self, z: &[f64], ds: &[f64], dz: &mut [f64]) {
        match &self.kind {
            ActivationKind::Softmax { t } => {
                let mut s = vec![0.0; z.len()];
                softmax_into(z, *t, &mut s);
                softmax_vjp(&s, ds, *t, 1.0, dz, false);
            }
            ActivationKind::SoftmaxSoftminMix { alpha, beta, t, .. } => {
                let mut s = vec![0.0; z.len()];
                softmax_into(z, *t, &mut s);
                softmax_vjp(&s, ds, *t, *alpha, dz, false);
                let neg: Vec<f64> = z.iter().map(|v| -v).collect();
                softmax_into(&neg, *t, &mut s);
                softmax_vjp(&s, ds, *t, *beta, dz, true);
            }
            _ => {
                for ((o, &x), &g) in dz.iter_mut().zip(z).zip(ds) {
                    *o = self.scalar_deriv(x) * g;
                }
            }
        }
    }

    /// Accumulates `(∂σ(z)/∂θ)^T ds` into `dparams`.
    pub fn param_vjp(&self, z: &[f64], ds: &[f64], dparams: &mut [f64]) {
        match &self.kind {
            ActivationKind::SoftmaxSoftminMix { t, .. } => {
                let mut s = vec![0.0; z.len()];
                softmax_into(z, *t, &mut s);
                dparams[0] += numerics::dot(&s, ds);
                let neg: Vec<f64> = z.iter().map(|v| -v).collect();
                softmax_into(&neg, *t, &mut s);
                dparams[1] -= numerics::dot(&s, ds);
            }
            ActivationKind::ScaledTanhMix { .. } | ActivationKind::NeuralScalar(_) => {
                for (&x, &g) in z.iter().zip(ds) {
                    self.scalar_param_grad(x, g, dparams);
                }
            }
            _ => {}
        }
    }

    /// `ψ(z)` with `∇ψ = σ`.
    pub fn antiderivative(&self, z: &[f64]) -> Result<f64> {
        match &self.kind {
            ActivationKind::Softmax { t } => numerics::logsumexp_t(z, *t),
            ActivationKind::SoftmaxSoftminMix { alpha, beta, t, .. } => {
                let neg: Vec<f64> = z.iter().map(|v| -v).collect();
                Ok(alpha * numerics::logsumexp_t(z, *t)? + beta * numerics::logsumexp_t(&neg, *t)?)
            }
            _ => z.iter().map(|&x| self.scalar_antiderivative(x)).sum(),
        }
    }

    /// Accumulates `w · ∂ψ(z)/∂θ` into `dparams`.
    pub fn antiderivative_param_grad(&self, z: &[f64], w: f64, dparams: &mut [f64]) -> Result<()> {
        if !self.antiderivative_known() {
            return Err(Error::Unsupported("antiderivative of softplus".into()));
        }
        match &self.kind {
            ActivationKind::SoftmaxSoftminMix { t, .. } => {
                dparams[0] += w * lse_unchecked(z, *t);
                let neg: Vec<f64> = z.iter().map(|v| -v).collect();
                dparams[1] += w * lse_unchecked(&neg, *t);
            }
            ActivationKind::ScaledTanhMix { .. } | ActivationKind::NeuralScalar(_) => {
                for &x in z {
                    self.scalar_antiderivative_param_grad(x, w, dparams);
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// `scale · t (diag(s) − s s^T)` with `s = softmax_t(z)`.
fn softmax_jacobian(z: &[f64], t: f64, scale: f64) -> Matrix {
    let n = z.len();
    let mut s = vec![0.0; n];
    softmax_into(z, t, &mut s);
    let mut j = Matrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let diag = if i == k { s[i] } else { 0.0 };
            j[(i, k)] = scale * t * (diag - s[i] * s[k]);
        }
    }
    j
}

/// `dz (+)= scale · t (s ∘ ds − s (s·ds))`.
#[inline]
fn softmax_vjp(s: &[f64], ds: &[f64], t: f64, scale: f64, dz: &mut [f64], accumulate: bool) {
    let sd = numerics::dot(s, ds);
    let c = scale * t;
    for i in 0..s.len() {
        let v = c * s[i] * (ds[i] - sd);
        if accumulate {
            dz[i] += v;
        } else {
            dz[i] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_gradient, fd_jacobian, min_sym_eigenvalue};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_kinds() -> Vec<ActivationPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        vec![
            ActivationPair::identity(),
            ActivationPair::tanh(),
            ActivationPair::sigmoid(),
            ActivationPair::softplus(2.0).unwrap(),
            ActivationPair::new(ActivationKind::ReluSmooth { width: 0.5 }).unwrap(),
            ActivationPair::constant(0.3),
            ActivationPair::scaled_tanh_mix(0.7, 1.3, true).unwrap(),
            ActivationPair::scaled_tanh_mix(-0.4, 0.9, false).unwrap(),
            ActivationPair::softmax(1.0).unwrap(),
            ActivationPair::softmax(3.0).unwrap(),
            ActivationPair::softmax_softmin_mix(0.8, 0.5, 1.5, true).unwrap(),
            ActivationSpec::NeuralScalar {
                width: 6,
                base: ScalarBase::Sigmoid,
                monotone: true,
            }
            .init(&mut rng)
            .unwrap(),
            ActivationSpec::NeuralScalar {
                width: 5,
                base: ScalarBase::Tanh,
                monotone: false,
            }
            .init(&mut rng)
            .unwrap(),
        ]
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.5..2.5)).collect()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(ActivationPair::sigmoid().eval(&[0.0, 0.0]), vec![0.5, 0.5]);
        let t = ActivationPair::tanh();
        assert_eq!(t.eval(&[0.0]), vec![0.0]);
        assert_eq!(t.derivative(&[0.0])[(0, 0)], 1.0);
        let sp = ActivationPair::softplus(1.0).unwrap();
        assert!((sp.eval(&[0.0])[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let j = ActivationPair::softmax(1.0).unwrap().derivative(&[0.0, 0.0]);
        let e = Matrix::from_rows(&[vec![0.25, -0.25], vec![-0.25, 0.25]]).unwrap();
        assert!(j.max_abs_diff(&e) < 1e-15);
        let j = ActivationPair::sigmoid().derivative(&[0.0]);
        assert_eq!(j[(0, 0)], 0.25);
    }

    #[test]
    fn antiderivative_examples() {
        let z = [0.3, -1.0, 2.0];
        let sm = ActivationPair::softmax(2.0).unwrap();
        assert_eq!(sm.antiderivative(&z).unwrap(), numerics::logsumexp_t(&z, 2.0).unwrap());
        let sg = ActivationPair::sigmoid();
        assert!((sg.antiderivative(&[0.0, 0.0]).unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        let sp = ActivationPair::softplus(1.0).unwrap();
        assert!(matches!(sp.antiderivative(&z), Err(Error::Unsupported(_))));
    }

    #[test]
    fn derivative_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in all_kinds() {
            for _ in 0..100 {
                let z = random_point(&mut rng, 4);
                let fd = fd_jacobian(|v| act.eval(v), &z, None).unwrap();
                let an = act.derivative(&z);
                assert!(fd.max_abs_diff(&an) < 1e-6, "{:?}", act.spec());
                let ds = random_point(&mut rng, 4);
                let mut dz = vec![0.0; 4];
                act.vjp_into(&z, &ds, &mut dz);
                let expect = an.matvec_t(&ds).unwrap();
                for (a, b) in dz.iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn antiderivative_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for act in all_kinds().into_iter().filter(|a| a.antiderivative_known()) {
            for _ in 0..100 {
                let z = random_point(&mut rng, 3);
                let g = fd_gradient(|v| act.antiderivative(v).unwrap(), &z, None).unwrap();
                let s = act.eval(&z);
                for (a, b) in g.iter().zip(&s) {
                    assert!((a - b).abs() < 1e-6, "{:?}: {a} vs {b}", act.spec());
                }
            }
        }
    }

    #[test]
    fn param_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for act in all_kinds().into_iter().filter(|a| a.num_params() > 0) {
            let mut theta = Vec::new();
            act.params_into(&mut theta);
            let z = random_point(&mut rng, 3);
            let ds = random_point(&mut rng, 3);
            let with = |p: &[f64]| {
                let mut a = act.clone();
                let mut s = p;
                a.assign_params(&mut s);
                a
            };
            let fd = fd_gradient(|p| numerics::dot(&with(p).eval(&z), &ds), &theta, None).unwrap();
            let mut an = vec![0.0; theta.len()];
            act.param_vjp(&z, &ds, &mut an);
            for (a, b) in an.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{:?}", act.spec());
            }
            let fd = fd_gradient(|p| with(p).antiderivative(&z).unwrap(), &theta, None).unwrap();
            let mut an = vec![0.0; theta.len()];
            act.antiderivative_param_grad(&z, 1.0, &mut an).unwrap();
            for (a, b) in an.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{:?}", act.spec());
            }
        }
    }

    #[test]
    fn monotone_kinds_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for act in all_kinds().into_iter().filter(|a| a.is_monotone() && a.is_elementwise()) {
            for _ in 0..10_000 {
                let a = rng.gen_range(-5.0..5.0);
                let b = rng.gen_range(-5.0..5.0);
                assert!((act.scalar(a) - act.scalar(b)) * (a - b) >= 0.0, "{:?}", act.spec());
            }
        }
    }

    #[test]
    fn group_jacobians_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let sm = ActivationPair::softmax(2.0).unwrap();
        let mix = ActivationPair::softmax_softmin_mix(0.6, 1.7, 1.0, true).unwrap();
        for _ in 0..100 {
            let z = random_point(&mut rng, 6);
            assert!(min_sym_eigenvalue(&sm.derivative(&z)).unwrap() >= -1e-10);
            assert!(min_sym_eigenvalue(&mix.derivative(&z)).unwrap() >= -1e-8);
        }
    }

    #[test]
    fn scaled_tanh_mix_derivative_nonnegative() {
        let act = ActivationPair::scaled_tanh_mix(0.3, 2.0, true).unwrap();
        for i in -400..=400 {
            let x = i as f64 * 0.025;
            let t = x.tanh();
            let sech2 = 1.0 - t * t;
            let d = act.scalar_deriv(x);
            assert!((d - (0.3 * sech2 + 2.0 * (1.0 - sech2))).abs() < 1e-14);
            assert!(d >= 0.0);
        }
    }

    #[test]
    fn softmin_mix_matches_definition() {
        let act = ActivationPair::softmax_softmin_mix(1.2, 0.4, 1.0, true).unwrap();
        let z = [0.5, -0.3, 1.1];
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let sm = numerics::softmax_t(&z, 1.0).unwrap();
        let smin = numerics::softmax_t(&neg, 1.0).unwrap();
        let got = act.eval(&z);
        for i in 0..3 {
            assert!((got[i] - (1.2 * sm[i] - 0.4 * smin[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn neural_scalar_examples() {
        let unit = NeuralScalar {
            base: ScalarBase::Sigmoid,
            u: vec![1.0],
            v: vec![1.0],
            beta: vec![0.0],
            offset: 0.0,
            monotone: true,
        };
        let act = ActivationPair::neural_scalar(unit).unwrap();
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            assert_eq!(act.scalar(x), sigmoid(x));
        }

        let zero = NeuralScalar {
            base: ScalarBase::Tanh,
            u: vec![0.0; 4],
            v: vec![0.3, -1.0, 2.0, 0.5],
            beta: vec![0.1; 4],
            offset: 0.0,
            monotone: false,
        };
        let act = ActivationPair::neural_scalar(zero).unwrap();
        assert!([-2.0, 0.0, 5.0].iter().all(|&x| act.scalar(x) == 0.0));

        let bad = NeuralScalar {
            base: ScalarBase::Sigmoid,
            u: vec![1.0, -0.5],
            v: vec![1.0, 2.0],
            beta: vec![0.0; 2],
            offset: 0.0,
            monotone: true,
        };
        assert!(matches!(ActivationPair::neural_scalar(bad), Err(Error::Constraint(_))));
    }

    #[test]
    fn neural_scalar_projection_restores_monotonicity() {
        let mut act = ActivationPair::neural_scalar(NeuralScalar {
            base: ScalarBase::Sigmoid,
            u: vec![1.0, 0.5],
            v: vec![1.0, 2.0],
            beta: vec![0.0; 2],
            offset: 0.0,
            monotone: true,
        })
        .unwrap();
        let mut p = Vec::new();
        act.params_into(&mut p);
        p[1] = -0.3; // u_1 < 0 with v_1 = 2
        let mut s = p.as_slice();
        act.assign_params(&mut s);
        assert!(!act.is_monotone());
        act.project();
        assert!(act.is_monotone());
        let mut q = Vec::new();
        act.params_into(&mut q);
        assert_eq!(q[1], 0.0);
        assert_eq!(q[3], 2.0);
    }
}
