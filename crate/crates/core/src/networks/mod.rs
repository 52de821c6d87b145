//! Gradient network architectures and their compositions.
//!
//! Every [`Network`] maps `R^d → R^d`, exposes an analytic Jacobian, a flat
//! parameter view, and batched forward/backward passes used by the trainer.
//! Where a potential `F` with `∇F = f` is tracked, [`Network::potential`]
//! evaluates it.

mod cascade;
mod compose;
mod modular;
pub(crate) mod ops;
pub mod params;
pub mod serial;
mod single;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cascade::GradNetC;
pub use compose::Transformed;
pub use modular::{GradNetM, Module, ModuleSpec};
pub use params::{ConstraintTag, ParamView, SegmentInfo};
pub use serial::NetworkFile;
pub use single::SingleLayer;

use crate::activations::ActivationSpec;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};
use ops::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    None,
    Monotone,
}

/// Architecture description without learned values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    SingleLayer {
        dim: usize,
        hidden: usize,
        activation: ActivationSpec,
        #[serde(default)]
        mode: ConstraintMode,
    },
    GradnetM {
        dim: usize,
        modules: Vec<ModuleSpec>,
        #[serde(default)]
        mode: ConstraintMode,
    },
    GradnetC {
        dim: usize,
        hidden: usize,
        activations: Vec<ActivationSpec>,
        #[serde(default)]
        mode: ConstraintMode,
    },
    Difference {
        first: Box<NetworkSpec>,
        second: Box<NetworkSpec>,
    },
    StronglyConvexWrap {
        mu: f64,
        inner: Box<NetworkSpec>,
    },
    LipschitzFlip {
        l: f64,
        inner: Box<NetworkSpec>,
    },
    LinearCombination {
        nets: Vec<NetworkSpec>,
        #[serde(default)]
        mode: ConstraintMode,
    },
    Transformed {
        inner: Box<NetworkSpec>,
        gamma: ActivationSpec,
        #[serde(default)]
        outer_softplus: bool,
        #[serde(default)]
        mode: ConstraintMode,
    },
}

impl NetworkSpec {
    pub fn dim(&self) -> usize {
        match self {
            NetworkSpec::SingleLayer { dim, .. }
            | NetworkSpec::GradnetM { dim, .. }
            | NetworkSpec::GradnetC { dim, .. } => *dim,
            NetworkSpec::Difference { first, .. } => first.dim(),
            NetworkSpec::StronglyConvexWrap { inner, .. }
            | NetworkSpec::LipschitzFlip { inner, .. }
            | NetworkSpec::Transformed { inner, .. } => inner.dim(),
            NetworkSpec::LinearCombination { nets, .. } => nets.first().map_or(0, NetworkSpec::dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    SingleLayer(SingleLayer),
    GradNetM(GradNetM),
    GradNetC(GradNetC),
    Difference(Box<Network>, Box<Network>),
    StronglyConvex {
        inner: Box<Network>,
        mu: f64,
    },
    LipschitzFlip {
        inner: Box<Network>,
        l: f64,
    },
    LinearCombination {
        nets: Vec<Network>,
        coeffs: Vec<f64>,
        mode: ConstraintMode,
    },
    Transformed(Transformed),
}

impl From<SingleLayer> for Network {
    fn from(n: SingleLayer) -> Self {
        Network::SingleLayer(n)
    }
}

impl From<GradNetM> for Network {
    fn from(n: GradNetM) -> Self {
        Network::GradNetM(n)
    }
}

impl From<GradNetC> for Network {
    fn from(n: GradNetC) -> Self {
        Network::GradNetC(n)
    }
}

impl From<Transformed> for Network {
    fn from(n: Transformed) -> Self {
        Network::Transformed(n)
    }
}

fn check_dim(x: usize, d: usize) -> Result<()> {
    if x != d {
        return Err(Error::Dimension(format!("input has {x} entries, network dim is {d}")));
    }
    Ok(())
}

impl Network {
    /// Fresh instance of `spec` with randomly initialised weights.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec {
            NetworkSpec::SingleLayer {
                dim,
                hidden,
                activation,
                mode,
            } => SingleLayer::init(*dim, *hidden, activation, *mode, rng)?.into(),
            NetworkSpec::GradnetM { dim, modules, mode } => GradNetM::init(*dim, modules, *mode, rng)?.into(),
            NetworkSpec::GradnetC {
                dim,
                hidden,
                activations,
                mode,
            } => GradNetC::init(*dim, *hidden, activations, *mode, rng)?.into(),
            NetworkSpec::Difference { first, second } => {
                let a = Network::init(first, rng)?;
                let b = Network::init(second, rng)?;
                Network::difference(a, b)?
            }
            NetworkSpec::StronglyConvexWrap { mu, inner } => {
                Network::strongly_convex(Network::init(inner, rng)?, *mu)?
            }
            NetworkSpec::LipschitzFlip { l, inner } => Network::lipschitz_flip(Network::init(inner, rng)?, *l),
            NetworkSpec::LinearCombination { nets, mode } => {
                let nets = nets.iter().map(|s| Network::init(s, rng)).collect::<Result<Vec<_>>>()?;
                let coeffs = vec![1.0; nets.len()];
                Network::linear_combination(nets, coeffs, *mode)?
            }
            NetworkSpec::Transformed {
                inner,
                gamma,
                outer_softplus,
                mode,
            } => {
                let g = Network::init(inner, rng)?;
                let gamma = gamma.init(rng)?;
                Transformed::new(g, gamma, *outer_softplus, 0.0, *mode)?.into()
            }
        })
    }

    pub fn spec(&self) -> NetworkSpec {
        match self {
            Network::SingleLayer(n) => NetworkSpec::SingleLayer {
                dim: n.dim(),
                hidden: n.hidden(),
                activation: n.act.spec(),
                mode: n.mode,
            },
            Network::GradNetM(n) => NetworkSpec::GradnetM {
                dim: n.dim(),
                modules: n.module_specs(),
                mode: n.mode,
            },
            Network::GradNetC(n) => NetworkSpec::GradnetC {
                dim: n.dim(),
                hidden: n.hidden(),
                activations: n.acts.iter().map(|a| a.spec()).collect(),
                mode: n.mode,
            },
            Network::Difference(a, b) => NetworkSpec::Difference {
                first: Box::new(a.spec()),
                second: Box::new(b.spec()),
            },
            Network::StronglyConvex { inner, mu } => NetworkSpec::StronglyConvexWrap {
                mu: *mu,
                inner: Box::new(inner.spec()),
            },
            Network::LipschitzFlip { inner, l } => NetworkSpec::LipschitzFlip {
                l: *l,
                inner: Box::new(inner.spec()),
            },
            Network::LinearCombination { nets, mode, .. } => NetworkSpec::LinearCombination {
                nets: nets.iter().map(Network::spec).collect(),
                mode: *mode,
            },
            Network::Transformed(t) => NetworkSpec::Transformed {
                inner: Box::new(t.inner.spec()),
                gamma: t.gamma.spec(),
                outer_softplus: t.outer_softplus,
                mode: t.mode,
            },
        }
    }

    // ---- compositions -----------------------------------------------------

    /// `g1 − g2`. Any pair of equal-dimension networks is accepted.
    pub fn difference(g1: Network, g2: Network) -> Result<Self> {
        check_dim(g2.dim(), g1.dim())?;
        Ok(Network::Difference(Box::new(g1), Box::new(g2)))
    }

    /// `f(x) + μx`.
    pub fn strongly_convex(f: Network, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("strong convexity modulus must be positive, got {mu}")));
        }
        Ok(Network::StronglyConvex {
            inner: Box::new(f),
            mu,
        })
    }

    /// `Lx − f(x)`; monotone whenever `L ≥ sup ‖J_f‖₂`, which is not checked
    /// here (see [`crate::gradcheck::estimate_lipschitz`]).
    pub fn lipschitz_flip(f: Network, l: f64) -> Self {
        Network::LipschitzFlip {
            inner: Box::new(f),
            l,
        }
    }

    /// `Σ_k c_k f_k`; conic (`c ≥ 0`, monotone members) in monotone mode.
    pub fn linear_combination(nets: Vec<Network>, coeffs: Vec<f64>, mode: ConstraintMode) -> Result<Self> {
        if nets.is_empty() || nets.len() != coeffs.len() {
            return Err(Error::Dimension(format!(
                "{} networks with {} coefficients",
                nets.len(),
                coeffs.len()
            )));
        }
        let d = nets[0].dim();
        for n in &nets {
            check_dim(n.dim(), d)?;
        }
        if mode == ConstraintMode::Monotone {
            if coeffs.iter().any(|&c| c < 0.0) {
                return Err(Error::Constraint("conic combination needs nonnegative coefficients".into()));
            }
            if !nets.iter().all(Network::is_monotone) {
                return Err(Error::Constraint("conic combination needs monotone members".into()));
            }
        }
        Ok(Network::LinearCombination { nets, coeffs, mode })
    }

    // ---- structure --------------------------------------------------------

    pub fn dim(&self) -> usize {
        match self {
            Network::SingleLayer(n) => n.dim(),
            Network::GradNetM(n) => n.dim(),
            Network::GradNetC(n) => n.dim(),
            Network::Difference(a, _) => a.dim(),
            Network::StronglyConvex { inner, .. } | Network::LipschitzFlip { inner, .. } => inner.dim(),
            Network::LinearCombination { nets, .. } => nets[0].dim(),
            Network::Transformed(t) => t.inner.dim(),
        }
    }

    /// Whether the architecture claims monotonicity (PSD Jacobian). For the
    /// Lipschitz flip this is the caller's contract on `L`.
    pub fn is_monotone(&self) -> bool {
        match self {
            Network::SingleLayer(n) => n.mode == ConstraintMode::Monotone,
            Network::GradNetM(n) => n.mode == ConstraintMode::Monotone,
            Network::GradNetC(n) => n.mode == ConstraintMode::Monotone,
            Network::Difference(..) => false,
            Network::StronglyConvex { inner, .. } => inner.is_monotone(),
            Network::LipschitzFlip { .. } => true,
            Network::LinearCombination { mode, .. } => *mode == ConstraintMode::Monotone,
            Network::Transformed(t) => t.mode == ConstraintMode::Monotone,
        }
    }

    /// Strong monotonicity modulus claimed by the architecture.
    pub fn strong_monotonicity(&self) -> Option<f64> {
        match self {
            Network::StronglyConvex { inner, mu } if inner.is_monotone() => Some(*mu),
            _ => None,
        }
    }

    pub fn has_potential(&self) -> bool {
        match self {
            Network::SingleLayer(n) => n.has_potential(),
            Network::GradNetM(n) => n.has_potential(),
            Network::GradNetC(_) | Network::Transformed(_) => false,
            Network::Difference(a, b) => a.has_potential() && b.has_potential(),
            Network::StronglyConvex { inner, .. } | Network::LipschitzFlip { inner, .. } => inner.has_potential(),
            Network::LinearCombination { nets, .. } => nets.iter().all(Network::has_potential),
        }
    }

    // ---- parameters -------------------------------------------------------

    pub fn num_params(&self) -> usize {
        match self {
            Network::SingleLayer(n) => n.num_params(),
            Network::GradNetM(n) => n.num_params(),
            Network::GradNetC(n) => n.num_params(),
            Network::Difference(a, b) => a.num_params() + b.num_params(),
            Network::StronglyConvex { inner, .. } | Network::LipschitzFlip { inner, .. } => inner.num_params(),
            Network::LinearCombination { nets, coeffs, .. } => {
                coeffs.len() + nets.iter().map(Network::num_params).sum::<usize>()
            }
            Network::Transformed(t) => t.num_params(),
        }
    }

    pub(crate) fn layout_into(&self, prefix: &str, out: &mut Vec<SegmentInfo>) {
        match self {
            Network::SingleLayer(n) => n.layout(prefix, out),
            Network::GradNetM(n) => n.layout(prefix, out),
            Network::GradNetC(n) => n.layout(prefix, out),
            Network::Difference(a, b) => {
                a.layout_into(&format!("{prefix}first."), out);
                b.layout_into(&format!("{prefix}second."), out);
            }
            Network::StronglyConvex { inner, .. } | Network::LipschitzFlip { inner, .. } => {
                inner.layout_into(prefix, out)
            }
            Network::LinearCombination { nets, coeffs, mode } => {
                let tag = match mode {
                    ConstraintMode::Monotone => ConstraintTag::Nonneg,
                    ConstraintMode::None => ConstraintTag::Free,
                };
                out.push(SegmentInfo::new(format!("{prefix}coeffs"), coeffs.len(), tag));
                for (i, n) in nets.iter().enumerate() {
                    n.layout_into(&format!("{prefix}n{i}."), out);
                }
            }
            Network::Transformed(t) => t.layout(prefix, out),
        }
    }

    pub fn segments(&self) -> Vec<SegmentInfo> {
        let mut out = Vec::new();
        self.layout_into("", &mut out);
        out
    }

    pub(crate) fn params_into(&self, out: &mut Vec<f64>) {
        match self {
            Network::SingleLayer(n) => n.params_into(out),
            Network::GradNetM(n) => n.params_into(out),
            Network::GradNetC(n) => n.params_into(out),
            Network::Difference(a, b) => {
                a.params_into(out);
                b.params_into(out);
            }
            Network::StronglyConvex { inner, .. } | Network::LipschitzFlip { inner, .. } => inner.params_into(out),
            Network::LinearCombination { nets, coeffs, .. } => {
                out.extend_from_slice(coeffs);
                nets.iter().for_each(|n| n.params_into(out));
            }
            Network::Transformed(t) => t.params_into(out),
        }
    }

    pub(crate) fn assign_params(&mut self, src: &mut &[f64]) {
        match self {
            Network::SingleLayer(n) => n.assign_params(src),
            Network::GradNetM(n) => n.assign_params(src),
            Network::GradNetC(n) => n.assign_params(src),
            Network::Difference(a, b) => {
                a.assign_params(src);
                b.assign_params(src);
            }
            Network::StronglyConvex { inner, .. } | Network::LipschitzFlip { inner, .. } => {
                inner.assign_params(src)
            }
            Network::LinearCombination { nets, coeffs, .. } => {
                let (c, rest) = src.split_at(coeffs.len());
                coeffs.copy_from_slice(c);
                *src = rest;
                nets.iter_mut().for_each(|n| n.assign_params(src));
            }
            Network::Transformed(t) => t.assign_params(src),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.params_into(&mut out);
        out
    }

    pub fn param_view(&self) -> ParamView {
        ParamView {
            values: self.params(),
            segments: self.segments(),
        }
    }

    /// Overwrites all parameters. No constraint check; see [`Network::validate`].
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "{} parameters supplied, network has {}",
                values.len(),
                self.num_params()
            )));
        }
        let mut src = values;
        self.assign_params(&mut src);
        Ok(())
    }

    /// Projects parameters onto the constraint set of their tags.
    pub fn project(&mut self) {
        let mut view = self.param_view();
        view.project();
        self.set_params(&view.values).expect("same length");
    }

    /// Checks finiteness and every constraint tag.
    pub fn validate(&self) -> Result<()> {
        self.param_view().check()
    }

    // ---- evaluation -------------------------------------------------------

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), self.dim())?;
        Ok(self.forward_batch_unchecked(&ops::row_batch(x)).into_vec())
    }

    /// One sample per row.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        check_dim(x.cols(), self.dim())?;
        Ok(self.forward_batch_unchecked(x))
    }

    pub(crate) fn forward_batch_unchecked(&self, x: &Matrix) -> Matrix {
        match self {
            Network::SingleLayer(n) => n.forward_batch(x),
            Network::GradNetM(n) => n.forward_batch(x),
            Network::GradNetC(n) => n.forward_batch(x),
            Network::Difference(a, b) => {
                let mut o = a.forward_batch_unchecked(x);
                o.add_scaled(-1.0, &b.forward_batch_unchecked(x));
                o
            }
            Network::StronglyConvex { inner, mu } => {
                let mut o = inner.forward_batch_unchecked(x);
                o.add_scaled(*mu, x);
                o
            }
            Network::LipschitzFlip { inner, l } => {
                let mut o = inner.forward_batch_unchecked(x);
                o.scale(-1.0);
                o.add_scaled(*l, x);
                o
            }
            Network::LinearCombination { nets, coeffs, .. } => {
                let mut o = Matrix::zeros(x.rows(), self.dim());
                for (n, &c) in nets.iter().zip(coeffs) {
                    o.add_scaled(c, &n.forward_batch_unchecked(x));
                }
                o
            }
            Network::Transformed(t) => t.forward_batch(x),
        }
    }

    /// Analytic Jacobian at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        check_dim(x.len(), self.dim())?;
        let d = self.dim();
        Ok(match self {
            Network::SingleLayer(n) => n.jacobian(x),
            Network::GradNetM(n) => n.jacobian(x),
            Network::GradNetC(n) => n.jacobian(x),
            Network::Difference(a, b) => {
                let mut j = a.jacobian(x)?;
                j.add_scaled(-1.0, &b.jacobian(x)?);
                j
            }
            Network::StronglyConvex { inner, mu } => {
                let mut j = inner.jacobian(x)?;
                j.add_scaled(*mu, &Matrix::identity(d));
                j
            }
            Network::LipschitzFlip { inner, l } => {
                let mut j = inner.jacobian(x)?;
                j.scale(-1.0);
                j.add_scaled(*l, &Matrix::identity(d));
                j
            }
            Network::LinearCombination { nets, coeffs, .. } => {
                let mut j = Matrix::zeros(d, d);
                for (n, &c) in nets.iter().zip(coeffs) {
                    j.add_scaled(c, &n.jacobian(x)?);
                }
                j
            }
            Network::Transformed(t) => t.jacobian(x)?,
        })
    }

    /// Tracked potential `F(x)` with `∇F = forward`.
    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        check_dim(x.len(), self.dim())?;
        Ok(self.potential_batch(&ops::row_batch(x))?[0])
    }

    pub fn potential_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_dim(x.cols(), self.dim())?;
        let sq = |x: &Matrix| -> Vec<f64> {
            let d = x.cols().max(1);
            x.as_slice().chunks_exact(d).map(|r| 0.5 * numerics::dot(r, r)).collect()
        };
        match self {
            Network::SingleLayer(n) => n.potential_batch(x),
            Network::GradNetM(n) => n.potential_batch(x),
            Network::GradNetC(_) => Err(Error::Unsupported("potential of a cascaded network".into())),
            Network::Transformed(_) => Err(Error::Unsupported("potential of a transformed network".into())),
            Network::Difference(a, b) => {
                let pa = a.potential_batch(x)?;
                let pb = b.potential_batch(x)?;
                Ok(pa.iter().zip(&pb).map(|(u, v)| u - v).collect())
            }
            Network::StronglyConvex { inner, mu } => {
                let p = inner.potential_batch(x)?;
                Ok(p.iter().zip(sq(x)).map(|(v, s)| v + mu * s).collect())
            }
            Network::LipschitzFlip { inner, l } => {
                let p = inner.potential_batch(x)?;
                Ok(p.iter().zip(sq(x)).map(|(v, s)| l * s - v).collect())
            }
            Network::LinearCombination { nets, coeffs, .. } => {
                let mut p = vec![0.0; x.rows()];
                for (n, &c) in nets.iter().zip(coeffs) {
                    numerics::axpy(c, &n.potential_batch(x)?, &mut p);
                }
                Ok(p)
            }
        }
    }

    pub(crate) fn potential_batch_unchecked(&self, x: &Matrix) -> Vec<f64> {
        self.potential_batch(x).expect("potential availability checked at construction")
    }

    // ---- training passes ---------------------------------------------------

    pub(crate) fn forward_train(&self, x: &Matrix) -> (Matrix, Tape) {
        match self {
            Network::SingleLayer(n) => n.forward_train(x),
            Network::GradNetM(n) => n.forward_train(x),
            Network::GradNetC(n) => n.forward_train(x),
            Network::Difference(a, b) => {
                let (mut oa, ta) = a.forward_train(x);
                let (ob, tb) = b.forward_train(x);
                oa.add_scaled(-1.0, &ob);
                (oa, Tape { kids: vec![ta, tb], ..Tape::default() })
            }
            Network::StronglyConvex { inner, mu } => {
                let (mut o, t) = inner.forward_train(x);
                o.add_scaled(*mu, x);
                (o, Tape { kids: vec![t], ..Tape::default() })
            }
            Network::LipschitzFlip { inner, l } => {
                let (mut o, t) = inner.forward_train(x);
                o.scale(-1.0);
                o.add_scaled(*l, x);
                (o, Tape { kids: vec![t], ..Tape::default() })
            }
            Network::LinearCombination { nets, coeffs, .. } => {
                let mut o = Matrix::zeros(x.rows(), self.dim());
                let mut tape = Tape::default();
                for (n, &c) in nets.iter().zip(coeffs) {
                    let (on, tn) = n.forward_train(x);
                    o.add_scaled(c, &on);
                    tape.mats.push(on);
                    tape.kids.push(tn);
                }
                (o, tape)
            }
            Network::Transformed(t) => t.forward_train(x),
        }
    }

    /// Accumulates `Σ_i g_i^T ∂f(x_i)/∂θ` into `grad` (length `num_params`).
    pub(crate) fn backward(&self, x: &Matrix, tape: &Tape, g: &Matrix, grad: &mut [f64]) {
        match self {
            Network::SingleLayer(n) => n.backward(x, tape, g, grad),
            Network::GradNetM(n) => n.backward(x, tape, g, grad),
            Network::GradNetC(n) => n.backward(x, tape, g, grad),
            Network::Difference(a, b) => {
                let (ga, gb) = grad.split_at_mut(a.num_params());
                a.backward(x, &tape.kids[0], g, ga);
                let mut neg = g.clone();
                neg.scale(-1.0);
                b.backward(x, &tape.kids[1], &neg, gb);
            }
            Network::StronglyConvex { inner, .. } => inner.backward(x, &tape.kids[0], g, grad),
            Network::LipschitzFlip { inner, .. } => {
                let mut neg = g.clone();
                neg.scale(-1.0);
                inner.backward(x, &tape.kids[0], &neg, grad);
            }
            Network::LinearCombination { nets, coeffs, .. } => {
                let (gc, mut rest) = grad.split_at_mut(coeffs.len());
                for (k, n) in nets.iter().enumerate() {
                    gc[k] += ops::row_dots(g, &tape.mats[k]).iter().sum::<f64>();
                    let (gn, tail) = rest.split_at_mut(n.num_params());
                    rest = tail;
                    let mut gs = g.clone();
                    gs.scale(coeffs[k]);
                    n.backward(x, &tape.kids[k], &gs, gn);
                }
            }
            Network::Transformed(t) => t.backward(x, tape, g, grad),
        }
    }

    /// Accumulates `Σ_i w_i ∂F(x_i)/∂θ` for the tracked potential.
    pub(crate) fn potential_backward(&self, x: &Matrix, w: &[f64], grad: &mut [f64]) {
        let neg = || w.iter().map(|v| -v).collect::<Vec<_>>();
        match self {
            Network::SingleLayer(n) => n.potential_backward(x, w, grad),
            Network::GradNetM(n) => n.potential_backward(x, w, grad),
            Network::GradNetC(_) | Network::Transformed(_) => {
                unreachable!("potential availability checked at construction")
            }
            Network::Difference(a, b) => {
                let (ga, gb) = grad.split_at_mut(a.num_params());
                a.potential_backward(x, w, ga);
                b.potential_backward(x, &neg(), gb);
            }
            Network::StronglyConvex { inner, .. } => inner.potential_backward(x, w, grad),
            Network::LipschitzFlip { inner, .. } => inner.potential_backward(x, &neg(), grad),
            Network::LinearCombination { nets, coeffs, .. } => {
                let (gc, mut rest) = grad.split_at_mut(coeffs.len());
                for (k, n) in nets.iter().enumerate() {
                    let p = n.potential_batch_unchecked(x);
                    gc[k] += numerics::dot(&p, w);
                    let (gn, tail) = rest.split_at_mut(n.num_params());
                    rest = tail;
                    let wk: Vec<f64> = w.iter().map(|v| v * coeffs[k]).collect();
                    n.potential_backward(x, &wk, gn);
                }
            }
        }
    }
}
