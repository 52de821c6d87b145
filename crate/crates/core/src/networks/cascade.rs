//! Cascaded gradient network with a shared weight matrix:
//!
//! ```text
//! z_0 = β_0 ⊙ Wx + b_0
//! z_ℓ = β_ℓ ⊙ Wx + α_ℓ ⊙ σ_ℓ(z_{ℓ−1}) + b_ℓ      ℓ = 1..L−1
//! out = W^T [α_L ⊙ σ_L(z_{L−1})] + b_L
//! ```
//!
//! The Jacobian is `W^T diag(D) W` with a per-point vector `D`.

use rand::Rng;

use super::ops::{self, Tape};
use super::params::{ConstraintTag, SegmentInfo};
use super::single::check_monotone_activation;
use super::ConstraintMode;
use crate::activations::{ActivationPair, ActivationSpec};
use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct GradNetC {
    pub(crate) w: Matrix,
    /// `β_0 .. β_{L−1}`.
    pub(crate) beta: Vec<Vec<f64>>,
    /// `α_1 .. α_L`.
    pub(crate) alpha: Vec<Vec<f64>>,
    /// `b_0 .. b_{L−1}`.
    pub(crate) bias: Vec<Vec<f64>>,
    pub(crate) b_out: Vec<f64>,
    /// `σ_1 .. σ_L`.
    pub(crate) acts: Vec<ActivationPair>,
    pub(crate) mode: ConstraintMode,
}

impl GradNetC {
    pub fn new(
        w: Matrix,
        beta: Vec<Vec<f64>>,
        alpha: Vec<Vec<f64>>,
        bias: Vec<Vec<f64>>,
        b_out: Vec<f64>,
        acts: Vec<ActivationPair>,
        mode: ConstraintMode,
    ) -> Result<Self> {
        let (h, d) = (w.rows(), w.cols());
        let l = acts.len();
        if l == 0 {
            return Err(Error::InvalidArgument("cascaded network needs at least one layer".into()));
        }
        if beta.len() != l || alpha.len() != l || bias.len() != l {
            return Err(Error::Dimension(format!(
                "{l} layers need {l} of each of beta, alpha, bias (got {}, {}, {})",
                beta.len(),
                alpha.len(),
                bias.len()
            )));
        }
        if beta.iter().chain(&alpha).chain(&bias).any(|v| v.len() != h) || b_out.len() != d {
            return Err(Error::Dimension("cascaded network vector lengths".into()));
        }
        for (i, a) in acts.iter().enumerate() {
            if !a.is_elementwise() {
                return Err(Error::InvalidArgument(format!(
                    "layer {} activation {:?} is not elementwise",
                    i + 1,
                    a.spec()
                )));
            }
        }
        if mode == ConstraintMode::Monotone {
            for a in &acts {
                check_monotone_activation(a, "layer")?;
            }
            if beta.iter().chain(&alpha).flatten().any(|&v| v < 0.0) {
                return Err(Error::Constraint("monotone cascade needs alpha, beta >= 0".into()));
            }
        }
        Ok(Self {
            w,
            beta,
            alpha,
            bias,
            b_out,
            acts,
            mode,
        })
    }

    /// Weights `U(±1/√d)`, `α_ℓ = β_ℓ = 1`, biases 0.
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        acts: &[ActivationSpec],
        mode: ConstraintMode,
        rng: &mut R,
    ) -> Result<Self> {
        let w = ops::uniform_matrix(rng, hidden, dim, dim);
        let l = acts.len();
        let acts = acts.iter().map(|a| a.init(rng)).collect::<Result<Vec<_>>>()?;
        Self::new(
            w,
            vec![vec![1.0; hidden]; l],
            vec![vec![1.0; hidden]; l],
            vec![vec![0.0; hidden]; l],
            vec![0.0; dim],
            acts,
            mode,
        )
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn layers(&self) -> usize {
        self.acts.len()
    }

    pub fn activations(&self) -> &[ActivationPair] {
        &self.acts
    }

    pub(crate) fn num_params(&self) -> usize {
        let (h, d, l) = (self.hidden(), self.dim(), self.layers());
        h * d + 3 * l * h + d + self.acts.iter().map(ActivationPair::num_params).sum::<usize>()
    }

    pub(crate) fn layout(&self, prefix: &str, out: &mut Vec<SegmentInfo>) {
        let (h, d, l) = (self.hidden(), self.dim(), self.layers());
        let tag = match self.mode {
            ConstraintMode::Monotone => ConstraintTag::Nonneg,
            ConstraintMode::None => ConstraintTag::Free,
        };
        out.push(SegmentInfo::new(format!("{prefix}w"), h * d, ConstraintTag::Free));
        for i in 0..l {
            out.push(SegmentInfo::new(format!("{prefix}beta_{i}"), h, tag));
        }
        for i in 1..=l {
            out.push(SegmentInfo::new(format!("{prefix}alpha_{i}"), h, tag));
        }
        for i in 0..l {
            out.push(SegmentInfo::new(format!("{prefix}b_{i}"), h, ConstraintTag::Free));
        }
        out.push(SegmentInfo::new(format!("{prefix}b_{l}"), d, ConstraintTag::Free));
        for (i, a) in self.acts.iter().enumerate() {
            a.param_layout(&format!("{prefix}act_{}", i + 1), out);
        }
    }

    pub(crate) fn params_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w.as_slice());
        self.beta.iter().for_each(|v| out.extend_from_slice(v));
        self.alpha.iter().for_each(|v| out.extend_from_slice(v));
        self.bias.iter().for_each(|v| out.extend_from_slice(v));
        out.extend_from_slice(&self.b_out);
        self.acts.iter().for_each(|a| a.params_into(out));
    }

    pub(crate) fn assign_params(&mut self, src: &mut &[f64]) {
        let nw = self.hidden() * self.dim();
        let (w, rest) = src.split_at(nw);
        self.w.as_mut_slice().copy_from_slice(w);
        *src = rest;
        for v in self.beta.iter_mut().chain(self.alpha.iter_mut()).chain(self.bias.iter_mut()) {
            let (head, rest) = src.split_at(v.len());
            v.copy_from_slice(head);
            *src = rest;
        }
        let (b, rest) = src.split_at(self.b_out.len());
        self.b_out.copy_from_slice(b);
        *src = rest;
        for a in &mut self.acts {
            a.assign_params(src);
        }
    }

    /// Returns `(Wx, [z_0..z_{L−1}], [σ_ℓ(z_{ℓ−1})], [σ'_ℓ(z_{ℓ−1})], [aux_ℓ], out)`;
    /// the derivative and aux lists are empty unless `deriv`.
    #[allow(clippy::type_complexity)]
    fn run(&self, x: &Matrix, deriv: bool) -> (Matrix, Vec<Matrix>, Vec<Matrix>, Vec<Matrix>, Vec<Matrix>, Matrix) {
        let n = x.rows();
        let (h, l) = (self.hidden(), self.layers());
        let mut u = Matrix::zeros(n, h);
        gemm(1.0, x, false, &self.w, true, 0.0, &mut u);
        let mut zs = Vec::with_capacity(l);
        let mut ss = Vec::with_capacity(l);
        let mut ds = Vec::with_capacity(l);
        let mut aux = Vec::with_capacity(l);
        let act = |i: usize, z: &Matrix, ds: &mut Vec<Matrix>, aux: &mut Vec<Matrix>| {
            if deriv {
                let (s, d, a) = ops::act_forward_cached(&self.acts[i], z);
                ds.push(d);
                aux.push(a);
                s
            } else {
                ops::act_forward(&self.acts[i], z, false).0
            }
        };
        let mut z = layer_input(&u, &self.beta[0], None, &self.bias[0]);
        for i in 1..l {
            let s = act(i - 1, &z, &mut ds, &mut aux);
            let next = layer_input(&u, &self.beta[i], Some((&self.alpha[i - 1], &s)), &self.bias[i]);
            zs.push(z);
            ss.push(s);
            z = next;
        }
        let s = act(l - 1, &z, &mut ds, &mut aux);
        zs.push(z);
        let mut v = s.clone();
        scale_cols(&mut v, &self.alpha[l - 1]);
        let mut out = Matrix::zeros(n, self.dim());
        gemm(1.0, &v, false, &self.w, false, 0.0, &mut out);
        ops::add_row_bias(&mut out, &self.b_out);
        ss.push(s);
        (u, zs, ss, ds, aux, out)
    }

    pub(crate) fn forward_batch(&self, x: &Matrix) -> Matrix {
        self.run(x, false).5
    }

    pub(crate) fn forward_train(&self, x: &Matrix) -> (Matrix, Tape) {
        let (u, zs, ss, ds, aux, out) = self.run(x, true);
        let mut mats = vec![u];
        mats.extend(zs);
        mats.extend(ss);
        mats.extend(ds);
        mats.extend(aux);
        (out, Tape { mats, ..Tape::default() })
    }

    pub(crate) fn backward(&self, x: &Matrix, tape: &Tape, g: &Matrix, grad: &mut [f64]) {
        let n = x.rows();
        let (h, d, l) = (self.hidden(), self.dim(), self.layers());
        let u = &tape.mats[0];
        let z = |i: usize| &tape.mats[1 + i];
        let s = |i: usize| &tape.mats[1 + l + (i - 1)];
        let dv = |i: usize| &tape.mats[1 + 2 * l + (i - 1)];
        let aux = |i: usize| &tape.mats[1 + 3 * l + (i - 1)];

        let off_beta = |i: usize| h * d + i * h;
        let off_alpha = |i: usize| h * d + l * h + (i - 1) * h;
        let off_b = |i: usize| h * d + 2 * l * h + i * h;
        let off_bout = h * d + 3 * l * h;
        let mut off_act = Vec::with_capacity(l);
        let mut acc = off_bout + d;
        for a in &self.acts {
            off_act.push(acc);
            acc += a.num_params();
        }

        ops::add_col_sums(g, &mut grad[off_bout..off_bout + d]);
        let mut gw = Matrix::from_vec(h, d, grad[..h * d].to_vec()).expect("shape");

        // out = (α_L ⊙ s_L) W
        let sl = s(l);
        let mut vmat = sl.clone();
        scale_cols(&mut vmat, &self.alpha[l - 1]);
        gemm(1.0, &vmat, true, g, false, 1.0, &mut gw);
        let mut dvm = Matrix::zeros(n, h);
        gemm(1.0, g, false, &self.w, true, 0.0, &mut dvm);
        ops::add_col_dots(&dvm, sl, &mut grad[off_alpha(l)..off_alpha(l) + h]);
        let mut dsl = dvm;
        scale_cols(&mut dsl, &self.alpha[l - 1]);
        let na = self.acts[l - 1].num_params();
        ops::act_param_vjp_cached(&self.acts[l - 1], z(l - 1), &dsl, aux(l), &mut grad[off_act[l - 1]..off_act[l - 1] + na]);
        let mut dz = ops::act_vjp(&self.acts[l - 1], z(l - 1), &dsl, Some(dv(l)));

        let mut du = Matrix::zeros(n, h);
        for i in (1..l).rev() {
            // z_i = β_i ⊙ u + α_i ⊙ s_i + b_i
            ops::add_col_dots(&dz, u, &mut grad[off_beta(i)..off_beta(i) + h]);
            add_scaled_cols(&mut du, &dz, &self.beta[i]);
            ops::add_col_sums(&dz, &mut grad[off_b(i)..off_b(i) + h]);
            ops::add_col_dots(&dz, s(i), &mut grad[off_alpha(i)..off_alpha(i) + h]);
            let mut dsi = dz;
            scale_cols(&mut dsi, &self.alpha[i - 1]);
            let na = self.acts[i - 1].num_params();
            ops::act_param_vjp_cached(&self.acts[i - 1], z(i - 1), &dsi, aux(i), &mut grad[off_act[i - 1]..off_act[i - 1] + na]);
            dz = ops::act_vjp(&self.acts[i - 1], z(i - 1), &dsi, Some(dv(i)));
        }
        ops::add_col_dots(&dz, u, &mut grad[off_beta(0)..off_beta(0) + h]);
        add_scaled_cols(&mut du, &dz, &self.beta[0]);
        ops::add_col_sums(&dz, &mut grad[off_b(0)..off_b(0) + h]);

        gemm(1.0, &du, true, x, false, 1.0, &mut gw);
        grad[..h * d].copy_from_slice(gw.as_slice());
    }

    /// Diagonal `D(x)` of the Jacobian factorisation `W^T diag(D) W`.
    pub fn d_diagonal(&self, x: &[f64]) -> Vec<f64> {
        let (_, _, _, ds, _, _) = self.run(&ops::row_batch(x), true);
        let l = self.layers();
        let mut dd = self.beta[0].clone();
        for i in 1..l {
            let sd = ds[i - 1].as_slice();
            for k in 0..dd.len() {
                dd[k] = self.beta[i][k] + self.alpha[i - 1][k] * sd[k] * dd[k];
            }
        }
        let sd = ds[l - 1].as_slice();
        for k in 0..dd.len() {
            dd[k] *= self.alpha[l - 1][k] * sd[k];
        }
        dd
    }

    pub(crate) fn jacobian(&self, x: &[f64]) -> Matrix {
        let dd = self.d_diagonal(x);
        let mut dw = self.w.clone();
        let d = self.dim();
        if d > 0 {
            for (row, &dk) in dw.as_mut_slice().chunks_exact_mut(d).zip(&dd) {
                row.iter_mut().for_each(|v| *v *= dk);
            }
        }
        let mut j = Matrix::zeros(d, d);
        gemm(1.0, &self.w, true, &dw, false, 0.0, &mut j);
        j
    }
}

/// `β ⊙ u + α ⊙ s + b` row-wise.
fn layer_input(u: &Matrix, beta: &[f64], alpha_s: Option<(&Vec<f64>, &Matrix)>, b: &[f64]) -> Matrix {
    let h = u.cols();
    let mut z = Matrix::zeros(u.rows(), h);
    if h == 0 {
        return z;
    }
    for (zr, ur) in z.as_mut_slice().chunks_exact_mut(h).zip(u.as_slice().chunks_exact(h)) {
        for k in 0..h {
            zr[k] = beta[k] * ur[k] + b[k];
        }
    }
    if let Some((alpha, s)) = alpha_s {
        for (zr, sr) in z.as_mut_slice().chunks_exact_mut(h).zip(s.as_slice().chunks_exact(h)) {
            for k in 0..h {
                zr[k] += alpha[k] * sr[k];
            }
        }
    }
    z
}

fn scale_cols(m: &mut Matrix, c: &[f64]) {
    let h = m.cols();
    if h == 0 {
        return;
    }
    for row in m.as_mut_slice().chunks_exact_mut(h) {
        for (x, ci) in row.iter_mut().zip(c) {
            *x *= ci;
        }
    }
}

/// `acc += m ⊙ c` with `c` broadcast over rows.
fn add_scaled_cols(acc: &mut Matrix, m: &Matrix, c: &[f64]) {
    let h = m.cols();
    if h == 0 {
        return;
    }
    for (ar, mr) in acc.as_mut_slice().chunks_exact_mut(h).zip(m.as_slice().chunks_exact(h)) {
        for k in 0..h {
            ar[k] += mr[k] * c[k];
        }
    }
}
