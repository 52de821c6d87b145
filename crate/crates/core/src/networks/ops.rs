//! Row-batched helpers shared by the architectures. A batch is an `n × k`
//! matrix with one sample per row.

use rand::Rng;

use crate::activations::{ActivationKind, ActivationPair};
use crate::numerics::{self, Matrix};

/// Intermediates recorded by a training forward pass.
#[derive(Debug, Default)]
pub(crate) struct Tape {
    pub mats: Vec<Matrix>,
    pub vecs: Vec<Vec<f64>>,
    pub kids: Vec<Tape>,
}

pub(crate) fn add_row_bias(m: &mut Matrix, b: &[f64]) {
    let c = m.cols();
    debug_assert_eq!(b.len(), c);
    if c == 0 {
        return;
    }
    for row in m.as_mut_slice().chunks_exact_mut(c) {
        for (x, bi) in row.iter_mut().zip(b) {
            *x += bi;
        }
    }
}

/// `out += Σ_rows m`.
pub(crate) fn add_col_sums(m: &Matrix, out: &mut [f64]) {
    let c = m.cols();
    if c == 0 {
        return;
    }
    for row in m.as_slice().chunks_exact(c) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
}

/// `out += Σ_rows a ⊙ b`.
pub(crate) fn add_col_dots(a: &Matrix, b: &Matrix, out: &mut [f64]) {
    let c = a.cols();
    if c == 0 {
        return;
    }
    for (ra, rb) in a.as_slice().chunks_exact(c).zip(b.as_slice().chunks_exact(c)) {
        for ((o, x), y) in out.iter_mut().zip(ra).zip(rb) {
            *o += x * y;
        }
    }
}

/// Row-wise dot products `⟨a_i, b_i⟩`.
pub(crate) fn row_dots(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let c = a.cols();
    if c == 0 {
        return vec![0.0; a.rows()];
    }
    a.as_slice()
        .chunks_exact(c)
        .zip(b.as_slice().chunks_exact(c))
        .map(|(x, y)| crate::numerics::dot(x, y))
        .collect()
}

/// `m_i ← s_i m_i` for every row.
pub(crate) fn scale_rows(m: &mut Matrix, s: &[f64]) {
    let c = m.cols();
    if c == 0 {
        return;
    }
    for (row, &si) in m.as_mut_slice().chunks_exact_mut(c).zip(s) {
        row.iter_mut().for_each(|x| *x *= si);
    }
}

/// `s = σ(z)` row-wise; also `σ'(z)` for elementwise kinds when asked.
pub(crate) fn act_forward(act: &ActivationPair, z: &Matrix, deriv: bool) -> (Matrix, Option<Matrix>) {
    let mut s = Matrix::zeros(z.rows(), z.cols());
    if act.is_elementwise() {
        if deriv {
            let mut d = Matrix::zeros(z.rows(), z.cols());
            for ((o, od), &x) in s
                .as_mut_slice()
                .iter_mut()
                .zip(d.as_mut_slice().iter_mut())
                .zip(z.as_slice())
            {
                let (v, dv) = act.scalar_with_deriv(x);
                *o = v;
                *od = dv;
            }
            return (s, Some(d));
        }
        act.eval_into(z.as_slice(), s.as_mut_slice());
    } else if z.cols() > 0 {
        for (zr, sr) in z.as_slice().chunks_exact(z.cols()).zip(s.as_mut_slice().chunks_exact_mut(z.cols())) {
            act.eval_into(zr, sr);
        }
    }
    (s, None)
}

/// Training forward for an elementwise activation: `(σ(z), σ'(z), aux)`.
/// `aux` holds `tanh(z)` for the scaled tanh mix (its parameter gradient
/// needs it) and is empty otherwise.
pub(crate) fn act_forward_cached(act: &ActivationPair, z: &Matrix) -> (Matrix, Matrix, Matrix) {
    if let ActivationKind::ScaledTanhMix { alpha, beta, .. } = *act.kind() {
        let (n, c) = (z.rows(), z.cols());
        let (mut s, mut d, mut t) = (Matrix::zeros(n, c), Matrix::zeros(n, c), Matrix::zeros(n, c));
        for (((o, od), ot), &x) in s
            .as_mut_slice()
            .iter_mut()
            .zip(d.as_mut_slice().iter_mut())
            .zip(t.as_mut_slice().iter_mut())
            .zip(z.as_slice())
        {
            let th = numerics::tanh(x);
            let sech2 = 1.0 - th * th;
            *o = alpha * th + beta * (x - th);
            *od = alpha * sech2 + beta * (1.0 - sech2);
            *ot = th;
        }
        return (s, d, t);
    }
    let (s, d) = act_forward(act, z, true);
    (s, d.expect("elementwise derivative"), Matrix::zeros(0, 0))
}

/// [`act_param_vjp`] reusing the `aux` from [`act_forward_cached`].
pub(crate) fn act_param_vjp_cached(act: &ActivationPair, z: &Matrix, ds: &Matrix, aux: &Matrix, out: &mut [f64]) {
    if aux.rows() == 0 || !matches!(act.kind(), ActivationKind::ScaledTanhMix { .. }) {
        return act_param_vjp(act, z, ds, out);
    }
    let (mut gt, mut gx) = (0.0, 0.0);
    for ((&g, &t), &x) in ds.as_slice().iter().zip(aux.as_slice()).zip(z.as_slice()) {
        gt += g * t;
        gx += g * x;
    }
    out[0] += gt;
    out[1] += gx - gt;
}

/// `dz = J_σ(z)^T ds` row-wise. `deriv` (elementwise only) skips recomputation.
pub(crate) fn act_vjp(act: &ActivationPair, z: &Matrix, ds: &Matrix, deriv: Option<&Matrix>) -> Matrix {
    let mut dz = Matrix::zeros(z.rows(), z.cols());
    if let Some(d) = deriv {
        for ((o, &g), &dv) in dz.as_mut_slice().iter_mut().zip(ds.as_slice()).zip(d.as_slice()) {
            *o = g * dv;
        }
    } else if act.is_elementwise() {
        act.vjp_into(z.as_slice(), ds.as_slice(), dz.as_mut_slice());
    } else if z.cols() > 0 {
        let c = z.cols();
        for ((zr, gr), or) in z
            .as_slice()
            .chunks_exact(c)
            .zip(ds.as_slice().chunks_exact(c))
            .zip(dz.as_mut_slice().chunks_exact_mut(c))
        {
            act.vjp_into(zr, gr, or);
        }
    }
    dz
}

/// Accumulates `Σ_rows (∂σ(z_i)/∂θ)^T ds_i`.
pub(crate) fn act_param_vjp(act: &ActivationPair, z: &Matrix, ds: &Matrix, out: &mut [f64]) {
    if act.num_params() == 0 {
        return;
    }
    if act.is_elementwise() {
        act.param_vjp(z.as_slice(), ds.as_slice(), out);
    } else if z.cols() > 0 {
        let c = z.cols();
        for (zr, gr) in z.as_slice().chunks_exact(c).zip(ds.as_slice().chunks_exact(c)) {
            act.param_vjp(zr, gr, out);
        }
    }
}

/// `ψ(z_i)` for each row. Callers check `antiderivative_known` first.
pub(crate) fn act_potential_rows(act: &ActivationPair, z: &Matrix) -> Vec<f64> {
    let c = z.cols();
    if c == 0 {
        return vec![0.0; z.rows()];
    }
    z.as_slice()
        .chunks_exact(c)
        .map(|r| act.antiderivative(r).expect("antiderivative checked at construction"))
        .collect()
}

/// Accumulates `Σ_i w_i ∂ψ(z_i)/∂θ`.
pub(crate) fn act_potential_param_grad(act: &ActivationPair, z: &Matrix, w: &[f64], out: &mut [f64]) {
    if act.num_params() == 0 || z.cols() == 0 {
        return;
    }
    for (r, &wi) in z.as_slice().chunks_exact(z.cols()).zip(w) {
        act.antiderivative_param_grad(r, wi, out)
            .expect("antiderivative checked at construction");
    }
}

/// Entries i.i.d. `U(−1/√fan_in, 1/√fan_in)`.
pub(crate) fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// Single sample as a `1 × d` batch.
pub(crate) fn row_batch(x: &[f64]) -> Matrix {
    Matrix::from_vec(1, x.len(), x.to_vec()).expect("shape")
}
