//! MSE regression of network outputs onto target fields: parameter gradients
//! by reverse accumulation, Adam with projection, and the training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::params::{check_flat, project_flat, segment_of, SegmentInfo};
use crate::networks::Network;
use crate::numerics::{default_fd_step, Matrix};

/// Mean over batch and coordinates of the squared error.
pub fn loss_mse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(Error::Dimension(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let n = pred.as_slice().len();
    if n == 0 {
        return Err(Error::EmptyInput("loss_mse"));
    }
    let s: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(s / n as f64)
}

/// Loss and its gradient with respect to the flat parameter vector.
pub fn param_gradients(net: &Network, x: &Matrix, target: &Matrix) -> Result<(f64, Vec<f64>)> {
    if x.cols() != net.dim() {
        return Err(Error::Dimension(format!("inputs have {} columns, network dim {}", x.cols(), net.dim())));
    }
    let (pred, tape) = net.forward_train(x);
    let loss = loss_mse(&pred, target)?;
    let scale = 2.0 / pred.as_slice().len() as f64;
    let mut g = pred;
    for (gi, t) in g.as_mut_slice().iter_mut().zip(target.as_slice()) {
        *gi = scale * (*gi - t);
    }
    let mut grad = vec![0.0; net.num_params()];
    net.backward(x, &tape, &g, &mut grad);
    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        let segs = net.segments();
        let name = segment_of(&segs, i).unwrap_or("?");
        return Err(Error::NonFinite(format!("gradient of parameter {name} (flat index {i})")));
    }
    Ok((loss, grad))
}

/// Central differences of the loss over every parameter.
pub fn fd_param_gradients(net: &Network, x: &Matrix, target: &Matrix) -> Result<Vec<f64>> {
    let theta = net.params();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(theta.len());
    let mut p = theta.clone();
    for i in 0..theta.len() {
        let h = default_fd_step(theta[i]);
        p[i] = theta[i] + h;
        probe.set_params(&p)?;
        let fp = loss_mse(&probe.forward_batch(x)?, target)?;
        p[i] = theta[i] - h;
        probe.set_params(&p)?;
        let fm = loss_mse(&probe.forward_batch(x)?, target)?;
        p[i] = theta[i];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Outcome of comparing analytic against finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max_i |g_i − f_i| / max(‖f‖_∞, 1e−12)`.
    pub rel_error: f64,
    pub worst_index: usize,
    pub worst_segment: String,
    pub params: usize,
}

pub fn check_param_gradients(net: &Network, x: &Matrix, target: &Matrix) -> Result<GradCheck> {
    let (_, an) = param_gradients(net, x, target)?;
    let fd = fd_param_gradients(net, x, target)?;
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let (worst_index, err) = an
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs())
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    let segs = net.segments();
    Ok(GradCheck {
        rel_error: err / scale,
        worst_index,
        worst_segment: segment_of(&segs, worst_index).unwrap_or("").to_string(),
        params: an.len(),
    })
}

// ---- Adam ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{n} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. With `segments`, the result is projected
/// onto the constraint set of their tags.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
    segments: Option<&[SegmentInfo]>,
) {
    debug_assert_eq!(params.len(), grads.len());
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
    }
    if let Some(segs) = segments {
        project_flat(params, segs);
        debug_assert!(check_flat(params, segs).is_ok());
    }
}

// ---- training loop ----------------------------------------------------------

/// Source of inputs for the regression: fresh points every step, or a fixed
/// dataset walked in shuffled passes.
pub trait FieldSampler {
    fn dim(&self) -> usize;
    /// `n` inputs, one per row.
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Matrix;
    /// Targets for the rows of `x`.
    fn targets(&self, x: &Matrix) -> Matrix;
}

pub enum TrainData<'a> {
    Fresh(&'a dyn FieldSampler),
    Fixed { x: &'a Matrix, y: &'a Matrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub projection: bool,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn yes() -> bool {
    true
}

fn default_eval_every() -> usize {
    100
}

fn default_divergence() -> f64 {
    1e6
}

impl TrainConfig {
    pub fn new(learning_rate: f64, batch_size: usize, iterations: usize, seed: u64) -> Self {
        Self {
            adam: AdamConfig {
                learning_rate,
                ..AdamConfig::default()
            },
            batch_size,
            iterations,
            seed,
            projection: true,
            eval_every: default_eval_every(),
            divergence_threshold: default_divergence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EvalRow>,
    /// Batch loss at every iteration.
    pub losses: Vec<f64>,
    pub initial_val_mse: f64,
    pub final_val_mse: f64,
    pub wall_time_secs: f64,
    /// `(iteration, loss)` when the run was aborted.
    pub diverged: Option<(usize, f64)>,
}

impl TrainReport {
    /// `iteration,train_mse,val_mse` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,train_mse,val_mse\n");
        for r in &self.history {
            s.push_str(&format!("{},{},{}\n", r.iteration, r.train_mse, r.val_mse));
        }
        s
    }

    /// Median of the last tenth of batch losses is below that of the first.
    pub fn loss_decreased(&self) -> bool {
        let n = self.losses.len();
        if n < 10 {
            return false;
        }
        let k = n / 10;
        median(&self.losses[..k]) > median(&self.losses[n - k..])
    }

    pub fn into_result(self) -> Result<Self> {
        match self.diverged {
            Some((iteration, loss)) => Err(Error::Diverged { iteration, loss }),
            None => Ok(self),
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let c = m.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), c, data).expect("shape")
}

/// Trains `net` in place. Deterministic given `cfg.seed`.
///
/// Divergence (non-finite loss, or loss above the threshold) stops the run
/// and is reported through [`TrainReport::diverged`].
pub fn train_loop(
    net: &mut Network,
    data: TrainData<'_>,
    val: (&Matrix, &Matrix),
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let segments = net.segments();
    let mut params = net.params();
    let mut state = AdamState::new(params.len());
    let proj = cfg.projection.then_some(segments.as_slice());

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    if let TrainData::Fixed { x, y } = &data {
        if x.rows() == 0 || x.rows() != y.rows() {
            return Err(Error::Dimension("training set is empty or misaligned".into()));
        }
        order = (0..x.rows()).collect();
        order.shuffle(&mut rng);
    }

    let initial_val_mse = loss_mse(&net.forward_batch(val.0)?, val.1)?;
    let mut report = TrainReport {
        history: Vec::new(),
        losses: Vec::with_capacity(cfg.iterations),
        initial_val_mse,
        final_val_mse: initial_val_mse,
        wall_time_secs: 0.0,
        diverged: None,
    };

    for it in 1..=cfg.iterations {
        let (xb, yb) = match &data {
            TrainData::Fresh(s) => {
                let xb = s.sample(cfg.batch_size, &mut rng);
                let yb = s.targets(&xb);
                (xb, yb)
            }
            TrainData::Fixed { x, y } => {
                let n = x.rows();
                let mut idx = Vec::with_capacity(cfg.batch_size.min(n));
                while idx.len() < cfg.batch_size.min(n) {
                    if cursor == n {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    idx.push(order[cursor]);
                    cursor += 1;
                }
                (gather_rows(x, &idx), gather_rows(y, &idx))
            }
        };
        let (loss, grad) = match param_gradients(net, &xb, &yb) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => (f64::NAN, Vec::new()),
            Err(e) => return Err(e),
        };
        report.losses.push(loss);
        if !loss.is_finite() || loss > cfg.divergence_threshold {
            report.diverged = Some((it, loss));
            break;
        }
        adam_step(&mut params, &grad, &mut state, &cfg.adam, proj);
        net.set_params(&params)?;

        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let val_mse = loss_mse(&net.forward_batch(val.0)?, val.1)?;
            report.history.push(EvalRow {
                iteration: it,
                train_mse: loss,
                val_mse,
            });
            report.final_val_mse = val_mse;
        }
    }
    if report.diverged.is_some() {
        report.final_val_mse = loss_mse(&net.forward_batch(val.0)?, val.1).unwrap_or(f64::NAN);
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{ActivationPair, ActivationSpec, ScalarBase};
    use crate::networks::{ConstraintMode, ModuleSpec, NetworkSpec, SingleLayer, Transformed};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn batch(r: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_fn(n, d, |_, _| r.gen::<f64>())
    }

    #[test]
    fn loss_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.as_mut_slice().iter_mut().for_each(|v| *v += 1.0);
        assert_eq!(loss_mse(&a, &b).unwrap(), 1.0);
        let p = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let t = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(loss_mse(&p, &t).unwrap(), 12.5);
        assert!(loss_mse(&p, &a).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut r = rng(1);
        let net = Network::init(
            &NetworkSpec::GradnetC { dim: 3, hidden: 4, activations: vec![ActivationSpec::Tanh; 2], mode: ConstraintMode::None },
            &mut r,
        )
        .unwrap();
        let x = batch(&mut r, 7, 3);
        let y = net.forward_batch(&x).unwrap();
        let (loss, g) = param_gradients(&net, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_matches_least_squares_gradient() {
        // f(x) = W^T W x + W^T a + b; closed-form gradient of the MSE.
        let mut r = rng(2);
        let (h, d, n) = (3, 2, 6);
        let net = SingleLayer::new(
            Matrix::from_fn(h, d, |_, _| r.gen_range(-1.0..1.0)),
            (0..h).map(|_| r.gen_range(-1.0..1.0)).collect(),
            (0..d).map(|_| r.gen_range(-1.0..1.0)).collect(),
            ActivationPair::identity(),
            ConstraintMode::None,
        )
        .unwrap();
        let (w, a, b) = (net.weight().clone(), net.a.clone(), net.b.clone());
        let net: Network = net.into();
        let x = batch(&mut r, n, d);
        let y = batch(&mut r, n, d);
        let (_, g) = param_gradients(&net, &x, &y).unwrap();

        let scale = 2.0 / (n * d) as f64;
        let mut gw = Matrix::zeros(h, d);
        let mut ga = vec![0.0; h];
        let mut gb = vec![0.0; d];
        for i in 0..n {
            let xi = x.row(i);
            let z: Vec<f64> = (0..h).map(|k| crate::numerics::dot(w.row(k), xi) + a[k]).collect();
            let f: Vec<f64> = (0..d).map(|j| (0..h).map(|k| w[(k, j)] * z[k]).sum::<f64>() + b[j]).collect();
            let e: Vec<f64> = (0..d).map(|j| scale * (f[j] - y[(i, j)])).collect();
            // ∂/∂W_kj of Σ_j' e_j' (Σ_k W_kj' z_k) = e_j z_k + (W e)_k x_j
            let we: Vec<f64> = (0..h).map(|k| crate::numerics::dot(w.row(k), &e)).collect();
            for k in 0..h {
                for j in 0..d {
                    gw[(k, j)] += e[j] * z[k] + we[k] * xi[j];
                }
                ga[k] += we[k];
            }
            for j in 0..d {
                gb[j] += e[j];
            }
        }
        let mut expect = gw.into_vec();
        expect.extend(ga);
        expect.extend(gb);
        for (u, v) in g.iter().zip(&expect) {
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
    }

    fn small_zoo(r: &mut ChaCha8Rng) -> Vec<Network> {
        let mono = ConstraintMode::Monotone;
        let free = ConstraintMode::None;
        let specs = [
            NetworkSpec::SingleLayer { dim: 2, hidden: 4, activation: ActivationSpec::Sigmoid, mode: mono },
            NetworkSpec::SingleLayer { dim: 3, hidden: 4, activation: ActivationSpec::Softmax { t: 2.0 }, mode: mono },
            NetworkSpec::SingleLayer { dim: 2, hidden: 3, activation: ActivationSpec::Softplus { beta: 1.5 }, mode: mono },
            NetworkSpec::SingleLayer {
                dim: 2,
                hidden: 3,
                activation: ActivationSpec::NeuralScalar { width: 4, base: ScalarBase::Sigmoid, monotone: false },
                mode: free,
            },
            NetworkSpec::GradnetM {
                dim: 2,
                modules: vec![ModuleSpec::new(7, ActivationSpec::Softmax { t: 1.0 }); 4],
                mode: mono,
            },
            NetworkSpec::GradnetM {
                dim: 3,
                modules: vec![
                    ModuleSpec::new(4, ActivationSpec::SoftmaxSoftminMix { t: 1.0, constrained: false }),
                    ModuleSpec { hidden: 3, activation: ActivationSpec::Sigmoid, rho: ActivationSpec::Softplus { beta: 1.0 } },
                    ModuleSpec {
                        hidden: 3,
                        activation: ActivationSpec::Tanh,
                        rho: ActivationSpec::NeuralScalar { width: 2, base: ScalarBase::Tanh, monotone: false },
                    },
                ],
                mode: free,
            },
            NetworkSpec::GradnetC { dim: 2, hidden: 7, activations: vec![ActivationSpec::Tanh; 3], mode: mono },
            NetworkSpec::GradnetC {
                dim: 3,
                hidden: 4,
                activations: vec![
                    ActivationSpec::ScaledTanhMix { constrained: false },
                    ActivationSpec::NeuralScalar { width: 2, base: ScalarBase::Tanh, monotone: false },
                    ActivationSpec::Sigmoid,
                ],
                mode: free,
            },
        ];
        let mut nets: Vec<Network> = specs
            .iter()
            .map(|s| {
                let mut n = Network::init(s, r).unwrap();
                let p: Vec<f64> = n.params().iter().map(|v| v + r.gen_range(-0.4..0.4)).collect();
                n.set_params(&p).unwrap();
                n.project();
                n
            })
            .collect();
        let base = nets[4].clone();
        let sig = nets[0].clone();
        nets.push(Network::difference(base.clone(), sig.clone()).unwrap());
        nets.push(Network::strongly_convex(base.clone(), 0.3).unwrap());
        nets.push(Network::lipschitz_flip(sig.clone(), 2.0));
        nets.push(Network::linear_combination(vec![sig.clone(), nets[2].clone()], vec![0.5, 2.0], mono).unwrap());
        let tau = ActivationSpec::NeuralScalar { width: 2, base: ScalarBase::Sigmoid, monotone: true }
            .init(r)
            .unwrap();
        nets.push(Transformed::new(sig.clone(), tau, true, 0.1, mono).unwrap().into());
        nets.push(
            Transformed::new(
                Network::linear_combination(vec![sig.clone(), base.clone()], vec![1.0, -1.0], free).unwrap(),
                ActivationPair::scaled_tanh_mix(0.6, 0.4, false).unwrap(),
                false,
                0.3,
                free,
            )
            .unwrap()
            .into(),
        );
        nets
    }

    #[test]
    fn gradients_match_fd_for_every_architecture() {
        let mut r = rng(3);
        for (k, net) in small_zoo(&mut r).iter().enumerate() {
            assert!(net.num_params() <= 200, "net {k} has {} params", net.num_params());
            let d = net.dim();
            let x = batch(&mut r, 5, d);
            let y = Matrix::from_fn(5, d, |_, _| r.gen_range(-1.0..1.0));
            let chk = check_param_gradients(net, &x, &y).unwrap();
            assert!(chk.rel_error <= 1e-4, "net {k}: {chk:?}");
        }
    }

    #[test]
    fn adam_first_step_magnitude() {
        let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
        let mut p = vec![1.0, -2.0, 0.5];
        let g = [3.0, -1e-3, 250.0];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &g, &mut st, &cfg, None);
        let dp = [p[0] - 1.0, p[1] + 2.0, p[2] - 0.5];
        for (d, gi) in dp.iter().zip(&g) {
            assert!(d.abs() <= 0.01 * (1.0 + 1e-4));
            assert!(d.abs() >= 0.01 * 0.99);
            assert!(d * gi < 0.0);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.3, -0.7];
        let mut st = AdamState::new(2);
        for _ in 0..50 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, &cfg, None);
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn adam_projection_keeps_nonneg() {
        use crate::networks::params::ConstraintTag;
        let segs = vec![SegmentInfo::new("alpha", 2, ConstraintTag::Nonneg)];
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let mut p = vec![0.0, 0.05];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[1.0, 1.0], &mut st, &cfg, Some(&segs));
        assert!(p.iter().all(|&v| v >= 0.0));
        assert_eq!(p[0], 0.0);
    }

    struct Quadratic;
    impl FieldSampler for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
            Matrix::from_fn(n, 2, |_, _| rng.gen::<f64>())
        }
        fn targets(&self, x: &Matrix) -> Matrix {
            Matrix::from_fn(x.rows(), 2, |i, j| 2.0 * x[(i, j)] - 0.5)
        }
    }

    fn quad_net(seed: u64) -> Network {
        Network::init(
            &NetworkSpec::GradnetM {
                dim: 2,
                modules: vec![ModuleSpec::new(7, ActivationSpec::Softmax { t: 1.0 }); 4],
                mode: ConstraintMode::Monotone,
            },
            &mut rng(seed),
        )
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_is_frozen() {
        let mut net = quad_net(4);
        let before = net.params();
        let x = Quadratic.sample(64, &mut rng(5));
        let y = Quadratic.targets(&x);
        let cfg = TrainConfig { eval_every: 5, ..TrainConfig::new(0.0, 64, 20, 1) };
        let rep = train_loop(&mut net, TrainData::Fixed { x: &x, y: &y }, (&x, &y), &cfg).unwrap();
        assert_eq!(net.params(), before);
        assert!(rep.history.iter().all(|r| r.val_mse == rep.initial_val_mse));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let xv = Quadratic.sample(500, &mut rng(6));
        let yv = Quadratic.targets(&xv);
        let cfg = TrainConfig { eval_every: 50, ..TrainConfig::new(0.01, 100, 600, 9) };
        let mut a = quad_net(7);
        let mut b = quad_net(7);
        let ra = train_loop(&mut a, TrainData::Fresh(&Quadratic), (&xv, &yv), &cfg).unwrap();
        let rb = train_loop(&mut b, TrainData::Fresh(&Quadratic), (&xv, &yv), &cfg).unwrap();
        assert_eq!(ra.losses, rb.losses);
        assert_eq!(ra.to_csv(), rb.to_csv());
        assert!(ra.loss_decreased());
        assert!(ra.final_val_mse < 0.1 * ra.initial_val_mse);
        a.validate().unwrap();
    }

    #[test]
    fn divergence_is_reported() {
        let xv = Quadratic.sample(10, &mut rng(6));
        let yv = Quadratic.targets(&xv);
        let mut cfg = TrainConfig::new(0.01, 10, 50, 1);
        cfg.divergence_threshold = 1e-12;
        let mut net = quad_net(1);
        let rep = train_loop(&mut net, TrainData::Fresh(&Quadratic), (&xv, &yv), &cfg).unwrap();
        assert_eq!(rep.diverged.map(|d| d.0), Some(1));
        assert!(matches!(rep.into_result(), Err(Error::Diverged { .. })));
    }
}
