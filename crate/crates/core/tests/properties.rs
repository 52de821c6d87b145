use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gradnet_core::experiment::{derive_seed, summarize};
use gradnet_core::lse_oracle::LseApproxConfig;
use gradnet_core::networks::ModuleSpec;
use gradnet_core::numerics::{fd_gradient, fd_jacobian, mse_db};
use gradnet_core::tasks::{Gmm, TaskSpec};
use gradnet_core::train::{adam_step, loss_mse, param_gradients, AdamConfig, AdamState};
use gradnet_core::{ActivationSpec, ConstraintMode, Matrix, Network, NetworkSpec};

fn spec(kind: usize, d: usize, h: usize, mono: bool) -> NetworkSpec {
    let mode = if mono { ConstraintMode::Monotone } else { ConstraintMode::None };
    match kind {
        0 => NetworkSpec::SingleLayer { dim: d, hidden: h, activation: ActivationSpec::Softmax { t: 1.5 }, mode },
        1 => NetworkSpec::SingleLayer { dim: d, hidden: h, activation: ActivationSpec::Sigmoid, mode },
        2 => NetworkSpec::GradnetM { dim: d, modules: vec![ModuleSpec::new(h, ActivationSpec::Softmax { t: 1.0 }); 3], mode },
        3 => NetworkSpec::GradnetM {
            dim: d,
            modules: vec![ModuleSpec::new(h, ActivationSpec::SoftmaxSoftminMix { t: 1.0, constrained: mono }); 2],
            mode,
        },
        4 => NetworkSpec::GradnetC { dim: d, hidden: h, activations: vec![ActivationSpec::Tanh; 3], mode },
        _ => NetworkSpec::GradnetC {
            dim: d,
            hidden: h,
            activations: vec![ActivationSpec::ScaledTanhMix { constrained: mono }; 2],
            mode,
        },
    }
}

/// Random parameters (scale 1) pushed back onto the feasible set.
fn random_net(kind: usize, d: usize, h: usize, mono: bool, seed: u64) -> Network {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(&spec(kind, d, h, mono), &mut r).unwrap();
    let p: Vec<f64> = net.params().iter().map(|v| v + r.gen_range(-1.0..1.0)).collect();
    net.set_params(&p).unwrap();
    net.project();
    net
}

fn point(d: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..d).map(|_| r.gen_range(-1.0..2.0)).collect()
}

fn net_args() -> impl Strategy<Value = (usize, usize, usize, bool, u64)> {
    (0usize..6, 1usize..6, 1usize..6, any::<bool>(), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_and_idempotent((kind, d, h, mono, seed) in net_args()) {
        let net = random_net(kind, d, h, mono, seed);
        prop_assert!(net.validate().is_ok());
        let mut again = net.clone();
        again.project();
        prop_assert_eq!(again.params(), net.params());
    }

    #[test]
    fn jacobian_is_symmetric_and_matches_fd((kind, d, h, mono, seed) in net_args(), xs in any::<u64>()) {
        let net = random_net(kind, d, h, mono, seed);
        let x = point(d, xs);
        let j = net.jacobian(&x).unwrap();
        prop_assert!(j.asymmetry() <= 1e-12 * (1.0 + j.frobenius()));
        let fd = fd_jacobian(|v: &[f64]| net.forward(v).unwrap(), &x, None).unwrap();
        let mut diff = fd.clone();
        diff.add_scaled(-1.0, &j);
        prop_assert!(diff.frobenius() <= 1e-6 * (1.0 + j.frobenius()), "{}", diff.frobenius());
    }

    #[test]
    fn monotone_nets_are_monotone((kind, d, h, _m, seed) in net_args(), a in any::<u64>(), b in any::<u64>()) {
        let net = random_net(kind, d, h, true, seed);
        prop_assert!(net.is_monotone());
        let (x, y) = (point(d, a), point(d, b));
        let (gx, gy) = (net.forward(&x).unwrap(), net.forward(&y).unwrap());
        let inner: f64 = gx.iter().zip(&gy).zip(x.iter().zip(&y)).map(|((p, q), (u, v))| (p - q) * (u - v)).sum();
        let scale: f64 = x.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum();
        prop_assert!(inner >= -1e-10 * (1.0 + scale), "{inner}");
        let lmin = gradnet_core::numerics::min_sym_eigenvalue(&net.jacobian(&x).unwrap()).unwrap();
        prop_assert!(lmin >= -1e-9, "{lmin}");
    }

    #[test]
    fn forward_is_gradient_of_potential((kind, d, h, mono, seed) in net_args(), xs in any::<u64>()) {
        let net = random_net(kind, d, h, mono, seed);
        prop_assume!(net.has_potential());
        let x = point(d, xs);
        let g = net.forward(&x).unwrap();
        let fd = fd_gradient(|v: &[f64]| net.potential(v).unwrap(), &x, None).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn json_roundtrip_is_exact((kind, d, h, mono, seed) in net_args()) {
        let net = random_net(kind, d, h, mono, seed);
        let back = Network::from_json(&net.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.params(), net.params());
        prop_assert_eq!(back.spec(), net.spec());
    }

    #[test]
    fn adam_with_projection_stays_feasible((kind, d, h, _m, seed) in net_args(), lr in 0.0f64..0.5) {
        let mut net = random_net(kind, d, h, true, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Matrix::from_fn(4, d, |_, _| r.gen_range(0.0..1.0));
        let y = Matrix::from_fn(4, d, |_, _| r.gen_range(-3.0..3.0));
        let segs = net.segments();
        let mut st = AdamState::new(net.num_params());
        let cfg = AdamConfig { learning_rate: lr, ..AdamConfig::default() };
        for _ in 0..5 {
            let (loss, g) = param_gradients(&net, &x, &y).unwrap();
            prop_assert!(loss >= 0.0);
            let mut p = net.params();
            adam_step(&mut p, &g, &mut st, &cfg, Some(&segs));
            net.set_params(&p).unwrap();
            prop_assert!(net.validate().is_ok());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mse_is_nonnegative_and_zero_on_equal(v in prop::collection::vec(-1e3f64..1e3, 1..40), w in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let n = v.len().min(w.len());
        let a = Matrix::from_vec(n, 1, v[..n].to_vec()).unwrap();
        let b = Matrix::from_vec(n, 1, w[..n].to_vec()).unwrap();
        prop_assert!(loss_mse(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mse_db_is_ten_log10(e in -12i32..6, m in 1.0f64..10.0) {
        let mse = m * 10f64.powi(e);
        prop_assert!((mse_db(mse) - 10.0 * mse.log10()).abs() < 1e-12);
        prop_assert!((mse_db(10f64.powi(e)) - 10.0 * e as f64).abs() < 1e-9);
    }

    #[test]
    fn summary_statistics_are_consistent(v in prop::collection::vec(-100.0f64..100.0, 1..20)) {
        let s = summarize(&v);
        prop_assert!(s.std >= 0.0);
        prop_assert!((s.std_err * (v.len() as f64).sqrt() - s.std).abs() <= 1e-9 * (1.0 + s.std));
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean >= lo - 1e-9 && s.mean <= hi + 1e-9);
    }

    #[test]
    fn hyperplane_count_formula(m in 1u32..12, d in 1usize..4) {
        let cfg = LseApproxConfig { cap: usize::MAX, ..LseApproxConfig::new(m, 10.0, d) };
        prop_assert_eq!(cfg.hyperplanes().unwrap(), ((1usize << m) - 1).pow(d as u32));
    }

    #[test]
    fn trial_seeds_are_distinct(base in any::<u64>(), a in 0usize..1000, b in 0usize..1000, s in 0u64..8) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(base, a, s), derive_seed(base, b, s));
    }

    #[test]
    fn gmm_score_is_log_density_gradient(seed in any::<u64>(), k in 1usize..5, d in 1usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let means = Matrix::from_fn(k, d, |_, _| r.gen_range(0.0..1.0));
        let gmm = Gmm::new(means, 0.05).unwrap();
        let x: Vec<f64> = (0..d).map(|_| r.gen_range(0.0..1.0)).collect();
        let fd = fd_gradient(|v: &[f64]| gmm.log_density(v), &x, None).unwrap();
        for (a, b) in gmm.score(&x).iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn task_gradients_match_potentials(which in 0usize..3, seed in any::<u64>()) {
        let spec = [TaskSpec::Convex2d, TaskSpec::Nonconvex2d, TaskSpec::PiecewiseQuadratic { d: 4 }][which].clone();
        let task = spec.build().unwrap();
        let x = point(task.dim(), seed).iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<_>>();
        // skip points near a piece boundary, where the potential has a kink
        prop_assume!(task.piece_margin(&x).is_none_or(|m| m > 1e-4));
        let fd = fd_gradient(|v: &[f64]| task.potential(v), &x, None).unwrap();
        for (a, b) in task.gradient(&x).iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}
