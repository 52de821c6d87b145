use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gradnet_core::experiment::ModelConfig;
use gradnet_core::tasks::{sample_unit_cube, TaskSpec};
use gradnet_core::train::{adam_step, param_gradients, AdamConfig, AdamState};
use gradnet_core::Network;

const D: usize = 32;
const BATCH: usize = 100;

fn budget_net(toml_model: &str) -> Network {
    let m: ModelConfig = toml::from_str(toml_model).expect("model config");
    Network::init(&m.to_spec(D).expect("spec"), &mut ChaCha8Rng::seed_from_u64(0)).expect("init")
}

fn nets() -> Vec<(&'static str, Network)> {
    vec![
        (
            "mgradnet_m",
            budget_net(
                "architecture = \"gradnet_m\"\nmode = \"monotone\"\nparams_per_dim = 1024\n\
                 activation = { kind = \"softmax_softmin_mix\", t = 1.0, constrained = true }",
            ),
        ),
        (
            "gradnet_c",
            budget_net(
                "architecture = \"gradnet_c\"\nparams_per_dim = 1024\n\
                 activation = { kind = \"scaled_tanh_mix\", constrained = false }",
            ),
        ),
    ]
}

fn forward(c: &mut Criterion) {
    let x = sample_unit_cube(D, BATCH, &mut ChaCha8Rng::seed_from_u64(1));
    let mut g = c.benchmark_group("forward_batch100_d32");
    for (name, net) in nets() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| net.forward_batch(&x).unwrap()));
    }
    g.finish();
}

fn jacobian(c: &mut Criterion) {
    let x = vec![0.3; D];
    let mut g = c.benchmark_group("jacobian_d32");
    for (name, net) in nets() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| net.jacobian(&x).unwrap()));
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let task = TaskSpec::PiecewiseQuadratic { d: D }.build().unwrap();
    let x = sample_unit_cube(D, BATCH, &mut ChaCha8Rng::seed_from_u64(2));
    let y = task.gradient_batch(&x);
    let cfg = AdamConfig::default();
    let mut g = c.benchmark_group("train_step_batch100_d32");
    for (name, net) in nets() {
        let segs = net.segments();
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || (net.clone(), AdamState::new(net.num_params())),
                |(mut n, mut st)| {
                    let (_, grad) = param_gradients(&n, &x, &y).unwrap();
                    let mut p = n.params();
                    adam_step(&mut p, &grad, &mut st, &cfg, Some(&segs));
                    n.set_params(&p).unwrap();
                    n
                },
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = forward, jacobian, train_step
}
criterion_main!(benches);
