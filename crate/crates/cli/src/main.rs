//! `gradnet`: train, verify and evaluate gradient networks.
//!
//! Exit codes: 0 pass, 1 experiment failure, 2 usage or config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gradnet_core::experiment::{
    export_field_grid, run_experiment, run_hamiltonian, write_outputs, ExperimentConfig, HamiltonianConfig,
};
use gradnet_core::gradcheck::{audit_network, AuditConfig, Domain};
use gradnet_core::lse_oracle::{certify_builtin, BuiltinConvex, LseApproxConfig};
use gradnet_core::networks::ModuleSpec;
use gradnet_core::tasks::TaskSpec;
use gradnet_core::{ActivationSpec, ConstraintMode, Error, Network, NetworkSpec};

#[derive(Parser)]
#[command(name = "gradnet", version, about = "Gradient networks: training, audits and certification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a gradient-field experiment from a TOML config.
    Train {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a saved network, or a freshly initialised built-in one.
    Verify {
        /// Network JSON file.
        model: Option<PathBuf>,
        #[arg(long, value_enum, conflicts_with = "model")]
        builtin: Option<Builtin>,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long)]
        monotone: bool,
        /// Initialisation seed for built-in networks.
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        /// Write the built-in network here before auditing.
        #[arg(long)]
        save: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Audit box `[lo, hi]^d`.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        hi: f64,
    },
    /// Build and certify a log-sum-exp approximant of a built-in convex function.
    Lse {
        /// affine, quadratic or convex2d.
        function: String,
        #[arg(long, default_value_t = 5)]
        m: u32,
        #[arg(long, default_value_t = 500.0)]
        t: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Maximum number of hyperplanes.
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Two-body Hamiltonian run: data, training, unrolled evaluation.
    Hamiltonian {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a trained 2D model and its target field on a grid as CSV.
    ExportPlotData {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        task: PlotTask,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Single,
    GradnetM,
    GradnetC,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotTask {
    Convex2d,
    Nonconvex2d,
}

/// A failure with its exit code.
struct Failure(u8, anyhow::Error);

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure(2, e.into())
}

fn failed(e: impl Into<anyhow::Error>) -> Failure {
    Failure(1, e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Train { config, out } => cmd_train(&config, out),
        Cmd::Verify { model, builtin, dim, hidden, monotone, init_seed, save, points, pairs, seed, lo, hi } => {
            let net = match (model, builtin) {
                (Some(path), _) => Network::load(&path).with_context(|| format!("reading {}", path.display())).map_err(usage)?,
                (None, Some(b)) => {
                    let net = builtin_network(b, dim, hidden, monotone, init_seed).map_err(usage)?;
                    if let Some(p) = save {
                        net.save(&p).with_context(|| format!("writing {}", p.display())).map_err(usage)?;
                    }
                    net
                }
                (None, None) => return Err(usage(anyhow::anyhow!("give a model file or --builtin"))),
            };
            let domain = Domain::new(vec![lo; net.dim()], vec![hi; net.dim()]).map_err(usage)?;
            let cfg = AuditConfig { points, pairs, seed, ..AuditConfig::default() };
            cmd_verify(&net, &domain, &cfg)
        }
        Cmd::Lse { function, m, t, d, cap } => cmd_lse(&function, m, t, d, cap),
        Cmd::Hamiltonian { config, out } => cmd_hamiltonian(&config, out),
        Cmd::ExportPlotData { model, task, grid, out } => {
            let net = Network::load(&model).with_context(|| format!("reading {}", model.display())).map_err(usage)?;
            let task = match task {
                PlotTask::Convex2d => TaskSpec::Convex2d,
                PlotTask::Nonconvex2d => TaskSpec::Nonconvex2d,
            }
            .build()
            .map_err(usage)?;
            let csv = export_field_grid(&net, &task, grid).map_err(usage)?;
            std::fs::write(&out, csv).with_context(|| format!("writing {}", out.display())).map_err(failed)?;
            println!("wrote {} ({} points)", out.display(), grid * grid);
            Ok(())
        }
    }
}

fn builtin_network(b: Builtin, dim: usize, hidden: usize, monotone: bool, seed: u64) -> anyhow::Result<Network> {
    let mode = if monotone { ConstraintMode::Monotone } else { ConstraintMode::None };
    let softmax = ActivationSpec::Softmax { t: 1.0 };
    let spec = match b {
        Builtin::Single => NetworkSpec::SingleLayer { dim, hidden, activation: softmax, mode },
        Builtin::GradnetM => NetworkSpec::GradnetM { dim, modules: vec![ModuleSpec::new(hidden, softmax); 4], mode },
        Builtin::GradnetC => NetworkSpec::GradnetC { dim, hidden, activations: vec![ActivationSpec::Tanh; 3], mode },
    };
    Ok(Network::init(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

fn config_error(e: Error) -> Failure {
    match e {
        Error::Config(_) => usage(e),
        other => failed(other),
    }
}

fn cmd_train(path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(path).map_err(usage)?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let outcome = run_experiment(&cfg).map_err(config_error)?;
    write_outputs(&dir, &outcome.files).map_err(failed)?;
    println!("{}", outcome.summary_line);
    println!("outputs in {}", dir.display());
    if outcome.failed {
        return Err(failed(anyhow::anyhow!("training diverged for every learning rate; partial results written")));
    }
    Ok(())
}

fn cmd_hamiltonian(path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = HamiltonianConfig::load(path).map_err(usage)?;
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    let outcome = run_hamiltonian(&cfg).map_err(config_error)?;
    write_outputs(&dir, &outcome.files).map_err(failed)?;
    println!("{}", outcome.summary_line);
    println!("outputs in {}", dir.display());
    if outcome.failed {
        return Err(failed(anyhow::anyhow!("training or unrolling diverged; partial results written")));
    }
    Ok(())
}

fn cmd_verify(net: &Network, domain: &Domain, cfg: &AuditConfig) -> Result<(), Failure> {
    let constraints = net.validate();
    let report = audit_network(net, domain, cfg).map_err(usage)?;
    println!("mode = {}", if net.is_monotone() { "monotone" } else { "unconstrained" });
    println!("params = {}", net.num_params());
    match &constraints {
        Ok(()) => println!("constraints = PASS"),
        Err(e) => println!("constraints = FAIL ({e})"),
    }
    println!("{report}");
    if constraints.is_err() || !report.passed() {
        return Err(failed(anyhow::anyhow!("audit failed")));
    }
    Ok(())
}

fn cmd_lse(function: &str, m: u32, t: f64, d: usize, cap: Option<usize>) -> Result<(), Failure> {
    let Some(func) = BuiltinConvex::parse(function) else {
        return Err(usage(anyhow::anyhow!("unknown function '{function}' (affine, quadratic, convex2d)")));
    };
    func.check_dim(d).map_err(usage)?;
    if m == 0 || !(t > 0.0 && t.is_finite()) {
        return Err(usage(anyhow::anyhow!("need m >= 1 and t > 0")));
    }
    let mut cfg = LseApproxConfig::new(m, t, d);
    if let Some(c) = cap {
        cfg.cap = c;
    }
    // with m, t, d valid the only remaining error is the hyperplane cap
    cfg.hyperplanes().map_err(failed)?;
    let report = certify_builtin(func, &cfg).map_err(failed)?;
    println!("function = {function}");
    println!("{report}");
    if !report.pass {
        return Err(failed(anyhow::anyhow!("sup error exceeds the bound")));
    }
    Ok(())
}
