//! Command-line front end for the two-arm compensation-attack pipeline.
//!
//! `run` executes a whole experiment from a TOML config file. The other
//! subcommands expose the individual pipeline stages over snapshot files so
//! a run can be assembled, varied, or inspected piecewise: draw data, train
//! a model, perturb the adversary's points, score contributions, and compare
//! the payouts of two score matrices. Every subcommand accepts `--seed` and
//! `--out`.
//!
//! Exit codes: 0 on success, 2 for configuration errors (invalid flags or
//! config files), 3 for stage failures (I/O, divergence, solver breakdown).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use attrisim::attribution::{
    data_shapley, grad_dot, influence_function, train_trak_ensemble, trak, CgConfig,
    ContributionMatrix, ShapleyConfig, TrakConfig,
};
use attrisim::compensation::{compensation_share, fraction_of_change, TopKConfig};
use attrisim::data::{load_csv, load_idx, synth_blobs, Dataset, Provenance};
use attrisim::experiment::{
    emit_tables, load_report, run_experiment, verify_theory, ExperimentConfig,
};
use attrisim::model::{
    train, train_warm, Architecture, ModelParams, OptimizerKind, TrainConfig,
};
use attrisim::outlier::{
    fgsm_attack, pgd_attack, random_perturb, simba_attack, zoo_attack, AttackTrace, ModelQuery,
    ProbQuery, SimbaConfig, ZooConfig,
};
use attrisim::shadow::{shadow_attack, train_shadow_ensemble, AttackBudget};
use attrisim::{CoreError, Result};

#[derive(Parser)]
#[command(
    name = "attrisim",
    version,
    about = "Simulator for adversarial attacks on attribution-based compensation"
)]
struct Cli {
    /// Master seed for every randomized step of the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory; each subcommand has a sensible default.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full two-arm experiment described by a TOML config file.
    Run(RunArgs),
    /// Write a dataset snapshot (synthetic blobs, an IDX pair, or a CSV).
    GenerateData(GenerateDataArgs),
    /// Train a model on a dataset snapshot.
    Train(TrainArgs),
    /// Perturb a dataset's points, optionally against a trained model.
    Attack(AttackArgs),
    /// Score training points against validation points.
    Attribute(AttributeArgs),
    /// Compare two contribution matrices under the top-k payout.
    Evaluate(EvaluateArgs),
    /// Check the O(1/n) influence-stability predictions numerically.
    VerifyTheory(VerifyTheoryArgs),
    /// Render the summary table for one or more finished run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (flat TOML, schema-versioned).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Blobs,
    Idx,
    Csv,
}

#[derive(Args)]
struct GenerateDataArgs {
    #[arg(long, value_enum, default_value_t = SourceArg::Blobs)]
    source: SourceArg,
    /// Number of points to draw (blobs source).
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Per-class Gaussian spread (blobs source).
    #[arg(long, default_value_t = 0.15)]
    spread: f64,
    /// IDX image file (idx source).
    #[arg(long)]
    idx_images: Option<PathBuf>,
    /// IDX label file (idx source).
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// CSV file with one `label,feature...` row per point (csv source).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Lr,
    Mlp,
    Cnn,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset snapshot.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ArchArg::Lr)]
    arch: ArchArg,
    /// Hidden layer widths for the MLP, e.g. `--hidden 32,16`.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    hidden: Vec<usize>,
    /// Image height for the CNN; inferred as a square when omitted.
    #[arg(long)]
    height: Option<usize>,
    /// Image width for the CNN; inferred as a square when omitted.
    #[arg(long)]
    width: Option<usize>,
    /// Convolution channel counts and classifier width for the CNN.
    #[arg(long, default_value_t = 8)]
    conv1: usize,
    #[arg(long, default_value_t = 16)]
    conv2: usize,
    #[arg(long, default_value_t = 32)]
    fc_width: usize,
    #[arg(long, default_value_t = 0.01)]
    l2: f64,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    /// Minibatch size; 0 trains full-batch.
    #[arg(long, default_value_t = 0)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    optimizer: OptimizerArg,
    /// Start from this model snapshot instead of a fresh initialization.
    #[arg(long)]
    warm_from: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum AttackKindArg {
    Shadow,
    Zoo,
    Simba,
    Random,
    Fgsm,
    Pgd,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(value_enum)]
    kind: AttackKindArg,
    /// Points to perturb (labels, ids, and provenance are preserved).
    #[arg(long)]
    data: PathBuf,
    /// Target model snapshot (needed by every kind except `random`).
    #[arg(long)]
    model: Option<PathBuf>,
    /// L∞ budget (shadow/random/fgsm/pgd) or per-step magnitude (zoo/simba).
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Ascent step size (shadow/pgd).
    #[arg(long, default_value_t = 0.01)]
    step_size: f64,
    /// Ascent iterations (shadow/zoo/pgd).
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Finite-difference half-width (zoo).
    #[arg(long, default_value_t = 1e-4)]
    fd_step: f64,
    /// Coordinates probed per iteration (zoo).
    #[arg(long, default_value_t = 128)]
    coord_budget: usize,
    /// Per-point query cap (simba).
    #[arg(long, default_value_t = 1_000_000)]
    max_queries: u64,
    /// Distribution-matched pool snapshot the shadow models train on.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Shadow ensemble size.
    #[arg(long, default_value_t = 10)]
    shadow_models: usize,
    /// Pool points per shadow model; 0 takes half the pool.
    #[arg(long, default_value_t = 0)]
    shadow_subset: usize,
    /// Pool points held out as the shadow validation set.
    #[arg(long, default_value_t = 50)]
    shadow_val: usize,
    /// Training epochs for each shadow model.
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Where to write per-point attack traces (zoo/simba only).
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    If,
    Graddot,
    Trak,
    Shapley,
}

#[derive(Args)]
struct AttributeArgs {
    #[arg(value_enum)]
    method: MethodArg,
    /// Training dataset snapshot (the rows of the matrix).
    #[arg(long)]
    train: PathBuf,
    /// Trained model snapshot.
    #[arg(long)]
    model: PathBuf,
    /// Validation dataset snapshot (the columns of the matrix).
    #[arg(long)]
    val: PathBuf,
    /// CG damping override (if).
    #[arg(long)]
    damping: Option<f64>,
    /// CG iteration cap override (if).
    #[arg(long)]
    max_iters: Option<usize>,
    /// CG residual tolerance override (if).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Projection dimension (trak).
    #[arg(long, default_value_t = 256)]
    k_proj: usize,
    /// Ridge regularizer; defaults to a trace-scaled value (trak).
    #[arg(long)]
    ridge: Option<f64>,
    /// Independently trained models to average over (trak).
    #[arg(long, default_value_t = 1)]
    ensemble: usize,
    /// Training-set fraction each extra ensemble member sees (trak).
    #[arg(long, default_value_t = 0.5)]
    subset_fraction: f64,
    /// Monte-Carlo permutations (shapley).
    #[arg(long, default_value_t = 100)]
    permutations: usize,
    /// Early-stopping tolerance on marginal gains; 0 disables (shapley).
    #[arg(long, default_value_t = 0.0)]
    truncation_tol: f64,
    /// Epochs per coalition retraining (shapley) or per extra trak member.
    #[arg(long, default_value_t = 5)]
    retrain_epochs: usize,
    /// Epochs for trak ensemble-member training.
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Learning rate for any retraining done by the method.
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Contribution matrix of the unmanipulated arm.
    #[arg(long)]
    original: PathBuf,
    /// Contribution matrix of the manipulated arm.
    #[arg(long)]
    manipulated: PathBuf,
    /// Training snapshot; adversary ids are read from point provenance.
    #[arg(long)]
    train: PathBuf,
    /// Rewarded ranks per validation point.
    #[arg(long, default_value_t = 20)]
    k: usize,
}

#[derive(Args)]
struct VerifyTheoryArgs {
    /// Training-set sizes to probe, e.g. `--ns 200,400,800`.
    #[arg(long, value_delimiter = ',', default_value = "200,400,800")]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    dim: usize,
    #[arg(long, default_value_t = 0.01)]
    l2: f64,
    /// L2 magnitude of the single-point feature perturbation.
    #[arg(long, default_value_t = 0.5)]
    perturb_mag: f64,
    /// How many points to perturb per trial.
    #[arg(long, default_value_t = 1)]
    points: usize,
    /// Independent repetitions per training-set size.
    #[arg(long, default_value_t = 3)]
    trials: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Finished run directories (each containing a report.json).
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out;
    match cli.command {
        Command::Run(args) => cmd_run(args, cli.seed, out),
        Command::GenerateData(args) => cmd_generate_data(args, seed, out),
        Command::Train(args) => cmd_train(args, seed, out),
        Command::Attack(args) => cmd_attack(args, seed, out),
        Command::Attribute(args) => cmd_attribute(args, seed, out),
        Command::Evaluate(args) => cmd_evaluate(args, out),
        Command::VerifyTheory(args) => cmd_verify_theory(args, seed, out),
        Command::Report(args) => cmd_report(args, out),
    }
}

fn out_or(out: Option<PathBuf>, default: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(default))
}

fn cmd_run(args: RunArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml_path(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = out {
        cfg.out_dir = dir.display().to_string();
    }
    let artifacts = run_experiment(&cfg)?;
    println!("{}", emit_tables(std::slice::from_ref(&artifacts.report))?);
    println!("run directory: {}", artifacts.run_dir.display());
    Ok(())
}

fn cmd_generate_data(args: GenerateDataArgs, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let data = match args.source {
        SourceArg::Blobs => synth_blobs(args.n, args.classes, args.dim, args.spread, seed)?,
        SourceArg::Idx => {
            let (images, labels) = match (&args.idx_images, &args.idx_labels) {
                (Some(i), Some(l)) => (i, l),
                _ => {
                    return Err(CoreError::Config(
                        "idx source needs --idx-images and --idx-labels".into(),
                    ))
                }
            };
            load_idx(images, labels)?
        }
        SourceArg::Csv => {
            let path = args.csv.as_ref().ok_or_else(|| {
                CoreError::Config("csv source needs --csv".into())
            })?;
            load_csv(path)?
        }
    };
    let out = out_or(out, "data.json");
    data.save_snapshot(&out)?;
    println!(
        "wrote {} points (dim {}, {} classes) to {}",
        data.len(),
        data.dim(),
        data.classes(),
        out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let data = Dataset::load_snapshot(&args.data)?;
    let arch = match args.arch {
        ArchArg::Lr => Architecture::Lr {
            dim: data.dim(),
            classes: data.classes(),
            l2_reg: args.l2,
        },
        ArchArg::Mlp => Architecture::Mlp {
            dim: data.dim(),
            classes: data.classes(),
            hidden: args.hidden.clone(),
            l2_reg: args.l2,
        },
        ArchArg::Cnn => {
            let (height, width) = match (args.height, args.width) {
                (Some(h), Some(w)) => (h, w),
                (None, None) => {
                    let side = (data.dim() as f64).sqrt().round() as usize;
                    if side * side != data.dim() {
                        return Err(CoreError::Config(format!(
                            "dim {} is not square; pass --height and --width",
                            data.dim()
                        )));
                    }
                    (side, side)
                }
                _ => {
                    return Err(CoreError::Config(
                        "pass both --height and --width or neither".into(),
                    ))
                }
            };
            Architecture::Cnn {
                height,
                width,
                conv1: args.conv1,
                conv2: args.conv2,
                fc_width: args.fc_width,
                classes: data.classes(),
                l2_reg: args.l2,
            }
        }
    };
    let tcfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: if args.batch == 0 { None } else { Some(args.batch) },
        optimizer: match args.optimizer {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        },
        seed,
    };
    let model = match &args.warm_from {
        Some(path) => {
            let start = ModelParams::load_snapshot(path)?;
            train_warm(&start, &data, &tcfg)?
        }
        None => train(&arch, &data, &tcfg)?,
    };
    let out = out_or(out, "model.json");
    model.save_snapshot(&out)?;
    println!(
        "trained {} parameters; train accuracy {:.3}, mean loss {:.4}; wrote {}",
        model.theta.len(),
        model.accuracy(&data),
        model.mean_loss(&data),
        out.display()
    );
    Ok(())
}

fn load_target(model: &Option<PathBuf>) -> Result<ModelParams> {
    let path = model.as_ref().ok_or_else(|| {
        CoreError::Config("this attack needs --model".into())
    })?;
    ModelParams::load_snapshot(path)
}

fn cmd_attack(args: AttackArgs, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let z = Dataset::load_snapshot(&args.data)?;
    let mut traces: Option<Vec<AttackTrace>> = None;
    let mut queries: Option<u64> = None;
    let moved = match args.kind {
        AttackKindArg::Random => random_perturb(&z, args.eps, seed)?,
        AttackKindArg::Fgsm => fgsm_attack(&load_target(&args.model)?, &z, args.eps)?,
        AttackKindArg::Pgd => pgd_attack(
            &load_target(&args.model)?,
            &z,
            args.eps,
            args.iterations,
            args.step_size,
        )?,
        AttackKindArg::Zoo => {
            let model = load_target(&args.model)?;
            let query = ModelQuery::new(&model);
            let cfg = ZooConfig {
                eps: args.eps,
                fd_step: args.fd_step,
                coord_budget: args.coord_budget,
                iterations: args.iterations,
            };
            let (moved, t) = zoo_attack(&query, &z, &cfg)?;
            queries = Some(query.queries_used());
            traces = Some(t);
            moved
        }
        AttackKindArg::Simba => {
            let model = load_target(&args.model)?;
            let query = ModelQuery::new(&model);
            let cfg = SimbaConfig {
                eps: args.eps,
                max_queries: args.max_queries,
                seed,
            };
            let (moved, t) = simba_attack(&query, &z, &cfg)?;
            queries = Some(query.queries_used());
            traces = Some(t);
            moved
        }
        AttackKindArg::Shadow => {
            let model = load_target(&args.model)?;
            let pool_path = args.pool.as_ref().ok_or_else(|| {
                CoreError::Config("shadow attack needs --pool".into())
            })?;
            let pool = Dataset::load_snapshot(pool_path)?;
            let subset = if args.shadow_subset == 0 {
                (pool.len() / 2).max(1)
            } else {
                args.shadow_subset
            };
            let tcfg = TrainConfig {
                epochs: args.epochs,
                seed,
                ..TrainConfig::default()
            };
            let ensemble = train_shadow_ensemble(
                &pool,
                &z,
                args.shadow_models,
                subset,
                args.shadow_val,
                &model.arch,
                &tcfg,
                seed,
            )?;
            let budget = AttackBudget {
                eps_inf: args.eps,
                step_size: args.step_size,
                iterations: args.iterations,
            };
            shadow_attack(&z, &ensemble, &budget)?
        }
    };
    let out = out_or(out, "attacked.json");
    moved.save_snapshot(&out)?;
    if let (Some(path), Some(t)) = (&args.traces, &traces) {
        let text =
            serde_json::to_string_pretty(t).map_err(|e| CoreError::Serde(e.to_string()))?;
        std::fs::write(path, text)?;
    }
    let displaced = z
        .points()
        .iter()
        .zip(moved.points())
        .filter(|(a, b)| a.features != b.features)
        .count();
    let max_linf = z
        .points()
        .iter()
        .zip(moved.points())
        .map(|(a, b)| attrisim::linalg::linf_dist(&a.features, &b.features))
        .fold(0.0_f64, f64::max);
    match queries {
        Some(q) => println!(
            "moved {displaced}/{} points, max L∞ {max_linf:.4}, {q} queries; wrote {}",
            z.len(),
            out.display()
        ),
        None => println!(
            "moved {displaced}/{} points, max L∞ {max_linf:.4}; wrote {}",
            z.len(),
            out.display()
        ),
    }
    Ok(())
}

fn cmd_attribute(args: AttributeArgs, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let train_set = Dataset::load_snapshot(&args.train)?;
    let model = ModelParams::load_snapshot(&args.model)?;
    let val = Dataset::load_snapshot(&args.val)?;
    let matrix = match args.method {
        MethodArg::Graddot => grad_dot(&train_set, &model, &val)?,
        MethodArg::If => {
            let base = CgConfig::default_for(&model.arch);
            let cfg = CgConfig {
                damping: args.damping.unwrap_or(base.damping),
                max_iters: args.max_iters.unwrap_or(base.max_iters),
                tolerance: args.tolerance.unwrap_or(base.tolerance),
            };
            influence_function(&train_set, &model, &val, &cfg)?
        }
        MethodArg::Trak => {
            let cfg = TrakConfig {
                k_proj: args.k_proj,
                seed,
                ridge: args.ridge,
                ensemble: args.ensemble,
                subset_fraction: args.subset_fraction,
                ..TrakConfig::default()
            };
            let tcfg = TrainConfig {
                epochs: args.epochs,
                learning_rate: args.lr,
                seed,
                ..TrainConfig::default()
            };
            let models = train_trak_ensemble(&train_set, &model, &tcfg, &cfg)?;
            trak(&train_set, &models, &val, &cfg)?
        }
        MethodArg::Shapley => {
            let cfg = ShapleyConfig {
                permutations: args.permutations,
                truncation_tol: args.truncation_tol,
                retrain_epochs: args.retrain_epochs,
                seed,
            };
            let tcfg = TrainConfig {
                learning_rate: args.lr,
                seed,
                ..TrainConfig::default()
            };
            data_shapley(&train_set, &model.arch, &tcfg, &val, &cfg)?
        }
    };
    let out = out_or(out, "matrix.taub");
    matrix.save(&out)?;
    let unconverged = matrix.unconverged_val_ids().len();
    println!(
        "scored {}×{} contributions ({} unconverged columns); wrote {}",
        matrix.n_train(),
        matrix.n_val(),
        unconverged,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, out: Option<PathBuf>) -> Result<()> {
    let original = ContributionMatrix::load(&args.original)?;
    let manipulated = ContributionMatrix::load(&args.manipulated)?;
    let train_set = Dataset::load_snapshot(&args.train)?;
    let adv_ids: Vec<u64> = train_set
        .points()
        .iter()
        .filter(|p| p.provenance == Provenance::Adversary)
        .map(|p| p.id)
        .collect();
    if adv_ids.is_empty() {
        return Err(CoreError::Config(
            "the training snapshot has no adversary-provenance points".into(),
        ));
    }
    let top_k = TopKConfig {
        k: args.k,
        ..TopKConfig::default()
    };
    let share_orig = compensation_share(&original, &adv_ids, &top_k)?;
    let share_man = compensation_share(&manipulated, &adv_ids, &top_k)?;
    let change = fraction_of_change(&original, &manipulated, &adv_ids, &top_k)?;
    let ratio = if share_man.share == share_orig.share {
        Some(1.0)
    } else if share_orig.share > 0.0 {
        Some(share_man.share / share_orig.share)
    } else {
        None
    };
    let out = out_or(out, "evaluation.json");
    let doc = serde_json::json!({
        "k": args.k,
        "adversary_points": adv_ids.len(),
        "original": share_orig,
        "manipulated": share_man,
        "ratio": ratio,
        "change": change,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CoreError::Serde(e.to_string()))?;
    std::fs::write(&out, text)?;
    println!(
        "shares: original {:.4}, manipulated {:.4}, ratio {}",
        share_orig.share,
        share_man.share,
        match ratio {
            Some(r) => format!("{:.1}%", r * 100.0),
            None => "n/a".into(),
        }
    );
    println!(
        "validation points paying the adversary more/tied/fewer: {:.3}/{:.3}/{:.3}",
        change.more, change.tied, change.fewer
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_verify_theory(args: VerifyTheoryArgs, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let out = out_or(out, "theory");
    let report = verify_theory(
        &args.ns,
        args.dim,
        args.l2,
        args.perturb_mag,
        args.points,
        args.trials,
        seed,
        Some(&out),
    )?;
    println!("{report}");
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs, out: Option<PathBuf>) -> Result<()> {
    let reports = args
        .run_dirs
        .iter()
        .map(|dir| load_report(dir))
        .collect::<Result<Vec<_>>>()?;
    let table = emit_tables(&reports)?;
    print!("{table}");
    if let Some(path) = out {
        std::fs::write(&path, &table)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
