//! `lrrfuse`: decomposition, fusion, training, and evaluation from the
//! command line.
//!
//! Exit codes: 0 when the requested artifact was fully written, 1 when the
//! gradient audit fails, 2 on any input or processing error. Partially
//! written outputs are removed on failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use lrrfuse_core::container::Container;
use lrrfuse_core::error::Error;
use lrrfuse_core::lista::{
    default_step_size, llrr_decompose_matrix, DictionaryPair, LlrrProblem,
};
use lrrfuse_core::llrr::{self, LlrrStackParams};
use lrrfuse_core::loss::{BackboneSpec, LossConfig};
use lrrfuse_core::lrrnet::{fuse_forward, LrrNetParams};
use lrrfuse_core::mat::Mat;
use lrrfuse_core::metrics::evaluate_dirs;
use lrrfuse_core::tensor::Tensor;
use lrrfuse_core::trainer::{load_dataset, train, write_trace_csv, OptimizerKind, TrainConfig};
use lrrfuse_core::{checkgrad, imageio, rng, synth};

#[derive(Parser)]
#[command(name = "lrrfuse", version, about = "Low-rank representation image decomposition and infrared-visible fusion")]
struct Cli {
    /// Worker threads (default: available cores; env LRRFUSE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decompose one grayscale image into base and salient parts.
    Decompose(DecomposeArgs),
    /// Fuse an infrared/visible pair into one image.
    Fuse(FuseArgs),
    /// Train fusion parameters on a paired dataset.
    Train(TrainArgs),
    /// Compute quality metrics over fused/ir/vi directories.
    Eval(EvalArgs),
    /// Finite-difference audit of every gradient path.
    CheckGrad(CheckGradArgs),
    /// Generate a synthetic paired dataset.
    Synth(SynthArgs),
    /// Create a seeded model file.
    Init(InitArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecomposeMode {
    Matrix,
    Conv,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Input grayscale image (PNG or PGM).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: DecomposeMode,
    /// Model file matching the mode.
    #[arg(long)]
    model: PathBuf,
    /// Output stem; writes <stem>.lowrank.png, <stem>.salient.png, <stem>.json.
    #[arg(long)]
    out_base: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda2: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda3: f64,
    /// Step size; default 0.9 over the spectral norm of D^T D.
    #[arg(long)]
    mu: Option<f64>,
    /// Iteration count for matrix mode.
    #[arg(long, default_value_t = 50)]
    iters: usize,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    ir: PathBuf,
    #[arg(long)]
    vi: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    ir_dir: PathBuf,
    #[arg(long)]
    vi_dir: PathBuf,
    /// Flat JSON config; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV (default: <out>.trace.csv).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Start from an existing model instead of a seeded initialization.
    #[arg(long)]
    init_model: Option<PathBuf>,

    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Channels per part for seeded initialization.
    #[arg(long)]
    n: Option<usize>,
    /// Kernel size for seeded initialization.
    #[arg(long)]
    k: Option<usize>,
    /// Block count for seeded initialization.
    #[arg(long)]
    t: Option<usize>,

    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    gamma4: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    beta3: Option<f64>,
    #[arg(long)]
    w_ir: Option<f64>,
    #[arg(long)]
    w_vi: Option<f64>,
    /// Backbone weight file; omitted means the built-in test backbone.
    #[arg(long)]
    backbone_file: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    fused_dir: PathBuf,
    #[arg(long)]
    ir_dir: PathBuf,
    #[arg(long)]
    vi_dir: PathBuf,
    /// Report CSV path; an aligned table goes to the .txt sibling.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckGradArgs {
    /// Corrupt one gradient on purpose; the audit must then fail.
    #[arg(long, hide = true)]
    inject_bug: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    ir_dir: PathBuf,
    #[arg(long)]
    vi_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitKind {
    Matrix,
    Conv,
    Net,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, value_enum)]
    kind: InitKind,
    #[arg(long)]
    out: PathBuf,
    /// Channels per part (conv and net kinds).
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// Kernel size (conv and net kinds).
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Block count (conv and net kinds).
    #[arg(long, default_value_t = 4)]
    t: usize,
    /// Patch side for matrix dictionaries.
    #[arg(long, default_value_t = 8)]
    patch: usize,
    /// Atoms per dictionary for matrix mode (default: patch squared).
    #[arg(long)]
    atoms: Option<usize>,
}

/// Flat config file mirroring the train flags.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    image_size: Option<usize>,
    max_iters: Option<usize>,
    checkpoint_every: Option<usize>,
    checkpoint_dir: Option<PathBuf>,
    optimizer: Option<String>,
    seed: Option<u64>,
    n: Option<usize>,
    k: Option<usize>,
    t: Option<usize>,
    gamma1: Option<f64>,
    gamma2: Option<f64>,
    gamma4: Option<f64>,
    beta2: Option<f64>,
    beta3: Option<f64>,
    w_ir: Option<f64>,
    w_vi: Option<f64>,
    backbone_file: Option<PathBuf>,
}

/// Removes registered outputs unless the command committed them.
struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        OutputGuard {
            paths: Vec::new(),
            committed: false,
        }
    }

    fn register(&mut self, p: &Path) {
        self.paths.push(p.to_path_buf());
    }

    fn commit(&mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.paths {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Error> {
    if !path.is_file() {
        return Err(Error::Contract(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("LRRFUSE_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let seed = cli.seed;
    let verbose = cli.verbose;
    match &cli.cmd {
        Cmd::Decompose(args) => run_or_exit(cmd_decompose(args, verbose)),
        Cmd::Fuse(args) => run_or_exit(cmd_fuse(args, verbose)),
        Cmd::Train(args) => run_or_exit(cmd_train(args, seed, verbose)),
        Cmd::Eval(args) => run_or_exit(cmd_eval(args, verbose)),
        Cmd::CheckGrad(args) => cmd_check_grad(args, seed.unwrap_or(0)),
        Cmd::Synth(args) => run_or_exit(cmd_synth(args, seed.unwrap_or(0))),
        Cmd::Init(args) => run_or_exit(cmd_init(args, seed.unwrap_or(0))),
    }
}

fn run_or_exit(result: Result<(), Error>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Contract(format!("sidecar serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------- decompose

/// Splits an image into non-overlapping patches, columns of an n x p matrix.
/// The image is edge-padded up to a multiple of the patch side.
fn image_to_patches(img: &Tensor, patch: usize) -> (Mat, usize, usize) {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let ph = h.div_ceil(patch);
    let pw = w.div_ceil(patch);
    let cols = ph * pw;
    let mut x = Mat::zeros(patch * patch, cols);
    for by in 0..ph {
        for bx in 0..pw {
            let col = by * pw + bx;
            for dy in 0..patch {
                for dx in 0..patch {
                    let sy = (by * patch + dy).min(h - 1);
                    let sx = (bx * patch + dx).min(w - 1);
                    x.set(dy * patch + dx, col, img.data()[sy * w + sx]);
                }
            }
        }
    }
    (x, ph, pw)
}

fn patches_to_image(m: &Mat, patch: usize, ph: usize, pw: usize, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(vec![1, h, w]);
    for by in 0..ph {
        for bx in 0..pw {
            let col = by * pw + bx;
            for dy in 0..patch {
                for dx in 0..patch {
                    let sy = by * patch + dy;
                    let sx = bx * patch + dx;
                    if sy < h && sx < w {
                        out.data_mut()[sy * w + sx] = m.get(dy * patch + dx, col);
                    }
                }
            }
        }
    }
    out
}

fn load_matrix_model(path: &Path) -> Result<(DictionaryPair, usize), Error> {
    let c = Container::load(path)?;
    if c.meta("model") != Some("llrr-matrix") {
        return Err(Error::Manifest(format!(
            "model kind {:?} does not match matrix mode",
            c.meta("model")
        )));
    }
    let grab = |name: &str| -> Result<Mat, Error> {
        let t = c
            .get(name)
            .ok_or_else(|| Error::Manifest(format!("missing tensor '{name}'")))?;
        if t.rank() != 2 {
            return Err(Error::Manifest(format!("'{name}' must be a matrix")));
        }
        Mat::from_vec(t.shape()[0], t.shape()[1], t.data().to_vec())
    };
    let d1 = grab("d1")?;
    let d2 = grab("d2")?;
    let n = d1.rows();
    let patch = (n as f64).sqrt().round() as usize;
    if patch * patch != n {
        return Err(Error::Manifest(format!(
            "dictionary patch dimension {n} is not a perfect square"
        )));
    }
    Ok((DictionaryPair::new(d1, d2)?, patch))
}

fn load_conv_model(path: &Path) -> Result<(LlrrStackParams, Tensor, Tensor), Error> {
    let mut c = Container::load(path)?;
    if c.meta("model") != Some("llrr-conv") {
        return Err(Error::Manifest(format!(
            "model kind {:?} does not match conv mode",
            c.meta("model")
        )));
    }
    let dim = |key: &str| -> Result<usize, Error> {
        c.meta(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Manifest(format!("missing or invalid meta '{key}'")))
    };
    let (n, k, t) = (dim("n")?, dim("k")?, dim("t")?);
    let mut take = |name: String, shape: &[usize]| -> Result<Tensor, Error> {
        let tensor = c
            .take(&name)
            .ok_or_else(|| Error::Manifest(format!("missing tensor '{name}'")))?;
        if tensor.shape() != shape {
            return Err(Error::Manifest(format!(
                "tensor '{name}' has shape {:?}, expected {shape:?}",
                tensor.shape()
            )));
        }
        Ok(tensor)
    };
    let c0 = take("stack.c0".into(), &[2 * n, 1, k, k])?;
    let theta0 = take("stack.theta0".into(), &[2 * n])?;
    let mut blocks = Vec::with_capacity(t);
    for i in 0..t {
        blocks.push(lrrfuse_core::llrr::LlrrBlockParams {
            c1: take(format!("stack.b{i}.c1"), &[1, 2 * n, k, k])?,
            c2: take(format!("stack.b{i}.c2"), &[2 * n, 1, k, k])?,
            theta: take(format!("stack.b{i}.theta"), &[2 * n])?,
            lam3: take(format!("stack.b{i}.lam3"), &[1])?,
        });
    }
    let c_l = take("proj.cl".into(), &[1, n, k, k])?;
    let c_s = take("proj.cs".into(), &[1, n, k, k])?;
    Ok((LlrrStackParams { c0, theta0, blocks, n, k }, c_l, c_s))
}

fn cmd_decompose(args: &DecomposeArgs, verbose: bool) -> Result<(), Error> {
    require_file(&args.model, "model")?;
    require_file(&args.input, "input image")?;
    let img = imageio::read_gray(&args.input)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);

    let low_path = args.out_base.with_extension("lowrank.png");
    let salient_path = args.out_base.with_extension("salient.png");
    let json_path = args.out_base.with_extension("json");
    let mut guard = OutputGuard::new();
    guard.register(&low_path);
    guard.register(&salient_path);
    guard.register(&json_path);

    let sidecar = match args.mode {
        DecomposeMode::Matrix => {
            let (dict, patch) = load_matrix_model(&args.model)?;
            let (x, ph, pw) = image_to_patches(&img, patch);
            let mu = args.mu.unwrap_or_else(|| default_step_size(&dict));
            let problem = LlrrProblem::new(
                x,
                args.lambda1,
                args.lambda2,
                args.lambda3,
                mu,
                args.iters,
            )?;
            let out = llrr_decompose_matrix(&problem, &dict)?;
            let p_l = patches_to_image(&out.p_l, patch, ph, pw, h, w);
            let p_s = patches_to_image(&out.p_s, patch, ph, pw, h, w);
            imageio::write_gray(&low_path, &p_l)?;
            imageio::write_gray(&salient_path, &p_s)?;
            if verbose {
                eprintln!(
                    "matrix decomposition: {} iterations over {} patches",
                    args.iters,
                    ph * pw
                );
            }
            serde_json::json!({
                "mode": "matrix",
                "iterations": args.iters,
                "patch": patch,
                "mu": mu,
                "lambda1": args.lambda1,
                "lambda2": args.lambda2,
                "lambda3": args.lambda3,
                "iteration_objective_trace": out.iteration_objective_trace,
            })
        }
        DecomposeMode::Conv => {
            let (stack, c_l, c_s) = load_conv_model(&args.model)?;
            let z = llrr::stack_forward(&img, &stack)?;
            let (p_l, p_s) = llrr::split_project(&z, &c_l, &c_s)?;
            imageio::write_gray(&low_path, &p_l)?;
            imageio::write_gray(&salient_path, &p_s)?;
            let zero_fraction =
                z.data().iter().filter(|&&v| v == 0.0).count() as f64 / z.numel() as f64;
            if verbose {
                eprintln!(
                    "conv decomposition: {} blocks, coefficient sparsity {zero_fraction:.3}",
                    stack.depth()
                );
            }
            serde_json::json!({
                "mode": "conv",
                "iterations": stack.depth(),
                "channels_per_part": stack.n,
                "kernel": stack.k,
                "coefficient_zero_fraction": zero_fraction,
            })
        }
    };
    write_json(&json_path, &sidecar)?;
    guard.commit();
    Ok(())
}

// --------------------------------------------------------------------- fuse

fn cmd_fuse(args: &FuseArgs, verbose: bool) -> Result<(), Error> {
    require_file(&args.model, "model")?;
    require_file(&args.ir, "infrared image")?;
    require_file(&args.vi, "visible image")?;
    let params = LrrNetParams::load(&args.model)?;
    let ir = imageio::read_gray(&args.ir)?;
    let vi = imageio::read_gray(&args.vi)?;

    let mut guard = OutputGuard::new();
    guard.register(&args.out);
    let out = fuse_forward(&ir, &vi, &params)?;
    if !out.fused.all_finite() {
        return Err(Error::NonFinite("fused image".into()));
    }
    imageio::write_gray(&args.out, &out.fused)?;
    if verbose {
        eprintln!(
            "fused {}x{} pair with {} parameters",
            ir.shape()[2],
            ir.shape()[1],
            params.param_count()
        );
    }
    guard.commit();
    Ok(())
}

// -------------------------------------------------------------------- train

fn cmd_train(args: &TrainArgs, seed: Option<u64>, verbose: bool) -> Result<(), Error> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            require_file(path, "config file")?;
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Contract(format!("config file: {e}")))?
        }
        None => FileConfig::default(),
    };

    let loss = LossConfig {
        gamma1: args.gamma1.or(file.gamma1).unwrap_or(10.0),
        gamma2: args.gamma2.or(file.gamma2).unwrap_or(1.5),
        gamma4: args.gamma4.or(file.gamma4).unwrap_or(2000.0),
        beta2: args.beta2.or(file.beta2).unwrap_or(0.01),
        beta3: args.beta3.or(file.beta3).unwrap_or(0.5),
        w_ir: args.w_ir.or(file.w_ir).unwrap_or(3.0),
        w_vi: args.w_vi.or(file.w_vi).unwrap_or(0.5),
        backbone: match args.backbone_file.clone().or(file.backbone_file.clone()) {
            Some(p) => BackboneSpec::Vgg16File(p),
            None => BackboneSpec::TinyTest,
        },
    };
    let optimizer = match args
        .optimizer
        .clone()
        .or(file.optimizer.clone())
        .unwrap_or_else(|| "adam".into())
        .as_str()
    {
        "adam" => OptimizerKind::default(),
        "sgd" => OptimizerKind::Sgd,
        other => {
            return Err(Error::Contract(format!(
                "unknown optimizer '{other}' (expected adam or sgd)"
            )))
        }
    };
    let cfg = TrainConfig {
        learning_rate: args.learning_rate.or(file.learning_rate).unwrap_or(1e-5),
        epochs: args.epochs.or(file.epochs).unwrap_or(4),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(8),
        image_size: args.image_size.or(file.image_size).unwrap_or(128),
        optimizer,
        seed: seed.or(file.seed).unwrap_or(0),
        max_iters: args.max_iters.or(file.max_iters),
        checkpoint_every: args.checkpoint_every.or(file.checkpoint_every),
        checkpoint_dir: args.checkpoint_dir.clone().or(file.checkpoint_dir.clone()),
        loss,
    };
    cfg.validate()?;

    let backbone = cfg.loss.backbone.resolve()?;
    let dataset = load_dataset(&args.ir_dir, &args.vi_dir, cfg.image_size)?;
    let initial = match &args.init_model {
        Some(path) => {
            require_file(path, "model")?;
            LrrNetParams::load(path)?
        }
        None => {
            let n = args.n.or(file.n).unwrap_or(32);
            let k = args.k.or(file.k).unwrap_or(3);
            let t = args.t.or(file.t).unwrap_or(4);
            LrrNetParams::init(n, k, t, cfg.seed)?
        }
    };
    if verbose {
        eprintln!(
            "training {} parameters on {} pairs at {}px",
            initial.param_count(),
            dataset.len(),
            cfg.image_size
        );
    }

    let trace_path = args
        .trace
        .clone()
        .unwrap_or_else(|| args.out.with_extension("trace.csv"));
    let mut guard = OutputGuard::new();
    guard.register(&args.out);
    guard.register(&trace_path);

    let (params, trace) = train(&cfg, &dataset, &backbone, initial)?;
    if verbose {
        if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
            eprintln!(
                "loss {:.4} -> {:.4} over {} iterations",
                first.total,
                last.total,
                trace.len()
            );
        }
    }
    params.save(&args.out)?;
    write_trace_csv(&trace_path, &trace)?;
    guard.commit();
    Ok(())
}

// --------------------------------------------------------------------- eval

fn cmd_eval(args: &EvalArgs, verbose: bool) -> Result<(), Error> {
    let report = evaluate_dirs(&args.fused_dir, &args.ir_dir, &args.vi_dir)?;
    let table_path = args.out.with_extension("txt");
    let mut guard = OutputGuard::new();
    guard.register(&args.out);
    guard.register(&table_path);
    std::fs::write(&args.out, report.to_csv())?;
    std::fs::write(&table_path, report.to_table())?;
    if verbose || !report.rows.is_empty() {
        print!("{}", report.to_table());
    }
    guard.commit();
    Ok(())
}

// --------------------------------------------------------------- check-grad

fn cmd_check_grad(args: &CheckGradArgs, seed: u64) -> ExitCode {
    match checkgrad::run(seed, args.inject_bug) {
        Ok(report) => {
            for (name, err) in &report.entries {
                let status = if *err <= checkgrad::TOLERANCE { "ok" } else { "FAIL" };
                println!("{status:4} {name}: max relative error {err:.3e}");
            }
            if report.passed() {
                println!("all gradients within {:.0e}", checkgrad::TOLERANCE);
                ExitCode::SUCCESS
            } else {
                println!("worst relative error {:.3e}", report.worst());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

// -------------------------------------------------------------------- synth

fn cmd_synth(args: &SynthArgs, seed: u64) -> Result<(), Error> {
    synth::write_synth_dataset(&args.ir_dir, &args.vi_dir, args.count, args.size, seed)?;
    Ok(())
}

// --------------------------------------------------------------------- init

fn cmd_init(args: &InitArgs, seed: u64) -> Result<(), Error> {
    let mut guard = OutputGuard::new();
    guard.register(&args.out);
    match args.kind {
        InitKind::Net => {
            let params = LrrNetParams::init(args.n, args.k, args.t, seed)?;
            params.save(&args.out)?;
        }
        InitKind::Conv => {
            let mut chacha = ChaCha8Rng::seed_from_u64(seed);
            let stack = LlrrStackParams::init(args.n, args.k, args.t, &mut chacha)?;
            let c_l = llrr::init_kernel(vec![1, args.n, args.k, args.k], &mut chacha);
            let c_s = llrr::init_kernel(vec![1, args.n, args.k, args.k], &mut chacha);
            let mut c = Container::new();
            c.set_meta("model", "llrr-conv");
            c.set_meta("n", args.n.to_string());
            c.set_meta("k", args.k.to_string());
            c.set_meta("t", args.t.to_string());
            c.push("stack.c0", stack.c0.clone());
            c.push("stack.theta0", stack.theta0.clone());
            for (i, b) in stack.blocks.iter().enumerate() {
                c.push(format!("stack.b{i}.c1"), b.c1.clone());
                c.push(format!("stack.b{i}.c2"), b.c2.clone());
                c.push(format!("stack.b{i}.theta"), b.theta.clone());
                c.push(format!("stack.b{i}.lam3"), b.lam3.clone());
            }
            c.push("proj.cl", c_l);
            c.push("proj.cs", c_s);
            c.save(&args.out)?;
        }
        InitKind::Matrix => {
            let n = args.patch * args.patch;
            let atoms = args.atoms.unwrap_or(n);
            let mut chacha = ChaCha8Rng::seed_from_u64(seed);
            let mut unit_columns = |rows: usize, cols: usize| {
                let mut m = Mat::zeros(rows, cols);
                for j in 0..cols {
                    let mut col: Vec<f64> = (0..rows)
                        .map(|_| rng::uniform(&mut chacha, -1.0, 1.0))
                        .collect();
                    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    for v in &mut col {
                        *v = (*v / norm) as f32 as f64;
                    }
                    for (i, v) in col.iter().enumerate() {
                        m.set(i, j, *v);
                    }
                }
                m
            };
            let d1 = unit_columns(n, atoms);
            let d2 = unit_columns(n, atoms);
            let mut c = Container::new();
            c.set_meta("model", "llrr-matrix");
            c.set_meta("patch", args.patch.to_string());
            c.push("d1", Tensor::new(vec![n, atoms], d1.data().to_vec())?);
            c.push("d2", Tensor::new(vec![n, atoms], d2.data().to_vec())?);
            c.save(&args.out)?;
        }
    }
    guard.commit();
    Ok(())
}
