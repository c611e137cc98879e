//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for runtime or data errors (reported on
//! stderr with an `ERROR:` prefix), 2 for usage errors.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{
    apply_normalizer, extract, fit_normalizer, pca_apply, pca_fit, stack_context, EdgePolicy, StackSpec,
    StackedDataset,
};
use crate::io::{container_tag, read_frames, write_features, FRAME_MAGIC};
use crate::model::{ModelKind, ModelParams};
use crate::model_file::{load_model, load_pca, save_model, save_pca, ModelFile, Provenance, MODEL_TAG, PCA_TAG};
use crate::oracle::{exact_loglik, random_model, sample_dataset};
use crate::training::{init_params, train, Algorithm, BGradientSign, BNormalization, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "mgrbm", version, about = "Train RBM-family models and extract hidden-posterior features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Rbm,
    Grbm,
    Mgrbm,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Rbm => ModelKind::Rbm,
            KindArg::Grbm => ModelKind::Grbm,
            KindArg::Mgrbm => ModelKind::Mgrbm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgoArg {
    Cd,
    Pcd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BNormArg {
    TraceD,
    Trace1,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BSignArg {
    Energy,
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EdgeArg {
    Replicate,
    ZeroPad,
    Drop,
}

impl From<EdgeArg> for EdgePolicy {
    fn from(e: EdgeArg) -> Self {
        match e {
            EdgeArg::Replicate => EdgePolicy::Replicate,
            EdgeArg::ZeroPad => EdgePolicy::ZeroPad,
            EdgeArg::Drop => EdgePolicy::Drop,
        }
    }
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "grbm")]
    model: KindArg,
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9)]
    context: usize,
    #[arg(long, value_enum, default_value = "replicate")]
    edge: EdgeArg,
    #[arg(long, default_value_t = 1024)]
    hidden: usize,
    #[arg(long, value_enum, default_value = "pcd")]
    algo: AlgoArg,
    /// Gibbs sweeps per CD estimate.
    #[arg(long, default_value_t = 1)]
    cd_k: usize,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Fantasy particles for PCD (defaults to the batch size).
    #[arg(long)]
    particles: Option<usize>,
    /// Learning rate for weights and biases.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Separate learning rate for biases (defaults to --lr).
    #[arg(long)]
    lr_bias: Option<f64>,
    #[arg(long, default_value_t = 0.0001)]
    lr_b: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "trace-d")]
    b_norm: BNormArg,
    #[arg(long, value_enum, default_value = "energy")]
    b_sign: BSignArg,
    /// Skip per-dimension normalization of the stacked input.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a frame file.
    Train(Box<TrainArgs>),
    /// Write the hidden posteriors of every frame's context window.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Expected context length; must match the model's.
        #[arg(long)]
        context: Option<usize>,
    },
    /// Fit a PCA projection and report eigenvalue coverage.
    PcaFit {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 39)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project features with a fitted PCA.
    PcaApply {
        #[arg(long)]
        pca: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample synthetic visible vectors from a model (saved or randomly drawn).
    Synth {
        /// Generator model file; when absent a random generator is drawn.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "grbm")]
        kind: KindArg,
        #[arg(long, default_value_t = 6)]
        units: usize,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        hidden: usize,
        #[arg(long, default_value_t = 1.0)]
        weight_scale: f64,
        /// Where to save a randomly drawn generator.
        #[arg(long)]
        save_generator: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 10)]
        thin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact mean log-likelihood of frames under a small model.
    Loglik {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Treat rows as visible vectors, skipping stacking and normalization.
        #[arg(long)]
        raw: bool,
    },
    /// Summarize a model, PCA or frame file.
    Inspect { path: PathBuf },
}

/// Runs the CLI with `argv[0]` as the program name, printing to stdout/stderr.
pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_io(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with_io(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "ERROR: {e}");
            1
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(*args, out),
        Command::Extract { model, frames, out: path, context } => cmd_extract(model, frames, path, context, out),
        Command::PcaFit { features, dim, out: path } => {
            let feats = read_frames(&features)?;
            let pca = pca_fit(feats.data.view(), dim)?;
            save_pca(&path, &pca)?;
            writeln!(out, "{}", pca.report())?;
            Ok(())
        }
        Command::PcaApply { pca, features, out: path } => {
            let pca = load_pca(&pca)?;
            let feats = read_frames(&features)?;
            let reduced = pca_apply(&pca, feats.data.view())?;
            write_features(&path, reduced.view())?;
            writeln!(out, "wrote {}×{} reduced features", reduced.nrows(), reduced.ncols())?;
            Ok(())
        }
        Command::Synth {
            model,
            kind,
            units,
            dim,
            hidden,
            weight_scale,
            save_generator,
            n,
            burn_in,
            thin,
            seed,
            out: path,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let generator = match model {
                Some(p) => load_model(p)?.model,
                None => {
                    let kind: ModelKind = kind.into();
                    let m = random_model(kind, units, dim, hidden, weight_scale, &mut rng)?;
                    if let Some(gen_path) = save_generator {
                        let stack = StackSpec {
                            context: if kind == ModelKind::Mgrbm { dim } else { 1 },
                            layout: StackSpec::layout_for(kind),
                            edge: EdgePolicy::Replicate,
                        };
                        save_model(gen_path, &ModelFile { model: m.clone(), stack, norm: None, provenance: None })?;
                    }
                    m
                }
            };
            let sampled = sample_dataset(&generator, n, burn_in, thin, &mut rng)?;
            write_features(&path, sampled.data.view())?;
            writeln!(
                out,
                "sampled {} {}-dim visible vectors from a {} (burn-in {}, thin {})",
                n,
                generator.visible_dim(),
                generator.kind(),
                burn_in,
                sampled.provenance.thin
            )?;
            Ok(())
        }
        Command::Loglik { model, frames, raw } => {
            let file = load_model(&model)?;
            let frames = read_frames(&frames)?;
            let data = if raw {
                frames.data
            } else {
                model_input(&file, &frames)?.data
            };
            let ll = exact_loglik(&file.model, data.view())?;
            writeln!(out, "loglik: {ll:.6} per example ({} examples)", data.nrows())?;
            Ok(())
        }
        Command::Inspect { path } => cmd_inspect(path, out),
    }
}

/// Stacks raw frames the way the model was trained and applies its stored
/// normalizer.
fn model_input(file: &ModelFile, frames: &crate::features::FrameMatrix) -> Result<StackedDataset> {
    let mut stacked = stack_context(frames, &file.stack)?;
    if stacked.data.ncols() != file.model.visible_dim() {
        return Err(Error::Shape(format!(
            "frames stack to {} values per window, model expects {}",
            stacked.data.ncols(),
            file.model.visible_dim()
        )));
    }
    if let Some(norm) = &file.norm {
        stacked.data = apply_normalizer(norm, stacked.data.view())?;
    }
    Ok(stacked)
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let kind: ModelKind = args.model.into();
    let config = TrainConfig {
        algorithm: match args.algo {
            AlgoArg::Cd => Algorithm::Cd { k: args.cd_k },
            AlgoArg::Pcd => Algorithm::Pcd,
        },
        batch_size: args.batch,
        epochs: args.epochs,
        lr_weights: args.lr,
        lr_biases: args.lr_bias.unwrap_or(args.lr),
        lr_b: args.lr_b,
        momentum: args.momentum,
        particle_count: args.particles.unwrap_or(args.batch),
        seed: args.seed,
        b_normalization: match args.b_norm {
            BNormArg::TraceD => BNormalization::TraceD,
            BNormArg::Trace1 => BNormalization::Trace1,
            BNormArg::Off => BNormalization::Off,
        },
        b_gradient_sign: match args.b_sign {
            BSignArg::Energy => BGradientSign::EnergyDerived,
            BSignArg::Paper => BGradientSign::PaperLiteral,
        },
        workers: args.workers,
    };
    config.validate()?;
    let stack = StackSpec { context: args.context, layout: StackSpec::layout_for(kind), edge: args.edge.into() };

    let frames = read_frames(&args.frames)?;
    let mut stacked = stack_context(&frames, &stack)?;
    // binary inputs stay binary
    let norm = if args.no_normalize || kind == ModelKind::Rbm {
        None
    } else {
        let stats = fit_normalizer(stacked.data.view())?;
        stacked.data = apply_normalizer(&stats, stacked.data.view())?;
        Some(stats)
    };

    let (units, dim) = match kind {
        ModelKind::Mgrbm => (frames.dim(), args.context),
        _ => (stacked.data.ncols(), 1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let init = init_params(kind, units, dim, args.hidden, &mut rng)?;
    let (model, history) = train(&init, stacked.data.view(), &config)?;

    let shape = match &model {
        ModelParams::Mgrbm(p) => format!("{} units × {} dims", p.units(), p.dim()),
        m => format!("{} visible", m.visible_dim()),
    };
    writeln!(out, "trained {kind}: {shape} / {} hidden, {} epochs", model.hidden_dim(), history.epochs.len())?;
    if let Some(last) = history.epochs.last() {
        writeln!(out, "final reconstruction error: {:.6}", last.recon_error)?;
    }
    let file = ModelFile {
        model,
        stack,
        norm,
        provenance: Some(Provenance {
            config,
            epochs_completed: history.epochs.len(),
            source: frames.source.clone(),
        }),
    };
    save_model(&args.out, &file)?;
    Ok(())
}

fn cmd_extract(
    model: PathBuf,
    frames: PathBuf,
    path: PathBuf,
    context: Option<usize>,
    out: &mut dyn Write,
) -> Result<()> {
    let file = load_model(&model)?;
    if let Some(c) = context {
        if c != file.stack.context {
            return Err(Error::Layout(format!(
                "model was trained with a {}-frame context, --context {} requested",
                file.stack.context, c
            )));
        }
    }
    let frames = read_frames(&frames)?;
    let stacked = model_input(&file, &frames)?;
    let feats = extract(&file.model, &stacked)?;
    write_features(&path, feats.view())?;
    writeln!(out, "wrote {}×{} features", feats.nrows(), feats.ncols())?;
    Ok(())
}

fn cmd_inspect(path: PathBuf, out: &mut dyn Write) -> Result<()> {
    let head = crate::io::read_bytes(&path)?;
    if head.starts_with(FRAME_MAGIC) || path.extension().is_some_and(|e| e == "csv") {
        let m = read_frames(&path)?;
        writeln!(out, "matrix: {} rows × {} columns", m.frames(), m.dim())?;
        return Ok(());
    }
    match container_tag(&path)?.as_deref() {
        Some(MODEL_TAG) => {
            let file = load_model(&path)?;
            let shape = match &file.model {
                ModelParams::Mgrbm(p) => format!("{} units × {} dims", p.units(), p.dim()),
                m => format!("{} visible", m.visible_dim()),
            };
            writeln!(out, "model: {} ({shape} / {} hidden)", file.model.kind(), file.model.hidden_dim())?;
            writeln!(
                out,
                "context: {} frames, layout {:?}, edge {:?}",
                file.stack.context, file.stack.layout, file.stack.edge
            )?;
            writeln!(out, "normalized input: {}", if file.norm.is_some() { "yes" } else { "no" })?;
            if let Some(p) = &file.provenance {
                writeln!(out, "trained: {} epochs, seed {}, source {}", p.epochs_completed, p.config.seed, p.source)?;
            }
            writeln!(out, "checksum: ok")?;
        }
        Some(PCA_TAG) => {
            let pca = load_pca(&path)?;
            writeln!(out, "pca: {} → {} dims", pca.input_dim(), pca.output_dim())?;
            writeln!(out, "{}", pca.report())?;
        }
        _ => return Err(Error::Format("unrecognized file type".into())),
    }
    Ok(())
}
