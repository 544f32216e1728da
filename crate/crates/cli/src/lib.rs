mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use portrait_core::compositor::{alpha_blend, build_kernel, gaussian_blur};
use portrait_core::fcn::seeded_default_check;
use portrait_core::image::{decode_image, encode_image, matte_from_gray, matte_to_gray};
use portrait_core::io::write_atomic;
use portrait_core::pipeline::{run_portrait, segment, PipelineConfig};
use portrait_core::train::{
    evaluate, generate_synthetic_dataset, load_checkpoint, load_dataset, save_checkpoint, save_dataset, train,
    OptimizerKind, TrainConfig,
};
use portrait_core::{FcnModel, RasterImage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "portrait", version, about = "Segment a subject, blur the background, blend it back")]
struct Cli {
    /// TOML file with default values; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a segmentation model on an image/mask directory.
    Train(TrainArgs),
    /// Generate a synthetic image/mask dataset.
    Synth(SynthArgs),
    /// Write the model's soft foreground matte as a PGM.
    Segment(SegmentArgs),
    /// Gaussian-blur an image.
    Blur(BlurArgs),
    /// Alpha-blend a foreground over a background through a PGM matte.
    Blend(BlendArgs),
    /// Full pipeline: segment, blur the background, blend the subject back.
    Portrait(PortraitArgs),
    /// Compare backpropagation against finite differences on the default network.
    Gradcheck(GradcheckArgs),
    /// Report pixel accuracy and mean foreground IoU on a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    batch: Option<usize>,
    /// Seeds both weight initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, value_name = "PX")]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "IMG")]
    input: PathBuf,
    #[arg(long, value_name = "MASK")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct BlurArgs {
    #[arg(long, value_name = "IMG")]
    input: PathBuf,
    #[arg(long, value_name = "IMG")]
    output: PathBuf,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct BlendArgs {
    #[arg(long, value_name = "IMG")]
    fg: PathBuf,
    #[arg(long, value_name = "IMG")]
    bg: PathBuf,
    #[arg(long, value_name = "PGM")]
    mask: PathBuf,
    #[arg(long, value_name = "IMG")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct PortraitArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "IMG")]
    input: PathBuf,
    #[arg(long, value_name = "IMG")]
    output: PathBuf,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_name = "PX")]
    feather: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

/// Parse `argv` (including the program name), run the command and return the
/// process exit code. Diagnostics go to stderr, results to stdout.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err:#}");
            EXIT_RUNTIME
        }
    }
}

fn read_image(path: &Path) -> anyhow::Result<RasterImage> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_image(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write_image(path: &Path, img: &RasterImage) -> anyhow::Result<()> {
    write_atomic(path, &encode_image(img)?).with_context(|| format!("writing {}", path.display()))
}

fn read_model(path: &Path) -> anyhow::Result<FcnModel> {
    let (model, _) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(model)
}

fn run(cli: Cli, out: &mut impl Write) -> anyhow::Result<()> {
    let file = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => {
            let defaults = TrainConfig::default();
            let t = file.train;
            let optimizer = match (a.optimizer, t.optimizer) {
                (Some(kind), _) => kind,
                (None, Some(name)) => name.parse().map_err(anyhow::Error::msg)?,
                (None, None) => defaults.optimizer,
            };
            let config = TrainConfig {
                epochs: a.epochs.or(t.epochs).unwrap_or(defaults.epochs),
                learning_rate: a.lr.or(t.lr).unwrap_or(defaults.learning_rate),
                optimizer,
                batch_size: a.batch.or(t.batch).unwrap_or(defaults.batch_size),
                seed: a.seed.or(t.seed).unwrap_or(defaults.seed),
                ..defaults
            };
            let dataset = load_dataset(&a.data)?;
            let outcome = train(FcnModel::with_seed(config.seed), &dataset, &config)?;
            for (epoch, loss) in outcome.history.iter().enumerate() {
                writeln!(out, "epoch {:>3}  loss {loss:.6}", epoch + 1)?;
            }
            save_checkpoint(&outcome.model, &outcome.optimizer, &a.out)?;
            writeln!(out, "saved {} ({} samples, {} steps)", a.out.display(), dataset.len(), outcome.optimizer.step())?;
        }
        Command::Synth(a) => {
            let pairs = generate_synthetic_dataset(a.count, a.size, a.seed)?;
            save_dataset(&a.out, &pairs)?;
            writeln!(out, "wrote {} pairs to {}", pairs.len(), a.out.display())?;
        }
        Command::Segment(a) => {
            let model = read_model(&a.model)?;
            let img = read_image(&a.input)?;
            let matte = segment(&model, &img)?;
            write_image(&a.output, &matte_to_gray(&matte))?;
        }
        Command::Blur(a) => {
            let sigma = a.sigma.or(file.blur.sigma).unwrap_or(PipelineConfig::default().blur_sigma);
            let kernel = build_kernel(sigma)?;
            let img = read_image(&a.input)?;
            write_image(&a.output, &gaussian_blur(&img, &kernel))?;
        }
        Command::Blend(a) => {
            let fg = read_image(&a.fg)?;
            let bg = read_image(&a.bg)?;
            let mask = read_image(&a.mask)?;
            let matte = matte_from_gray(&mask).with_context(|| format!("reading matte {}", a.mask.display()))?;
            write_image(&a.output, &alpha_blend(&fg, &bg, &matte)?)?;
        }
        Command::Portrait(a) => {
            let defaults = PipelineConfig::default();
            let p = file.portrait;
            let config = PipelineConfig {
                model_path: Some(a.model.clone()),
                blur_sigma: a.sigma.or(p.sigma).unwrap_or(defaults.blur_sigma),
                feather_radius: a.feather.or(p.feather).unwrap_or(defaults.feather_radius),
                mask_threshold: a.threshold.or(p.threshold).unwrap_or(defaults.mask_threshold),
            };
            config.validate()?;
            let model = read_model(&a.model)?;
            let img = read_image(&a.input)?;
            write_image(&a.output, &run_portrait(&img, &model, &config)?)?;
        }
        Command::Gradcheck(a) => {
            let report = seeded_default_check(a.seed, 16, 1e-3, 1e-3)?;
            writeln!(
                out,
                "checked {} parameters: max relative error {:.3e} (tolerance {:.0e}), {} kinked probes",
                report.checks.len(),
                report.max_rel_error,
                report.tolerance,
                report.kinked()
            )?;
            if !report.passed() {
                bail!("{} gradients exceed the tolerance", report.failures.len());
            }
        }
        Command::Eval(a) => {
            let model = read_model(&a.model)?;
            let dataset = load_dataset(&a.data)?;
            let m = evaluate(&model, &dataset, a.threshold)?;
            writeln!(out, "pixel_accuracy {:.6}\nmean_iou {:.6}", m.pixel_accuracy, m.mean_iou)?;
        }
    }
    Ok(())
}
