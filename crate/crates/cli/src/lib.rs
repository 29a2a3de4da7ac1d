//! `nanet` command-line entry points.
//!
//! Every subcommand prints a one-line JSON summary on stdout. Exit codes:
//! 0 on success, 1 for usage errors, 2 for runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nanet_core::checkpoint::Checkpoint;
use nanet_core::dataset::{
    build_dataset, Condition, DatasetManifest, NoiseSet, NoiseSpec, RenderSpec, Split, SplitSpec,
};
use nanet_core::eval::{evaluate, export_denoised, ReportFile};
use nanet_core::gradcam::grad_cam;
use nanet_core::image::ImageBuffer;
use nanet_core::model::Mode;
use nanet_core::morse::{class_letter, letter_class};
use nanet_core::train::{train_with, Preset, TrainConfig};
use nanet_core::Error;
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "nanet", version, about = "Noise-adaptive Morse-code image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the Morse image dataset and its noisy test sets.
    Synth(SynthArgs),
    /// Train a model on the clean training split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test splits and write a JSON report.
    Eval(EvalArgs),
    /// Export autoencoder outputs for the test splits as PNGs.
    Denoise(DenoiseArgs),
    /// Write a Grad-CAM heatmap for one image.
    Cam(CamArgs),
    /// Print a report file as an aligned table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    per_letter: usize,
    #[arg(long, default_value_t = 10)]
    test_per_letter: usize,
    #[arg(long, default_value_t = 512)]
    canvas: usize,
    #[arg(long, default_value_t = 0.3)]
    uniform_amp: f32,
    #[arg(long, default_value_t = 0.2)]
    gauss_sigma: f32,
    #[arg(long, default_value_t = 0.1)]
    sp_p: f32,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Nanet,
    ClassifierOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConditionArg {
    Clean,
    Uniform,
    Gaussian,
    #[value(name = "saltpepper")]
    SaltPepper,
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::Clean => Condition::Clean,
            ConditionArg::Uniform => Condition::Uniform,
            ConditionArg::Gaussian => Condition::Gaussian,
            ConditionArg::SaltPepper => Condition::SaltPepper,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    preset: PresetArg,
    #[arg(long, value_enum, default_value = "nanet")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, num_args = 1.., value_delimiter = ',')]
    conditions: Vec<ConditionArg>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CamArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "class", value_parser = parse_letter)]
    class: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn parse_letter(s: &str) -> Result<usize, String> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => letter_class(c.to_ascii_uppercase()).ok_or_else(|| format!("{s:?} is not a letter A-Z")),
        _ => Err(format!("{s:?} is not a single letter A-Z")),
    }
}

/// Parse `argv` (including the program name), run the command and return the exit code.
pub fn run<I, T>(argv: I, stdout: &mut impl Write, stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
            } else {
                let _ = write!(stdout, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stderr) {
        Ok(summary) => {
            let _ = writeln!(stdout, "{summary}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", e.kind());
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command, log: &mut impl Write) -> Result<String, Error> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, log),
        Command::Eval(a) => eval(a),
        Command::Denoise(a) => denoise(a),
        Command::Cam(a) => cam(a),
        Command::Report(a) => Ok(ReportFile::load(&a.input)?.render_table().trim_end().to_string()),
    }
}

fn synth(a: SynthArgs) -> Result<String, Error> {
    let spec = RenderSpec::for_canvas(a.canvas);
    let noise = NoiseSet {
        uniform: NoiseSpec::uniform(a.uniform_amp),
        gaussian: NoiseSpec::gaussian(a.gauss_sigma),
        saltpepper: NoiseSpec::salt_pepper(a.sp_p),
    };
    let split = SplitSpec { per_letter: a.per_letter, test_per_letter: a.test_per_letter };
    let manifest = build_dataset(&spec, &noise, split, a.seed, &a.out)?;
    let count = |split: Option<Split>, clean: bool| {
        manifest
            .items
            .iter()
            .filter(|i| split.is_none_or(|s| i.split == s) && (i.condition == Condition::Clean) == clean)
            .count()
    };
    Ok(json!({
        "command": "synth",
        "out": a.out.display().to_string(),
        "seed": a.seed,
        "clean": count(None, true),
        "train": count(Some(Split::Train), true),
        "test_clean": count(Some(Split::Test), true),
        "test_noisy": count(Some(Split::Test), false),
    })
    .to_string())
}

fn train(a: TrainArgs, log: &mut impl Write) -> Result<String, Error> {
    let manifest = DatasetManifest::load(&a.data)?;
    let preset = match a.preset {
        PresetArg::Paper => Preset::Paper,
        PresetArg::Desk => Preset::Desk,
    };
    let mut cfg = TrainConfig::preset(preset, a.seed);
    cfg.mode = match a.mode {
        ModeArg::Nanet => Mode::Nanet,
        ModeArg::ClassifierOnly => Mode::ClassifierOnly,
    };
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.image_size = a.image_size.unwrap_or(cfg.image_size);
    let (ckpt, history) = train_with(&manifest, &cfg, |s| {
        let _ = writeln!(log, "{}", serde_json::to_string(s).expect("stats serialize"));
    })?;
    ckpt.save(&a.out)?;
    let last = history.epochs.last();
    Ok(json!({
        "command": "train",
        "out": a.out.display().to_string(),
        "preset": preset.to_string(),
        "mode": cfg.mode,
        "epochs": cfg.epochs,
        "image_size": cfg.image_size,
        "initial_loss": history.initial_loss,
        "final_mse": last.and_then(|s| s.mse),
        "final_ce": last.map(|s| s.ce),
        "final_total": last.map(|s| s.total),
    })
    .to_string())
}

fn conditions_or_all(c: Vec<ConditionArg>) -> Vec<Condition> {
    if c.is_empty() {
        Condition::ALL.to_vec()
    } else {
        c.into_iter().map(Condition::from).collect()
    }
}

fn eval(a: EvalArgs) -> Result<String, Error> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let manifest = DatasetManifest::load(&a.data)?;
    let report = evaluate(&ckpt, &manifest, &conditions_or_all(a.conditions))?;
    report.write(&a.report)?;
    let accuracy: serde_json::Map<String, serde_json::Value> =
        report.to_file().entries().into_iter().map(|(c, e)| (c.name().to_string(), json!(e.accuracy))).collect();
    Ok(json!({"command": "eval", "report": a.report.display().to_string(), "accuracy": accuracy}).to_string())
}

fn denoise(a: DenoiseArgs) -> Result<String, Error> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let manifest = DatasetManifest::load(&a.data)?;
    let written = export_denoised(&ckpt, &manifest, &Condition::ALL, &a.out)?;
    Ok(json!({"command": "denoise", "out": a.out.display().to_string(), "written": written.len()}).to_string())
}

fn cam(a: CamArgs) -> Result<String, Error> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let image = ImageBuffer::read_png(&a.image)?;
    let heatmap = grad_cam(&ckpt, &image, a.class)?;
    heatmap.write_png(&a.out)?;
    Ok(json!({
        "command": "cam",
        "out": a.out.display().to_string(),
        "class": a.class.map(|c| class_letter(c).to_string()),
        "height": heatmap.height(),
        "width": heatmap.width(),
    })
    .to_string())
}
