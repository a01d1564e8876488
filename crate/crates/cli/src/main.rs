use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};
use log::info;

use hifigaze::harness::{
    bench, build_report, extract_features, loocv_eval, read_features, write_features, write_plots, EvalConfig,
    ExtractOptions, FeaturesMeta, HarnessError, ReportSet,
};
use hifigaze::regressor::{train, TrainConfig, VariantSpec};
use hifigaze::simulator::dataset::{gen_dataset, CorpusConfig, Manifest};
use hifigaze::simulator::CameraPosition;
use hifigaze::GazeModel;

#[derive(Parser)]
#[command(name = "hifigaze", version, about = "Screen-reflection gaze estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a simulated corpus (eye frames, screens, manifest.json).
    Gen(GenArgs),
    /// Run iris refinement and reflection matching over a manifest.
    Extract(ExtractArgs),
    /// Train one variant on every row of a features directory.
    Train(TrainArgs),
    /// Leave-one-participant-out evaluation into a JSON report.
    Eval(EvalArgs),
    /// Per-stage timings on the first frames of a manifest.
    Bench(BenchArgs),
    /// Render SVG plots from a report.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 6)]
    participants: usize,
    #[arg(long, default_value_t = 6)]
    sessions: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "top")]
    camera: CameraPosition,
    #[arg(long, default_value_t = 0.1)]
    dark_prob: f64,
    /// Sensor noise sigma in luma levels.
    #[arg(long, default_value_t = 3.0)]
    noise: f64,
    /// Keep every n-th non-warmup frame.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write segmentation masks under OUT/masks.
    #[arg(long)]
    dump_masks: bool,
    /// Thumbnail blur sigma in screen pixels.
    #[arg(long, default_value_t = ExtractOptions::default().blur_sigma)]
    blur_sigma: f64,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    variant: VariantSpec,
    #[command(flatten)]
    opts: TrainOpts,
    /// Output directory for model.hfm and history.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    features: PathBuf,
    /// Leave-one-participant-out cross-validation (the only protocol).
    #[arg(long, required = true)]
    loocv: bool,
    /// Variant to evaluate; repeat for several. Defaults to all eight.
    #[arg(long)]
    variant: Vec<VariantSpec>,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    /// Trained model; a fresh eb+ec+hm+rv network otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

type Res = Result<(), Box<dyn std::error::Error>>;

fn write_text(path: &Path, text: &str) -> Res {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn run_gen(a: GenArgs) -> Res {
    let cfg = CorpusConfig {
        n_participants: a.participants,
        sessions: a.sessions,
        seed: a.seed,
        camera: a.camera,
        dark_prob: a.dark_prob,
        noise_sigma: a.noise,
        frame_stride: a.stride,
        ..CorpusConfig::default()
    };
    let m = gen_dataset(&cfg, &a.out)?;
    info!("wrote {} frames to {}", m.rows.len(), a.out.display());
    Ok(())
}

fn run_extract(a: ExtractArgs) -> Res {
    let manifest = Manifest::read(&a.manifest)?;
    let camera = manifest.rows.first().map_or(CameraPosition::Top, |r| r.camera);
    let opts = ExtractOptions {
        dump_masks: a.dump_masks.then(|| a.out.join("masks")),
        blur_sigma: a.blur_sigma,
    };
    let rows = extract_features(&a.manifest, &opts)?;
    write_features(&rows, &a.out)?;
    FeaturesMeta { camera, rows: rows.len() }.write(&a.out)?;
    let degraded = rows.iter().filter(|r| r.degraded).count();
    info!("{} rows, {degraded} degraded", rows.len());
    Ok(())
}

fn run_train(a: TrainArgs) -> Res {
    let rows = read_features(&a.features)?;
    let data: Vec<_> = rows.iter().map(|r| &r.bundle).collect();
    let truth: Vec<_> = rows.iter().map(|r| r.gaze_px).collect();
    let (model, history) = train(&data, &truth, a.variant, &a.opts.config())?;
    fs::create_dir_all(&a.out)?;
    model.write(&a.out.join("model.hfm"))?;
    history.write_csv(&a.out.join("history.csv"))?;
    info!("final loss {:.2} px", history.epoch_loss.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn run_eval(a: EvalArgs) -> Res {
    let rows = read_features(&a.features)?;
    let camera = FeaturesMeta::read(&a.features).map_or(CameraPosition::Top, |m| m.camera);
    let variants = if a.variant.is_empty() { VariantSpec::ALL.to_vec() } else { a.variant };
    let cfg = EvalConfig { train: a.opts.config() };
    let mut evals = Vec::new();
    for v in variants {
        info!("evaluating {v}");
        evals.push(loocv_eval(&rows, v, &cfg)?);
    }
    let report = build_report(&rows, camera.as_str(), &evals, &cfg.train)?;
    write_text(&a.report, &report.to_json())
}

fn run_bench(a: BenchArgs) -> Res {
    let model = a.model.as_deref().map(GazeModel::read).transpose()?;
    let r = bench(&a.manifest, a.frames, model.as_ref())?;
    let json = serde_json::to_string_pretty(&r)? + "\n";
    match a.out {
        Some(p) => write_text(&p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn run_plot(a: PlotArgs) -> Res {
    let text = fs::read_to_string(&a.report).map_err(|e| format!("{}: {e}", a.report.display()))?;
    let report: ReportSet = serde_json::from_str(&text).map_err(|e| HarnessError::Invalid(format!("{}: {e}", a.report.display())))?;
    for p in write_plots(&report, &a.out)? {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let res = match cli.cmd {
        Command::Gen(a) => run_gen(a),
        Command::Extract(a) => run_extract(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => run_bench(a),
        Command::Plot(a) => run_plot(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
