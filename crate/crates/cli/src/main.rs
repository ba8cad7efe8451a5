use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod cmd;
mod run;
mod tables;

/// JRD prediction and JRD-driven QP allocation for machine-oriented coding.
///
/// Set DTJRD_THREADS to cap per-image parallelism (0 = single thread,
/// bitwise reproducible).
#[derive(Debug, Parser)]
#[command(name = "dtjrd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic object dataset with a known distortion-tolerance rule.
    SynthData(SynthArgs),
    /// Assign source images to train/val/test.
    MakeSplits(SplitArgs),
    /// Print (or write) one target distribution as CSV.
    Labels(LabelArgs),
    /// Fine-tune a predictor and write a checkpoint.
    Train(TrainArgs),
    /// Predict per-object JRDs with a checkpoint.
    Predict(PredictArgs),
    /// Build a CTU QP-map sidecar for one image.
    Qpmap(QpmapArgs),
    /// Code one image with the proxy codec under a QP map.
    ProxyEncode(ProxyEncodeArgs),
    /// JRD prediction error of a predictions CSV against ground truth.
    Metrics(MetricsArgs),
    /// Detection mAP at one IoU threshold.
    Map(MapArgs),
    /// Bjontegaard deltas between two rate/metric curves.
    Bdrate(BdrateArgs),
    /// Sweep base QPs and QP offsets with JRD-driven QP maps; writes one
    /// `base_qp,delta_qp,rate_bpp,metric` row per setting.
    Curve(CurveArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of objects.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train,val,test weights.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [8u32, 1, 1])]
    pub ratios: Vec<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKindArg {
    OneHot,
    Smooth,
    Gdsl,
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    #[arg(long)]
    pub mu: usize,
    #[arg(long, default_value_t = 3.0)]
    pub sigma: f64,
    /// Number of classes.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = LabelKindArg::Gdsl)]
    pub kind: LabelKindArg,
    /// Mass on the true class for `--kind smooth`.
    #[arg(long, default_value_t = 0.9)]
    pub eps: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigArg {
    Toy,
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split assignment from `make-splits`.
    #[arg(long)]
    pub splits: PathBuf,
    /// lp, ff or daft.
    #[arg(long, default_value = "daft")]
    pub strategy: String,
    #[arg(long, value_enum, default_value_t = LabelKindArg::Gdsl)]
    pub label_kind: LabelKindArg,
    #[arg(long, default_value_t = 3.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.9)]
    pub eps: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ConfigArg::Toy)]
    pub config: ConfigArg,
    /// Input side for `--config full`.
    #[arg(long, default_value_t = 384)]
    pub image_size: usize,
    /// Start from these weights (position table resized if needed).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub weight_decay: f64,
    #[arg(long)]
    pub checkpoint_out: PathBuf,
    /// Per-epoch log CSV; defaults to `<checkpoint-out>.epochs.csv`.
    #[arg(long)]
    pub log_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict to one split (needs `--splits`).
    #[arg(long, requires = "splits")]
    pub split: Option<String>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct QpmapArgs {
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    /// JSON array of `{"object_id": .., "bbox": [x, y, w, h]}`.
    #[arg(long)]
    pub bboxes: PathBuf,
    /// CSV with `object_id` and `jrd` columns.
    #[arg(long)]
    pub jrd: PathBuf,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub delta_qp: i32,
    #[arg(long)]
    pub qp_b: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProxyEncodeArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub qpmap: PathBuf,
    /// JSON coding report.
    #[arg(long)]
    pub output: PathBuf,
    /// Reconstruction PNG.
    #[arg(long)]
    pub recon: Option<PathBuf>,
    /// File receiving the decimal bit count.
    #[arg(long)]
    pub bits: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    /// Predictions CSV (`object_id`, `jrd`, optional `source_image_id`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: a CSV like `--pred`, or a JSONL manifest.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MapArgs {
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BdrateArgs {
    /// Anchor CSV with `rate_bpp` and `metric` columns.
    pub anchor: PathBuf,
    /// Test CSV, same columns.
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CurveArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predict JRDs with this checkpoint; ground-truth JRDs otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "splits")]
    pub split: Option<String>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = dtjrd_core::vcm::DEFAULT_BASE_QPS)]
    pub base_qps: Vec<u8>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true,
          default_values_t = dtjrd_core::vcm::DEFAULT_DELTA_QPS)]
    pub delta_qps: Vec<i32>,
    /// Added to every object JRD before QP assignment.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub jrd_offset: i32,
    /// External encoder template; the proxy codec is used when absent.
    #[arg(long)]
    pub encoder: Option<String>,
    /// Directory for per-setting QP maps and reconstructions.
    #[arg(long)]
    pub recon_dir: Option<PathBuf>,
    /// Also sweep uniform QP maps over the base QPs and write that table here.
    #[arg(long)]
    pub anchor_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => cmd::synth_data(&a),
        Command::MakeSplits(a) => cmd::make_splits(&a),
        Command::Labels(a) => cmd::labels(&a),
        Command::Train(a) => cmd::train(&a),
        Command::Predict(a) => cmd::predict(&a),
        Command::Qpmap(a) => cmd::qpmap(&a),
        Command::ProxyEncode(a) => cmd::proxy_encode(&a),
        Command::Metrics(a) => cmd::metrics(&a),
        Command::Map(a) => cmd::map(&a),
        Command::Bdrate(a) => cmd::bdrate(&a),
        Command::Curve(a) => cmd::curve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
