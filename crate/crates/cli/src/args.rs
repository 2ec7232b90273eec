use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "drise", version, about = "Saliency maps for any object detector, from masked queries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Saliency maps for chosen targets in one image.
    Explain(ExplainArgs),
    /// Pointing game and deletion/insertion AUC over an annotated dataset.
    Eval(EvalArgs),
    /// Per-class average saliency maps over an annotated dataset.
    Aggregate(AggregateArgs),
    /// Copy a dataset, painting a marker at a corner of every target-category box.
    BiasInject(BiasInjectArgs),
    /// Serve a built-in synthetic detector over the stdio protocol.
    SynthDetector(SynthDetectorArgs),
    /// Write a dataset of rectangle scenes with annotations.
    SynthDataset(SynthDatasetArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    /// Color-keyed rectangle detector.
    Rectangle,
    /// Rectangle detector that also fires on blue discs.
    Biased,
    /// Rectangle detector with random class colors.
    Random,
    /// Fixed detections from `--echo-config`.
    Echo,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthMode::Rectangle)]
    pub synth_mode: SynthMode,
    /// Seed for `random` mode colors.
    #[arg(long, default_value_t = 0)]
    pub synth_seed: u64,
    /// JSON file for `echo` mode: class_names, has_objectness, adapter_info, detections.
    #[arg(long)]
    pub echo_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DetectorArgs {
    /// Run a synthetic detector in-process instead of spawning one.
    #[arg(long)]
    pub builtin_synth: bool,
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Detector sessions to run concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=256))]
    pub detector_procs: u64,
    #[arg(long, default_value_t = 60.0)]
    pub handshake_timeout_secs: f64,
    #[arg(long, default_value_t = 120.0)]
    pub request_timeout_secs: f64,
    /// Detector command line, after `--`.
    #[arg(last = true, value_name = "COMMAND")]
    pub command: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationArg {
    /// Divide by per-pixel mask coverage.
    Exposure,
    /// Plain weighted sum of masks.
    Raw,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MaskArgs {
    #[arg(long, default_value_t = 5000, value_parser = clap::value_parser!(u64).range(1..))]
    pub masks: u64,
    #[arg(long, default_value_t = 0.5)]
    pub prob: f64,
    /// Mask grid rows and columns.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [16u32, 16])]
    pub grid: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Masks claimed per worker at a time.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, value_enum, default_value_t = NormalizationArg::Exposure)]
    pub normalization: NormalizationArg,
    /// Leave the objectness factor out of the similarity.
    #[arg(long)]
    pub no_objectness: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetArg {
    pub bbox: [f64; 4],
    pub class_index: usize,
}

pub fn parse_target(s: &str) -> Result<TargetArg, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(format!("expected x1,y1,x2,y2,class but got `{s}`"));
    }
    let mut bbox = [0.0; 4];
    for (slot, p) in bbox.iter_mut().zip(&parts[..4]) {
        *slot = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    let class_index = parts[4].parse().map_err(|_| format!("`{}` is not a class index", parts[4]))?;
    Ok(TargetArg { bbox, class_index })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Box and class to explain, as x1,y1,x2,y2,class (repeatable).
    #[arg(long = "target", value_parser = parse_target, required_unless_present = "from_detector")]
    pub targets: Vec<TargetArg>,
    /// Explain the detector's own detections on the image.
    #[arg(long, conflicts_with = "targets")]
    pub from_detector: bool,
    /// With --from-detector, keep this many highest-scoring detections.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f32,
    #[command(flatten)]
    pub mask: MaskArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineArg {
    Black,
    Blur,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DatasetArgs {
    /// COCO-style annotation JSON.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub images_dir: PathBuf,
    /// Read maps named `<image_id>_<target_idx>_raw.drsm` from here instead of computing them.
    #[arg(long)]
    pub saliency_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Deletion/insertion steps.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(2..))]
    pub steps: u64,
    #[arg(long, value_enum, default_value_t = BaselineArg::Black)]
    pub baseline: BaselineArg,
    #[arg(long, default_value_t = 10.0)]
    pub blur_sigma: f32,
    /// Also write every computed map under `<out>/maps`.
    #[arg(long)]
    pub save_maps: bool,
    #[command(flatten)]
    pub mask: MaskArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the average image crops.
    #[arg(long)]
    pub no_mean_image: bool,
    #[command(flatten)]
    pub mask: MaskArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CornerArg {
    TopLeft,
    TopRight,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BiasInjectArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub images_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Category id that receives markers.
    #[arg(long)]
    pub category: u64,
    #[arg(long, value_enum, default_value_t = CornerArg::TopLeft)]
    pub corner: CornerArg,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..))]
    pub radius: u32,
    /// Marker color as r,g,b (default depends on the corner).
    #[arg(long, value_parser = parse_rgb)]
    pub color: Option<[u8; 3]>,
}

pub fn parse_rgb(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected r,g,b but got `{s}`"));
    }
    let mut rgb = [0u8; 3];
    for (slot, p) in rgb.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| format!("`{p}` is not a channel value in 0..=255"))?;
    }
    Ok(rgb)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthDetectorArgs {
    #[arg(long, value_enum, default_value_t = SynthMode::Rectangle)]
    pub mode: SynthMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub echo_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: u64,
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    #[arg(long, default_value_t = 64)]
    pub height: u32,
    /// Rectangles per image.
    #[arg(long, default_value_t = 1)]
    pub objects: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
