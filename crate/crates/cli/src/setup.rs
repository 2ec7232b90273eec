//! Shared plumbing: detector pools, mask settings and dataset targets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use drise::coco::CocoDataset;
use drise::detector::synthetic::{BiasedDetector, EchoConfig, EchoDetector, MarkerBias, RectangleDetector, RectangleParams};
use drise::detector::SessionOptions;
use drise::{BBox, Detector, DetectorHandle, Handshake, MaskSpec, Normalization, SimilarityConfig};
use log::info;
use serde::Serialize;

use crate::args::{DetectorArgs, MaskArgs, NormalizationArg, SynthMode};
use crate::error::CliError;

pub type DetectorPool = Vec<Box<dyn Detector>>;

/// One in-process synthetic detector.
pub fn synthetic_detector(mode: SynthMode, seed: u64, echo_config: Option<&Path>) -> Result<Box<dyn Detector>, CliError> {
    if echo_config.is_some() && mode != SynthMode::Echo {
        return Err(CliError::Usage("--echo-config is only used in echo mode".into()));
    }
    Ok(match mode {
        SynthMode::Rectangle => Box::new(RectangleDetector::new(RectangleParams::default())?),
        SynthMode::Random => Box::new(RectangleDetector::new(RectangleParams::default().randomized(seed))?),
        SynthMode::Biased => Box::new(BiasedDetector::new(RectangleParams::default(), MarkerBias::default())?),
        SynthMode::Echo => {
            let path = echo_config.ok_or_else(|| CliError::Usage("echo mode needs --echo-config".into()))?;
            let text = std::fs::read_to_string(path).map_err(CliError::file(path))?;
            let cfg: EchoConfig = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Box::new(EchoDetector::new(cfg)?)
        }
    })
}

pub fn build_detectors(args: &DetectorArgs) -> Result<DetectorPool, CliError> {
    let n = args.detector_procs as usize;
    match (args.builtin_synth, args.command.is_empty()) {
        (true, false) => Err(CliError::Usage("give either --builtin-synth or a detector command, not both".into())),
        (false, true) => Err(CliError::Usage("no detector: pass --builtin-synth or `-- <command...>`".into())),
        (true, true) => {
            (0..n).map(|_| synthetic_detector(args.synth.synth_mode, args.synth.synth_seed, args.synth.echo_config.as_deref())).collect()
        }
        (false, false) => {
            let secs =
                |s: f64, what: &str| Duration::try_from_secs_f64(s).map_err(|_| CliError::Usage(format!("invalid {what} timeout {s}")));
            let options = SessionOptions {
                handshake_timeout: secs(args.handshake_timeout_secs, "handshake")?,
                request_timeout: secs(args.request_timeout_secs, "request")?,
            };
            let pool = DetectorHandle::spawn_pool(&args.command, n, options)?;
            info!("spawned {} detector session(s): {}", pool.len(), args.command.join(" "));
            Ok(pool.into_iter().map(|h| Box::new(h) as Box<dyn Detector>).collect())
        }
    }
}

pub fn handshake_of(pool: &DetectorPool) -> Result<Handshake, CliError> {
    let first = pool.first().ok_or_else(|| CliError::Internal("empty detector pool".into()))?;
    if let Some(other) = pool.iter().find(|d| d.handshake() != first.handshake()) {
        return Err(CliError::Usage(format!(
            "detector sessions disagree on their handshake: {:?} vs {:?}",
            first.handshake(),
            other.handshake()
        )));
    }
    Ok(first.handshake().clone())
}

pub fn mask_spec(args: &MaskArgs) -> Result<MaskSpec, CliError> {
    let [h, w] = args.grid[..] else {
        return Err(CliError::Usage("--grid takes two values".into()));
    };
    MaskSpec::new(h, w, args.prob, args.masks as usize, args.seed).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn normalization(args: &MaskArgs) -> Normalization {
    match args.normalization {
        NormalizationArg::Exposure => Normalization::Exposure,
        NormalizationArg::Raw => Normalization::Raw,
    }
}

pub fn similarity_config(args: &MaskArgs) -> SimilarityConfig {
    SimilarityConfig { use_objectness: !args.no_objectness }
}

/// Prints the resolved configuration so a run can be repeated exactly.
pub fn print_config<T: Serialize>(command: &str, args: &T) -> Result<(), CliError> {
    eprintln!("drise {command} config: {}", serde_json::to_string(args)?);
    Ok(())
}

pub fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::file(dir))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(CliError::file(path))
}

/// One annotated box to evaluate or aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetItem {
    pub image_id: u64,
    /// Position among the image's annotations.
    pub target_idx: usize,
    pub bbox: BBox,
    pub class_index: usize,
}

#[derive(Debug)]
pub struct DatasetImage {
    pub image_id: u64,
    pub path: PathBuf,
    pub items: Vec<DatasetItem>,
}

/// Groups annotations by image and maps categories onto the detector's class
/// list. Categories are matched by name when the file lists them; otherwise
/// category ids are taken as class indices. Every missing image file is
/// reported at once.
pub fn load_dataset(annotations: &Path, images_dir: &Path, handshake: &Handshake) -> Result<Vec<DatasetImage>, CliError> {
    let coco = CocoDataset::load(annotations).map_err(|e| CliError::Usage(format!("{}: {e}", annotations.display())))?;
    let by_name: BTreeMap<&str, usize> = handshake.class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let class_of = |category_id: u64| -> Result<usize, CliError> {
        if coco.categories.is_empty() {
            let idx = category_id as usize;
            return (idx < handshake.class_count())
                .then_some(idx)
                .ok_or_else(|| CliError::Usage(format!("category id {category_id} is not a detector class index")));
        }
        let name = coco
            .category_name(category_id)
            .ok_or_else(|| CliError::Usage(format!("category id {category_id} is not listed in categories")))?;
        by_name
            .get(name)
            .copied()
            .ok_or_else(|| CliError::Usage(format!("category `{name}` is not among detector classes {:?}", handshake.class_names)))
    };

    let groups = coco.by_image();
    let mut images = Vec::new();
    let mut missing = Vec::new();
    let mut sorted: Vec<_> = coco.images.iter().collect();
    sorted.sort_by_key(|i| i.id);
    for img in sorted {
        let path = images_dir.join(&img.file_name);
        if !path.is_file() {
            missing.push(path.display().to_string());
            continue;
        }
        let items = groups[&img.id]
            .iter()
            .enumerate()
            .map(|(target_idx, a)| {
                Ok(DatasetItem { image_id: img.id, target_idx, bbox: a.corners()?, class_index: class_of(a.category_id)? })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        images.push(DatasetImage { image_id: img.id, path, items });
    }
    if !missing.is_empty() {
        return Err(CliError::Usage(format!("{} image file(s) missing:\n  {}", missing.len(), missing.join("\n  "))));
    }
    if images.iter().all(|i| i.items.is_empty()) {
        return Err(CliError::Usage(format!("{} has no annotated boxes", annotations.display())));
    }
    Ok(images)
}

pub fn map_file_name(image_id: u64, target_idx: usize) -> String {
    format!("{image_id}_{target_idx}_raw.drsm")
}
