use std::path::{Path, PathBuf};

use drise::engine::StageTiming;
use drise::io::{drsm_bytes, load_image};
use drise::{explain, BBox, Detector, ExplainRequest, ImageTensor, Raster, SaliencyMeta, TargetDetection};
use log::info;
use serde::Serialize;

use crate::args::ExplainArgs;
use crate::error::CliError;
use crate::render::{render_heatmap, RenderMode};
use crate::setup::{build_detectors, create_out_dir, handshake_of, mask_spec, normalization, print_config, similarity_config, write_file};

#[derive(Debug, Clone, Serialize)]
pub struct TargetRecord {
    pub index: usize,
    pub bbox: [f64; 4],
    pub class_index: usize,
    pub class_name: String,
    /// Detector confidence when the target came from `--from-detector`.
    pub confidence: Option<f64>,
    pub saliency_png: PathBuf,
    pub overlay_png: PathBuf,
    pub raw: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainMeta {
    pub image: PathBuf,
    pub width: u32,
    pub height: u32,
    pub saliency: SaliencyMeta,
    pub use_objectness: bool,
    pub detector: serde_json::Value,
    pub detector_sessions: usize,
    pub detector_calls: usize,
    pub timing: StageTiming,
    pub targets: Vec<TargetRecord>,
    pub weights: PathBuf,
}

pub(crate) fn load_input_image(path: &Path) -> Result<ImageTensor, CliError> {
    load_image(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn detector_targets(
    image: &ImageTensor,
    detector: &mut dyn Detector,
    top_k: usize,
    use_objectness: bool,
) -> Result<Vec<(TargetDetection, f64)>, CliError> {
    let mut dets: Vec<(TargetDetection, f64)> = detector
        .infer(image)?
        .iter()
        .map(|d| {
            let t = TargetDetection::from_detection(d);
            let o = if use_objectness { d.objectness } else { 1.0 };
            (t, o * d.scores[t.class_index])
        })
        .collect();
    dets.sort_by(|a, b| b.1.total_cmp(&a.1));
    dets.truncate(top_k);
    if dets.is_empty() {
        return Err(CliError::Usage("--from-detector: the detector found nothing in the image".into()));
    }
    Ok(dets)
}

fn write_map_outputs(
    out: &Path,
    index: usize,
    map: &Raster,
    image: &ImageTensor,
    alpha: f32,
) -> Result<(PathBuf, PathBuf, PathBuf), CliError> {
    let sal = out.join(format!("{index}_saliency.png"));
    let over = out.join(format!("{index}_overlay.png"));
    let raw = out.join(format!("{index}_raw.drsm"));
    write_file(&sal, render_heatmap(map, RenderMode::Colormap, None)?)?;
    write_file(&over, render_heatmap(map, RenderMode::Overlay { alpha }, Some(image))?)?;
    write_file(&raw, drsm_bytes(map))?;
    Ok((sal, over, raw))
}

/// Writes per target `<i>_saliency.png`, `<i>_overlay.png` and
/// `<i>_raw.drsm`, plus `weights.json` and `meta.json`, under `--out`.
pub fn cmd_explain(args: &ExplainArgs) -> Result<ExplainMeta, CliError> {
    print_config("explain", args)?;
    let spec = mask_spec(&args.mask)?;
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(CliError::Usage(format!("--alpha must be in [0,1], got {}", args.alpha)));
    }
    let image = load_input_image(&args.image)?;
    let mut pool = build_detectors(&args.detector)?;
    let handshake = handshake_of(&pool)?;
    let sim_cfg = similarity_config(&args.mask);

    let targets: Vec<(TargetDetection, Option<f64>)> = if args.from_detector {
        detector_targets(&image, pool[0].as_mut(), args.top_k, sim_cfg.use_objectness)?.into_iter().map(|(t, c)| (t, Some(c))).collect()
    } else {
        args.targets
            .iter()
            .map(|t| {
                let [x1, y1, x2, y2] = t.bbox;
                let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| CliError::Usage(format!("--target: {e}")))?;
                let target = TargetDetection::new(bbox, t.class_index, handshake.class_count())
                    .map_err(|e| CliError::Usage(format!("--target: {e}")))?;
                Ok((target, None))
            })
            .collect::<Result<_, CliError>>()?
    };

    let mut req = ExplainRequest::new(image.clone(), targets.iter().map(|t| t.0).collect(), spec);
    req.sim_cfg = sim_cfg;
    req.parallelism = pool.len();
    req.batch_size = args.mask.batch_size as usize;
    req.normalization = normalization(&args.mask);
    info!("explaining {} target(s) with {} masks", req.targets.len(), spec.count);
    let result = explain(&req, &mut pool)?;

    create_out_dir(&args.out)?;
    let mut records = Vec::new();
    for (i, ((target, confidence), map)) in targets.iter().zip(&result.maps).enumerate() {
        let (saliency_png, overlay_png, raw) = write_map_outputs(&args.out, i, map.raster(), &image, args.alpha)?;
        let b = target.bbox;
        records.push(TargetRecord {
            index: i,
            bbox: [b.x1, b.y1, b.x2, b.y2],
            class_index: target.class_index,
            class_name: handshake.class_names[target.class_index].clone(),
            confidence: *confidence,
            saliency_png,
            overlay_png,
            raw,
        });
    }
    let weights = args.out.join("weights.json");
    write_file(
        &weights,
        serde_json::to_string(&serde_json::json!({
            "targets": result.weights.len(),
            "masks": spec.count,
            "weights": result.weights,
        }))?,
    )?;
    let detector = if args.detector.builtin_synth {
        serde_json::json!({"builtin": args.detector.synth, "handshake": handshake})
    } else {
        serde_json::json!({"command": args.detector.command, "handshake": handshake})
    };
    let meta = ExplainMeta {
        image: args.image.clone(),
        width: image.width(),
        height: image.height(),
        saliency: result.maps[0].meta.clone(),
        use_objectness: sim_cfg.use_objectness,
        detector,
        detector_sessions: pool.len(),
        detector_calls: result.detector_calls,
        timing: result.timing,
        targets: records,
        weights,
    };
    write_file(&args.out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}
