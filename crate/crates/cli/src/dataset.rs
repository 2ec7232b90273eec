//! Dataset-level commands: `eval` and `aggregate`.

use std::collections::BTreeMap;
use std::path::Path;

use drise::aggregate::{aggregate_by_class, scale_bins, AggregateSample, ClassAggregate, CONTEXT_MARGIN};
use drise::io::{drsm_bytes, load_drsm};
use drise::metrics::{deletion_curve, insertion_curve, pointing_game, Baseline, CurveConfig, GroundTruthRegion, PointingTally};
use drise::{explain, ExplainRequest, Handshake, ImageTensor, Raster, TargetDetection};
use log::info;
use serde::Serialize;

use crate::args::{AggregateArgs, BaselineArg, DatasetArgs, DetectorArgs, EvalArgs, MaskArgs};
use crate::error::CliError;
use crate::explain::load_input_image;
use crate::render::{render_heatmap, RenderMode};
use crate::setup::{
    build_detectors, create_out_dir, handshake_of, load_dataset, map_file_name, mask_spec, normalization, print_config, similarity_config,
    write_file, DatasetImage, DatasetItem, DetectorPool,
};

struct LoadedImage {
    image: ImageTensor,
    items: Vec<DatasetItem>,
    maps: Vec<Raster>,
}

/// Saliency for every annotated box, one `explain` per image covering all
/// of its boxes, or read from `--saliency-dir`.
fn dataset_maps(
    images: Vec<DatasetImage>,
    dataset: &DatasetArgs,
    mask: &MaskArgs,
    handshake: &Handshake,
    pool: &mut DetectorPool,
) -> Result<Vec<LoadedImage>, CliError> {
    let spec = mask_spec(mask)?;
    let total = images.len();
    let mut out = Vec::with_capacity(total);
    for (n, img) in images.into_iter().enumerate() {
        if img.items.is_empty() {
            continue;
        }
        let image = load_input_image(&img.path)?;
        let maps = match &dataset.saliency_dir {
            Some(dir) => img
                .items
                .iter()
                .map(|it| {
                    let p = dir.join(map_file_name(it.image_id, it.target_idx));
                    let m = load_drsm(&p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                    if m.dims() != image.dims() {
                        return Err(CliError::Usage(format!("{}: map is {:?}, image is {:?}", p.display(), m.dims(), image.dims())));
                    }
                    Ok(m)
                })
                .collect::<Result<Vec<_>, CliError>>()?,
            None => {
                let targets = img
                    .items
                    .iter()
                    .map(|it| TargetDetection::new(it.bbox, it.class_index, handshake.class_count()))
                    .collect::<drise::Result<Vec<_>>>()?;
                let mut req = ExplainRequest::new(image.clone(), targets, spec);
                req.sim_cfg = similarity_config(mask);
                req.parallelism = pool.len();
                req.batch_size = mask.batch_size as usize;
                req.normalization = normalization(mask);
                explain(&req, pool)?.maps.into_iter().map(|m| m.into_raster()).collect()
            }
        };
        info!("image {} ({}/{total}): {} map(s)", img.image_id, n + 1, maps.len());
        out.push(LoadedImage { image, items: img.items, maps });
    }
    Ok(out)
}

fn prepare(
    command: &str,
    args: &impl Serialize,
    dataset: &DatasetArgs,
    detector: &DetectorArgs,
    mask: &MaskArgs,
    out: &Path,
) -> Result<(Vec<LoadedImage>, Handshake, DetectorPool), CliError> {
    print_config(command, args)?;
    mask_spec(mask)?;
    let mut pool = build_detectors(detector)?;
    let handshake = handshake_of(&pool)?;
    let images = load_dataset(&dataset.annotations, &dataset.images_dir, &handshake)?;
    create_out_dir(out)?;
    let loaded = dataset_maps(images, dataset, mask, &handshake, &mut pool)?;
    Ok((loaded, handshake, pool))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub image_id: u64,
    pub target_idx: usize,
    pub pg_hit: bool,
    pub del_auc: f64,
    pub ins_auc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub count: usize,
    pub pointing_game: f64,
    pub mean_deletion_auc: f64,
    pub mean_insertion_auc: f64,
    pub steps: u64,
    pub baseline: Baseline,
    /// Step count and baseline are local defaults unless set on the command line.
    pub curve_settings: &'static str,
}

/// Writes `eval.csv` (`image_id,target_idx,pg_hit,del_auc,ins_auc`) and
/// `summary.json` under `--out`.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalSummary, CliError> {
    let baseline = match args.baseline {
        BaselineArg::Black => Baseline::Black,
        BaselineArg::Blur => Baseline::Blur { sigma: args.blur_sigma },
    };
    let curve = CurveConfig { steps: args.steps as usize, baseline, sim_cfg: similarity_config(&args.mask) };
    let (loaded, _, mut pool) = prepare("eval", args, &args.dataset, &args.detector, &args.mask, &args.out)?;
    if args.save_maps {
        create_out_dir(&args.out.join("maps"))?;
    }

    let mut rows = Vec::new();
    let mut tally = PointingTally::default();
    for li in &loaded {
        for (item, map) in li.items.iter().zip(&li.maps) {
            let gt = GroundTruthRegion::bbox(item.bbox)?;
            let hit = pointing_game(map, &gt)?;
            tally.record(hit);
            let target = TargetDetection::new(item.bbox, item.class_index, pool[0].class_count())?;
            let del = deletion_curve(&li.image, &target, pool[0].as_mut(), map, &curve)?;
            let ins = insertion_curve(&li.image, &target, pool[0].as_mut(), map, &curve)?;
            if args.save_maps {
                write_file(&args.out.join("maps").join(map_file_name(item.image_id, item.target_idx)), drsm_bytes(map))?;
            }
            rows.push(EvalRow {
                image_id: item.image_id,
                target_idx: item.target_idx,
                pg_hit: hit.is_hit(),
                del_auc: del.auc(),
                ins_auc: ins.auc(),
            });
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }

    let mut csv = String::from("image_id,target_idx,pg_hit,del_auc,ins_auc\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.image_id, r.target_idx, u8::from(r.pg_hit), r.del_auc, r.ins_auc));
    }
    write_file(&args.out.join("eval.csv"), csv)?;
    let n = rows.len() as f64;
    let summary = EvalSummary {
        count: rows.len(),
        pointing_game: tally.accuracy()?,
        mean_deletion_auc: rows.iter().map(|r| r.del_auc).sum::<f64>() / n,
        mean_insertion_auc: rows.iter().map(|r| r.ins_auc).sum::<f64>() / n,
        steps: args.steps,
        baseline,
        curve_settings: "default",
    };
    write_file(&args.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{} targets: pointing game {:.4}, deletion AUC {:.4}, insertion AUC {:.4}",
        summary.count, summary.pointing_game, summary.mean_deletion_auc, summary.mean_insertion_auc
    );
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassRecord {
    pub class_index: usize,
    pub class_name: String,
    pub sample_count: usize,
    pub average_size: (f64, f64),
    pub dims: (u32, u32),
    /// Sample counts of the small/medium/large area bins, when the class has at least 3 samples.
    pub scale_bins: Option<[usize; 3]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateMeta {
    pub context_margin: f64,
    pub crop_normalization: &'static str,
    pub mean: &'static str,
    pub classes: Vec<ClassRecord>,
}

const BIN_NAMES: [&str; 3] = ["small", "medium", "large"];

fn write_aggregate(out: &Path, stem: &str, agg: &ClassAggregate) -> Result<(), CliError> {
    let map = agg.mean_map()?;
    write_file(&out.join(format!("{stem}_mean.drsm")), drsm_bytes(&map))?;
    write_file(&out.join(format!("{stem}_mean.png")), render_heatmap(&map, RenderMode::Colormap, None)?)?;
    if let Some(img) = agg.mean_image()? {
        write_file(&out.join(format!("{stem}_image.png")), drise::detector::encode_png(&img)?)?;
    }
    Ok(())
}

/// Writes `class<k>_mean.{png,drsm}`, `class<k>_image.png`, the same per
/// scale bin as `class<k>_<bin>_*`, and `aggregate.json`.
pub fn cmd_aggregate(args: &AggregateArgs) -> Result<AggregateMeta, CliError> {
    let (loaded, handshake, _pool) = prepare("aggregate", args, &args.dataset, &args.detector, &args.mask, &args.out)?;
    let samples: Vec<AggregateSample<'_>> = loaded
        .iter()
        .flat_map(|li| {
            li.items.iter().zip(&li.maps).map(|(item, map)| AggregateSample {
                image: &li.image,
                saliency: map,
                bbox: item.bbox,
                class_index: item.class_index,
            })
        })
        .collect();
    let with_image = !args.no_mean_image;
    let aggregates = aggregate_by_class(&samples, with_image)?;

    let mut by_class: BTreeMap<usize, Vec<AggregateSample<'_>>> = BTreeMap::new();
    for s in &samples {
        by_class.entry(s.class_index).or_default().push(*s);
    }
    let mut classes = Vec::new();
    for agg in &aggregates {
        let stem = format!("class{}", agg.class_index);
        write_aggregate(&args.out, &stem, agg)?;
        let members = &by_class[&agg.class_index];
        let bins = if members.len() >= 3 {
            let areas: Vec<f64> = members.iter().map(|s| s.bbox.area()).collect();
            let bins = scale_bins(&areas)?;
            for (name, idx) in BIN_NAMES.iter().zip(&bins) {
                let subset: Vec<AggregateSample<'_>> = idx.iter().map(|&i| members[i]).collect();
                if let Some(a) = aggregate_by_class(&subset, with_image)?.first() {
                    write_aggregate(&args.out, &format!("{stem}_{name}"), a)?;
                }
            }
            Some([bins[0].len(), bins[1].len(), bins[2].len()])
        } else {
            None
        };
        classes.push(ClassRecord {
            class_index: agg.class_index,
            class_name: handshake.class_names[agg.class_index].clone(),
            sample_count: agg.sample_count,
            average_size: agg.average_size,
            dims: agg.dims(),
            scale_bins: bins,
        });
    }
    let meta = AggregateMeta {
        context_margin: CONTEXT_MARGIN,
        crop_normalization: "max",
        mean: "running f64 mean per chunk, chunks merged by count in input order",
        classes,
    };
    write_file(&args.out.join("aggregate.json"), serde_json::to_string_pretty(&meta)?)?;
    println!("{} sample(s) in {} class(es)", samples.len(), meta.classes.len());
    Ok(meta)
}
