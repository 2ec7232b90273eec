//! `bias-inject`, `synth-detector` and `synth-dataset`.

use std::io::{BufWriter, Write};

use drise::bias::{bias_dataset, BiasReport, Corner, MarkerSpec};
use drise::coco::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage};
use drise::detector::serve;
use drise::detector::synthetic::{rectangle_scene, RectangleParams};
use drise::io::save_image;

use crate::args::{BiasInjectArgs, CornerArg, SynthDatasetArgs, SynthDetectorArgs};
use crate::error::CliError;
use crate::setup::{create_out_dir, print_config, synthetic_detector, write_file};

/// Writes the marked images, a verbatim copy of the annotation file and
/// `report.json` under `--out`. Unreadable images are listed in the report
/// and make the command fail after everything else is written.
pub fn cmd_bias_inject(args: &BiasInjectArgs) -> Result<BiasReport, CliError> {
    print_config("bias-inject", args)?;
    let corner = match args.corner {
        CornerArg::TopLeft => Corner::TopLeft,
        CornerArg::TopRight => Corner::TopRight,
    };
    let default = MarkerSpec::default_for(corner, args.category);
    let spec = MarkerSpec::new(corner, args.radius, args.color.unwrap_or(default.color), args.category)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let coco = CocoDataset::load(&args.annotations).map_err(|e| CliError::Usage(format!("{}: {e}", args.annotations.display())))?;
    create_out_dir(&args.out)?;
    let report = bias_dataset(&coco, &args.images_dir, &spec, &args.out)?;

    let name = args.annotations.file_name().ok_or_else(|| CliError::Usage("annotation path has no file name".into()))?;
    let copy = args.out.join(name);
    std::fs::copy(&args.annotations, &copy).map_err(CliError::file(&copy))?;
    write_file(&args.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{} images modified ({} markers), {} copied unchanged", report.modified.len(), report.markers, report.copied.len());
    if !report.missing.is_empty() {
        let list: Vec<String> = report.missing.iter().map(|m| format!("{}: {}", m.path.display(), m.reason)).collect();
        return Err(CliError::Usage(format!("{} image(s) could not be processed:\n  {}", list.len(), list.join("\n  "))));
    }
    Ok(report)
}

/// Serves a synthetic detector on stdin/stdout until stdin closes.
pub fn cmd_synth_detector(args: &SynthDetectorArgs) -> Result<(), CliError> {
    let mut detector = synthetic_detector(args.mode, args.seed, args.echo_config.as_deref())?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    serve(detector.as_mut(), stdin.lock(), &mut out)?;
    out.flush().map_err(|e| CliError::Core(e.into()))?;
    Ok(())
}

/// Writes `images/<id>.png` and `annotations.json` under `--out`.
pub fn cmd_synth_dataset(args: &SynthDatasetArgs) -> Result<CocoDataset, CliError> {
    print_config("synth-dataset", args)?;
    let params = RectangleParams::default();
    create_out_dir(&args.out.join("images"))?;
    let mut ds = CocoDataset {
        categories: params.class_names().into_iter().enumerate().map(|(i, name)| CocoCategory { id: i as u64 + 1, name }).collect(),
        ..Default::default()
    };
    for i in 0..args.count {
        let id = i + 1;
        let scene = rectangle_scene(args.width, args.height, args.seed.wrapping_mul(1_000_003).wrapping_add(i), &params, args.objects)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let file_name = format!("images/{id:04}.png");
        save_image(&scene.image, &args.out.join(&file_name))?;
        ds.images.push(CocoImage { id, file_name, width: args.width, height: args.height });
        for o in &scene.objects {
            let b = o.bbox;
            ds.annotations.push(CocoAnnotation {
                id: Some(ds.annotations.len() as u64 + 1),
                image_id: id,
                bbox: [b.x1, b.y1, b.width(), b.height()],
                category_id: o.class_index as u64 + 1,
            });
        }
    }
    write_file(&args.out.join("annotations.json"), serde_json::to_string_pretty(&ds)?)?;
    println!("{} images, {} boxes", ds.images.len(), ds.annotations.len());
    Ok(ds)
}
