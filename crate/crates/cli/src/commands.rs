//! The five subcommands. Each writes human-readable progress to `out` and
//! its artifacts to the paths it was given.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use microvolumetry::data::{
    images_to_tensor, load_pairs, make_dataset, read_manifest, read_mask, read_pgm, write_manifest, write_mask,
    ManifestEntry, PhantomSpec, MANIFEST_NAME,
};
use microvolumetry::metrics::{
    calibrate_volume, confusion, count_class_pixels, dice, format_report, format_volume, pixel_accuracy,
    read_reference, ConfusionCounts, VolumetryReport,
};
use microvolumetry::training::{metrics_csv, train, EpochMetrics, TrainOutcome};
use microvolumetry::unet::{load_checkpoint, predict, save_checkpoint};
use microvolumetry::{Error, LabelMask, Result, BONE, NUM_CLASSES};

use crate::config::read_run_config;

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref())?;
    Ok(())
}

/// Manifest inside `path` if it is a directory, else `path` itself.
fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Sorted `*.pgm` files of a directory, excluding nothing else.
fn sorted_pgms(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

fn manifest_entries(dir: &Path) -> Result<Option<Vec<ManifestEntry>>> {
    let manifest = dir.join(MANIFEST_NAME);
    if manifest.is_file() {
        Ok(Some(read_manifest(manifest)?))
    } else {
        Ok(None)
    }
}

/// Image files in manifest order, or sorted when the directory has none.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    match manifest_entries(dir)? {
        Some(entries) => Ok(entries.into_iter().map(|e| e.image).collect()),
        None => sorted_pgms(dir),
    }
}

/// Mask files in manifest order, or sorted when the directory has none.
pub fn mask_files(dir: &Path) -> Result<Vec<PathBuf>> {
    match manifest_entries(dir)? {
        Some(entries) => Ok(entries.into_iter().map(|e| e.mask).collect()),
        None => sorted_pgms(dir),
    }
}

fn read_masks(files: &[PathBuf]) -> Result<Vec<LabelMask>> {
    files.iter().map(read_mask).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenArgs {
    pub out: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub phantom: PhantomSpec,
}

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<PathBuf> {
    make_dataset(&args.out, args.count, &args.phantom, args.seed)?;
    let manifest = args.out.join(MANIFEST_NAME);
    emit(out, manifest.display().to_string())?;
    Ok(manifest)
}

pub fn cmd_train(config: &Path, out: &mut dyn Write) -> Result<TrainOutcome> {
    let run = read_run_config(config)?;
    let pairs = load_pairs(manifest_path(&run.dataset))?;
    let epochs = run.train.epochs;
    let mut log_error = None;
    let outcome = train(&run.train, &pairs, |m: &EpochMetrics| {
        let line = format!(
            "epoch {}/{epochs}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}",
            m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
        if let Err(e) = emit(out, line) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    for path in [&run.checkpoint, &run.metrics] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&run.metrics, metrics_csv(&outcome.history))?;
    save_checkpoint(&outcome.params, &run.train.unet, &run.checkpoint)?;
    let last = outcome.history.last().expect("at least one epoch");
    emit(out, format!("validation accuracy: {:.4}", last.val_acc))?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub images: PathBuf,
    pub out: PathBuf,
}

/// Segments every image and writes `mask_NNNN.pgm` files plus a manifest
/// pairing each source image with its predicted mask.
pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let (params, config) = load_checkpoint(&args.checkpoint)?;
    let images = image_files(&args.images)?;
    if images.is_empty() {
        return Err(Error::Validation(format!(
            "no images found in {}",
            args.images.display()
        )));
    }
    fs::create_dir_all(&args.out)?;
    let mut entries = Vec::with_capacity(images.len());
    let mut written = Vec::with_capacity(images.len());
    for (i, path) in images.iter().enumerate() {
        let image = read_pgm(path)?;
        if image.width() != config.input_size || image.height() != config.input_size {
            return Err(Error::Validation(format!(
                "{} is {}x{} but the network expects {}x{}",
                path.display(),
                image.width(),
                image.height(),
                config.input_size,
                config.input_size
            )));
        }
        let scores = predict(&params, &config, &images_to_tensor(&[&image])?)?;
        let mask = scores.argmax_channel()?.remove(0);
        let name = PathBuf::from(format!("mask_{i:04}.pgm"));
        let target = args.out.join(&name);
        write_mask(&mask, &target)?;
        let image_ref = fs::canonicalize(path).unwrap_or_else(|_| path.clone());
        entries.push(ManifestEntry {
            image: image_ref,
            mask: name,
        });
        written.push(target);
    }
    write_manifest(args.out.join(MANIFEST_NAME), &entries)?;
    emit(out, format!("wrote {} masks to {}", written.len(), args.out.display()))?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateArgs {
    pub pred: PathBuf,
    pub truth: PathBuf,
    pub out: Option<PathBuf>,
}

pub const EVALUATION_HEADER: &str = "pixels,accuracy,dice_0,dice_1,dice_2";

fn evaluation_csv(c: &ConfusionCounts) -> Result<String> {
    let mut row = format!("{},{:.6}", c.total(), pixel_accuracy(c)?);
    for k in 0..NUM_CLASSES {
        row.push_str(&format!(",{:.6}", dice(c, k)?));
    }
    Ok(format!("{EVALUATION_HEADER}\n{row}\n"))
}

fn paired_confusion(pred_dir: &Path, truth_dir: &Path) -> Result<ConfusionCounts> {
    let pred_files = mask_files(pred_dir)?;
    let truth_files = mask_files(truth_dir)?;
    if pred_files.len() != truth_files.len() {
        return Err(Error::Validation(format!(
            "{} predicted masks in {} but {} reference masks in {}",
            pred_files.len(),
            pred_dir.display(),
            truth_files.len(),
            truth_dir.display()
        )));
    }
    confusion(&read_masks(&pred_files)?, &read_masks(&truth_files)?)
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<ConfusionCounts> {
    let c = paired_confusion(&args.pred, &args.truth)?;
    let csv = evaluation_csv(&c)?;
    let path = args.out.clone().unwrap_or_else(|| args.pred.join("evaluation.csv"));
    fs::write(&path, &csv)?;
    emit(out, "confusion (rows = truth, columns = prediction):")?;
    for row in &c.counts {
        emit(out, format!("  {:>12} {:>12} {:>12}", row[0], row[1], row[2]))?;
    }
    emit(out, format!("accuracy: {:.4}", pixel_accuracy(&c)?))?;
    for k in 0..NUM_CLASSES {
        emit(out, format!("dice[{k}]: {:.4}", dice(&c, k)?))?;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumetryArgs {
    pub pred: PathBuf,
    pub reference: PathBuf,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn cmd_volumetry(args: &VolumetryArgs, out: &mut dyn Write) -> Result<VolumetryReport> {
    let reference = read_reference(&args.reference).map_err(|e| match e {
        Error::Validation(m) => Error::Argument(format!("{}: {m}", args.reference.display())),
        other => other,
    })?;
    let masks = read_masks(&mask_files(&args.pred)?)?;
    let report = calibrate_volume(count_class_pixels(&masks, BONE), reference.pixels_m, reference.v_m)?;
    let csv = match &args.truth {
        Some(truth) => format_report(&report, &paired_confusion(&args.pred, truth)?)?,
        None => format_volume(&report),
    };
    let path = args.out.clone().unwrap_or_else(|| args.pred.join("volumetry.csv"));
    fs::write(&path, csv)?;
    emit(out, format!("bone pixels: {}", report.pixels_c))?;
    emit(out, format!("V_C: {:.2} mm^3", report.v_c))?;
    emit(out, format!("ratio: {:.2}%", 100.0 * report.ratio))?;
    Ok(report)
}
