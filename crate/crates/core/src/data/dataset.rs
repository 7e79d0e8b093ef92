use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::image::GrayImage;
use super::pgm::{read_mask, read_pgm, write_mask, write_pgm};
use super::phantom::{generate_phantom, PhantomSpec};
use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::labels::LabelMask;

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// One image/mask pair. Paths are relative to the manifest's directory when
/// written and resolved against it when read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!("{}\t{}\n", e.image.display(), e.mask.display()));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let (image, mask) = line.split_once('\t').ok_or_else(|| {
                Error::Validation(format!("{}: line {} lacks a tab separator", path.display(), i + 1))
            })?;
            Ok(ManifestEntry {
                image: base.join(image),
                mask: base.join(mask),
            })
        })
        .collect()
}

pub fn load_pairs(manifest: impl AsRef<Path>) -> Result<Vec<(GrayImage, LabelMask)>> {
    read_manifest(manifest)?
        .iter()
        .map(|e| {
            let image = read_pgm(&e.image)?;
            let mask = read_mask(&e.mask)?;
            if (image.width(), image.height()) != (mask.width(), mask.height()) {
                return Err(Error::Validation(format!(
                    "{} is {}x{} but {} is {}x{}",
                    e.image.display(),
                    image.width(),
                    image.height(),
                    e.mask.display(),
                    mask.width(),
                    mask.height()
                )));
            }
            Ok((image, mask))
        })
        .collect()
}

/// Writes `count` phantoms into `dir` with seeds drawn from `seed`, plus the
/// manifest. Returns the manifest entries as written.
pub fn make_dataset(
    dir: impl AsRef<Path>,
    count: usize,
    template: &PhantomSpec,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    if count == 0 {
        return Err(Error::Argument("dataset count must be >= 1".into()));
    }
    template.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut seeds = seeded_rng(seed);
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let spec = PhantomSpec {
            seed: seeds.random(),
            ..template.clone()
        };
        let (image, mask) = generate_phantom(&spec)?;
        let entry = ManifestEntry {
            image: PathBuf::from(format!("image_{i:04}.pgm")),
            mask: PathBuf::from(format!("mask_{i:04}.pgm")),
        };
        write_pgm(&image, dir.join(&entry.image))?;
        write_mask(&mask, dir.join(&entry.mask))?;
        entries.push(entry);
    }
    write_manifest(dir.join(MANIFEST_NAME), &entries)?;
    Ok(entries)
}
