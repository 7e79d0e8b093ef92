//! Area-weighted downscaling. An output pixel covers a source footprint of
//! `source / target` pixels per axis, which is fractional in general
//! (2016 / 512 = 3.9375), so partially covered source pixels contribute in
//! proportion to the covered area.

use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::labels::{LabelMask, NUM_CLASSES};

/// For each output index, the `(source index, overlap)` pairs of its footprint.
fn footprints(source: usize, target: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = source as f64 / target as f64;
    (0..target)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = if o + 1 == target {
                source as f64
            } else {
                (o + 1) as f64 * scale
            };
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(source);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

fn check_target(width: usize, height: usize, target: usize) -> Result<()> {
    if target == 0 {
        return Err(Error::Argument("downscale target must be >= 1".into()));
    }
    if target > width || target > height {
        return Err(Error::Argument(format!(
            "cannot downscale {width}x{height} to larger {target}x{target}"
        )));
    }
    Ok(())
}

/// Resamples to `target x target` by averaging each output pixel's footprint.
pub fn downscale(image: &GrayImage, target: usize) -> Result<GrayImage> {
    check_target(image.width(), image.height(), target)?;
    let fx = footprints(image.width(), target);
    let fy = footprints(image.height(), target);
    let mut pixels = Vec::with_capacity(target * target);
    for row in &fy {
        for col in &fx {
            let mut acc = 0.0;
            let mut area = 0.0;
            for &(y, wy) in row {
                for &(x, wx) in col {
                    acc += wy * wx * f64::from(image.get(x, y));
                    area += wy * wx;
                }
            }
            pixels.push((acc / area).round().clamp(0.0, f64::from(image.maxval())) as u16);
        }
    }
    GrayImage::new(target, target, image.maxval(), pixels)
}

/// Resamples labels to `target x target`. A label covering more than half of
/// the footprint wins; otherwise the highest-priority label present wins,
/// with implant over bone over background, so thin implant rims survive.
pub fn downscale_mask(mask: &LabelMask, target: usize) -> Result<LabelMask> {
    check_target(mask.width(), mask.height(), target)?;
    let fx = footprints(mask.width(), target);
    let fy = footprints(mask.height(), target);
    let mut labels = Vec::with_capacity(target * target);
    for row in &fy {
        for col in &fx {
            let mut votes = [0.0; NUM_CLASSES];
            let mut area = 0.0;
            for &(y, wy) in row {
                for &(x, wx) in col {
                    votes[mask.get(x, y) as usize] += wy * wx;
                    area += wy * wx;
                }
            }
            let majority = (0..NUM_CLASSES).find(|&k| votes[k] > 0.5 * area);
            let label = majority
                .or_else(|| (0..NUM_CLASSES).rev().find(|&k| votes[k] > 0.0))
                .expect("footprint is never empty");
            labels.push(label as u8);
        }
    }
    LabelMask::new(target, target, labels)
}
