//! Synthetic µCT-like slices: a bright implant disk, trabecular bone texture
//! in an annulus around it, a dark background, sensor noise and metal streaks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::labels::{LabelMask, BACKGROUND, BONE, IMPLANT};

/// Normalized intensity band of bone before noise.
pub const BONE_BAND: (f64, f64) = (0.45, 0.65);
/// Normalized intensity band of the implant before noise.
pub const IMPLANT_BAND: (f64, f64) = (0.85, 1.0);

const MAXVAL: u16 = u16::MAX;
const ANNULUS_WIDTH: f64 = 0.2;
const STREAK_HALF_WIDTH: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    /// Side length in pixels.
    pub size: usize,
    /// Implant radius as a fraction of `size`.
    pub implant_radius: f64,
    /// Fraction of the annulus labeled bone.
    pub bone_density: f64,
    /// Standard deviation of the additive noise, as a fraction of full scale.
    pub noise_sigma: f64,
    pub artifact_streaks: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            size: 64,
            implant_radius: 0.15,
            bone_density: 0.5,
            noise_sigma: 0.02,
            artifact_streaks: 6,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.size < 8 {
            return bad(format!("phantom size {} below 8", self.size));
        }
        if !(self.implant_radius > 0.0 && self.implant_radius < 0.5) {
            return bad(format!("implant_radius {} outside (0, 0.5)", self.implant_radius));
        }
        if !(0.0..=1.0).contains(&self.bone_density) {
            return bad(format!("bone_density {} outside [0, 1]", self.bone_density));
        }
        if !(0.0..=0.5).contains(&self.noise_sigma) {
            return bad(format!("noise_sigma {} outside [0, 0.5]", self.noise_sigma));
        }
        Ok(())
    }
}

/// Smooth value noise in [0, 1] on a lattice with `cell` pixel spacing.
struct ValueNoise {
    cell: f64,
    stride: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(size: usize, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let stride = (size as f64 / cell).ceil() as usize + 2;
        let lattice = (0..stride * stride).map(|_| rng.random::<f64>()).collect();
        ValueNoise { cell, stride, lattice }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(gx.fract()), smooth(gy.fract()));
        let v = |i: usize, j: usize| self.lattice[j * self.stride + i];
        let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let bottom = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<(GrayImage, LabelMask)> {
    spec.validate()?;
    let n = spec.size;
    let size = n as f64;
    let mut rng = seeded_rng(spec.seed);
    let jitter = size / 32.0;
    let cx = size / 2.0 + rng.random_range(-jitter..=jitter);
    let cy = size / 2.0 + rng.random_range(-jitter..=jitter);
    let radius = spec.implant_radius * size;
    let outer = radius + ANNULUS_WIDTH * size;

    let bone_noise = ValueNoise::new(n, (size / 8.0).max(2.0), &mut rng);
    let fine_noise = ValueNoise::new(n, (size / 16.0).max(2.0), &mut rng);
    let implant_level = rng.random_range(0.89..0.93);

    let centre_dist = |x: usize, y: usize| ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
    let texture: Vec<f64> = (0..n * n)
        .map(|i| bone_noise.at((i % n) as f64, (i / n) as f64))
        .collect();

    let mut annulus: Vec<f64> = (0..n * n)
        .filter(|&i| {
            let d = centre_dist(i % n, i / n);
            d > radius && d <= outer
        })
        .map(|i| texture[i])
        .collect();
    annulus.sort_by(f64::total_cmp);
    let threshold = if spec.bone_density == 0.0 || annulus.is_empty() {
        f64::INFINITY
    } else {
        let k = ((1.0 - spec.bone_density) * annulus.len() as f64).floor() as usize;
        annulus[k.min(annulus.len() - 1)]
    };

    let mut labels = vec![BACKGROUND; n * n];
    let mut value = vec![0.0; n * n];
    for i in 0..n * n {
        let (x, y) = (i % n, i / n);
        let d = centre_dist(x, y);
        let fine = fine_noise.at(x as f64, y as f64);
        if d <= radius {
            labels[i] = IMPLANT;
            value[i] = implant_level + 0.02 * fine;
        } else if d <= outer && texture[i] >= threshold {
            labels[i] = BONE;
            let t = ((texture[i] - threshold) / (1.0 - threshold).max(1e-9)).clamp(0.0, 1.0);
            value[i] = 0.52 + 0.06 * t + 0.04 * fine;
        } else {
            value[i] = 0.10 + 0.05 * fine;
        }
    }

    for _ in 0..spec.artifact_streaks {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let length = rng.random_range(0.25..0.45) * size;
        let level = rng.random_range(0.55..0.62);
        let (ux, uy) = (angle.cos(), angle.sin());
        for i in 0..n * n {
            if labels[i] == IMPLANT {
                continue;
            }
            let (dx, dy) = ((i % n) as f64 + 0.5 - cx, (i / n) as f64 + 0.5 - cy);
            let along = dx * ux + dy * uy;
            let across = (dx * uy - dy * ux).abs();
            if across <= STREAK_HALF_WIDTH && along >= radius && along <= radius + length {
                value[i] = value[i].max(level);
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Argument(e.to_string()))?;
        for v in &mut value {
            *v += normal.sample(&mut rng);
        }
    }

    let max = f64::from(MAXVAL);
    let pixels = value.iter().map(|v| (v.clamp(0.0, 1.0) * max).round() as u16).collect();
    Ok((GrayImage::new(n, n, MAXVAL, pixels)?, LabelMask::new(n, n, labels)?))
}
