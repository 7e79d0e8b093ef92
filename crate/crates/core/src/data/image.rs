use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Grayscale image with 16-bit intensities in `0..=maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    maxval: u16,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return shape_err(format!("image extents must be >= 1, got {width}x{height}"));
        }
        if pixels.len() != width * height {
            return shape_err(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            ));
        }
        if maxval == 0 {
            return Err(Error::Validation("maxval must be >= 1".into()));
        }
        if let Some(p) = pixels.iter().find(|&&p| p > maxval) {
            return Err(Error::Validation(format!("pixel {p} exceeds maxval {maxval}")));
        }
        Ok(GrayImage {
            width,
            height,
            maxval,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn maxval(&self) -> u16 {
        self.maxval
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Intensity of every pixel as a fraction of maxval.
    pub fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        let scale = f64::from(self.maxval);
        self.pixels.iter().map(move |&p| f64::from(p) / scale)
    }
}

/// Stacks images into a `(batch, 1, h, w)` tensor of intensities in [0, 1].
pub fn images_to_tensor(images: &[&GrayImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Argument("no images to stack".into()))?;
    let (w, h) = (first.width, first.height);
    if images.iter().any(|i| i.width != w || i.height != h) {
        return shape_err("images in a batch must share dimensions");
    }
    let s = Shape4::new(images.len(), 1, h, w)?;
    let data = images.iter().flat_map(|i| i.normalized()).collect();
    Tensor::from_vec(&s.dims(), data)
}
