//! Binary PGM (P5). Samples are one byte when maxval < 256, otherwise two
//! bytes, most significant first.

use std::fs;
use std::path::Path;

use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::labels::{LabelMask, NUM_CLASSES};

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset: offset as u64,
        message: message.into(),
    })
}

struct Header {
    width: usize,
    height: usize,
    maxval: u16,
    data_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b'#') => {
                while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                    pos += 1;
                }
            }
            _ => return pos,
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return format_err(start, format!("expected {what}"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .map_or_else(|| format_err(start, format!("{what} out of range")), Ok)
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return format_err(0, "file too short for magic number");
    }
    if &bytes[..2] != b"P5" {
        return format_err(
            0,
            format!("bad magic {:?}, expected P5", String::from_utf8_lossy(&bytes[..2])),
        );
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval_at = skip_space_and_comments(bytes, pos);
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return format_err(2, format!("zero extent {width}x{height}"));
    }
    if maxval == 0 || maxval > 65535 {
        return format_err(maxval_at, format!("maxval {maxval} outside 1..=65535"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return format_err(pos, "expected single whitespace before raster"),
    }
    Ok(Header {
        width,
        height,
        maxval: maxval as u16,
        data_start: pos + 1,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes)?;
    let count = h
        .width
        .checked_mul(h.height)
        .map_or_else(|| format_err(2, "image too large"), Ok)?;
    let wide = h.maxval > 255;
    let need = count * if wide { 2 } else { 1 };
    let raster = &bytes[h.data_start..];
    if raster.len() < need {
        return format_err(
            bytes.len(),
            format!("truncated raster: {} of {need} bytes", raster.len()),
        );
    }
    let pixels: Vec<u16> = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(i) = pixels.iter().position(|&p| p > h.maxval) {
        let offset = h.data_start + if wide { 2 * i } else { i };
        return format_err(offset, format!("sample {} exceeds maxval {}", pixels[i], h.maxval));
    }
    GrayImage::new(h.width, h.height, h.maxval, pixels)
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), image.maxval()).into_bytes();
    if image.maxval() > 255 {
        for p in image.pixels() {
            out.extend_from_slice(&p.to_be_bytes());
        }
    } else {
        out.extend(image.pixels().iter().map(|&p| p as u8));
    }
    out
}

/// Masks are stored with maxval 2, one byte per label.
pub fn encode_mask_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", mask.width(), mask.height(), NUM_CLASSES - 1).into_bytes();
    out.extend_from_slice(mask.labels());
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_pgm(image))?)
}

pub fn write_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_mask_pgm(mask))?)
}

/// Reads a PGM whose samples are class labels.
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let img = read_pgm(path)?;
    let labels = img
        .pixels()
        .iter()
        .map(|&p| u8::try_from(p).unwrap_or(u8::MAX))
        .collect();
    LabelMask::new(img.width(), img.height(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 200, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.maxval()), (2, 2, 255));
        assert_eq!(img.pixels(), &[0, 10, 200, 255]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n3 1\n# depth\n7\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 7]);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels(), &[1, 2, 7]);
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let img = GrayImage::new(2, 1, 65535, vec![0x0102, 0xfffe]).unwrap();
        let bytes = encode_pgm(&img);
        assert!(bytes.ends_with(&[0x01, 0x02, 0xff, 0xfe]));
    }

    #[test]
    fn format_errors_carry_offsets() {
        let err = |b: &[u8]| match decode_pgm(b) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected format error, got {other:?}"),
        };
        assert_eq!(err(b"P6 2 2 255\n\0\0\0\0"), 0);
        assert_eq!(err(b"P5 2 2 0\n\0\0\0\0"), 7);
        assert_eq!(err(b"P5 2 2 255\n\0\0\0"), 14);
        assert_eq!(err(b"P5 2 x"), 5);
        assert_eq!(err(b"P5 1 1 2\n\x05"), 9);
        assert_eq!(err(b""), 0);
    }

    #[test]
    fn masks_use_maxval_two() {
        let m = LabelMask::new(3, 1, vec![0, 1, 2]).unwrap();
        let bytes = encode_mask_pgm(&m);
        assert_eq!(&bytes[..9], b"P5\n3 1\n2\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        write_mask(&m, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    #[test]
    fn non_label_pgm_is_not_a_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.pgm");
        write_pgm(&GrayImage::new(1, 1, 255, vec![3]).unwrap(), &path).unwrap();
        assert!(matches!(read_mask(&path), Err(Error::Validation(_))));
    }

    fn image_strategy() -> impl Strategy<Value = GrayImage> {
        (
            1usize..8,
            1usize..8,
            prop_oneof![Just(255u16), Just(65535u16), 1u16..1000],
        )
            .prop_flat_map(|(w, h, maxval)| {
                prop::collection::vec(0..=maxval, w * h).prop_map(move |px| GrayImage::new(w, h, maxval, px).unwrap())
            })
    }

    proptest! {
        #[test]
        fn write_read_round_trip(img in image_strategy()) {
            prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
        }
    }
}
