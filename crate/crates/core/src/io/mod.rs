//! Raster IO: 8-bit PNG for color images, 32-bit float PFM for depth maps.

pub mod checkpoint;

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, ScalarImage};

/// Writes an RGB image as 8-bit PNG (values clamped to [0, 1] and rounded).
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let buf = img.to_u8();
    image::save_buffer(
        path,
        &buf,
        img.width as u32,
        img.height as u32,
        image::ColorType::Rgb8,
    )?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Image::from_u8(w, h, img.as_raw())
}

/// Writes a scalar field as grayscale PFM (little-endian, bottom-up rows
/// per the format convention).
pub fn write_pfm(path: &Path, img: &ScalarImage) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            let v = img.get(x, y) as f32;
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<ScalarImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;

    // Header: three whitespace-separated tokens ("Pf", "W H", "scale").
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token()?;
    if magic != "Pf" {
        return Err(Error::parse(path, format!("unsupported PFM type {magic:?}")));
    }
    let width: usize = token()?
        .parse()
        .map_err(|e| Error::parse(path, format!("bad width: {e}")))?;
    let height: usize = token()?
        .parse()
        .map_err(|e| Error::parse(path, format!("bad height: {e}")))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|e| Error::parse(path, format!("bad scale: {e}")))?;
    let little_endian = scale < 0.0;
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;

    let need = width * height * 4;
    if bytes.len() < pos + need {
        return Err(Error::parse(
            path,
            format!("PFM data truncated: need {need} bytes, have {}", bytes.len() - pos),
        ));
    }
    let mut img = ScalarImage::new(width, height);
    let mut off = pos;
    for y in (0..height).rev() {
        for x in 0..width {
            let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            img.set(x, y, v as f64);
            off += 4;
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip() {
        let dir = std::env::temp_dir().join("coinsplat_pfm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("depth.pfm");
        let img = ScalarImage {
            width: 5,
            height: 3,
            data: (0..15).map(|i| i as f64 * 0.5 - 2.0).collect(),
        };
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.width, 5);
        assert_eq!(back.height, 3);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn png_round_trip_is_exact_after_quantization() {
        let dir = std::env::temp_dir().join("coinsplat_png_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.png");
        let img = Image::from_fn(7, 4, |x, y| {
            [x as f64 / 6.0, y as f64 / 3.0, 0.5]
        });
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back, img.quantized());
        std::fs::remove_dir_all(&dir).ok();
    }
}
