use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Linear RGB float image, row-major, with an optional accumulated-alpha channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
    pub alpha: Option<Vec<f64>>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Image {
        Image {
            width,
            height,
            pixels: vec![color; width * height],
            alpha: None,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().flatten().all(|c| c.is_finite())
    }

    pub fn mse(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "image shapes differ");
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).powi(2)))
            .sum();
        sum / (3 * self.pixels.len()) as f64
    }

    /// Peak signal-to-noise ratio in dB for unit dynamic range.
    pub fn psnr(&self, other: &Image) -> f64 {
        -10.0 * self.mse(other).log10()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(x as usize, y as usize);
            image::Rgb(p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect(),
            alpha: None,
        }
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        Ok(Image::from_rgb8(&image::open(path.as_ref())?.to_rgb8()))
    }

    /// Little-endian float PFM (`PF`), rows stored bottom-to-top.
    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("PF\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                for c in self.get(x, y) {
                    out.extend_from_slice(&(c as f32).to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::BufReader::new(f);
        let mut header = Vec::new();
        for _ in 0..3 {
            let mut line = String::new();
            r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            header.push(line.trim().to_string());
        }
        if header[0] != "PF" {
            return Err(Error::format("pfm", "only 3-channel PF images are supported"));
        }
        let dims: Vec<usize> = header[1]
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::format("pfm", "bad dimensions")))
            .collect::<Result<_>>()?;
        let scale: f64 = header[2].parse().map_err(|_| Error::format("pfm", "bad scale"))?;
        let (w, h) = (dims[0], dims[1]);
        let mut data = vec![0u8; w * h * 12];
        r.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
        let read = |k: usize| {
            let b = [data[4 * k], data[4 * k + 1], data[4 * k + 2], data[4 * k + 3]];
            (if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        };
        let mut pixels = vec![[0.0; 3]; w * h];
        for row in 0..h {
            let y = h - 1 - row;
            for x in 0..w {
                let k = (row * w + x) * 3;
                pixels[y * w + x] = [read(k), read(k + 1), read(k + 2)];
            }
        }
        Ok(Image {
            width: w,
            height: h,
            pixels,
            alpha: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::filled(3, 2, [0.0; 3]);
        img.pixels[1] = [0.25, 0.5, 1.5];
        img.pixels[5] = [-1.0, 2.0, 0.125];
        let p = dir.path().join("x.pfm");
        img.save_pfm(&p).unwrap();
        assert_eq!(Image::load_pfm(&p).unwrap(), img);
    }

    #[test]
    fn psnr_of_uniform_offset() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((a.psnr(&b) - 20.0).abs() < 1e-9);
    }
}
