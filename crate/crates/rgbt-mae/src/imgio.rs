//! In-memory images and PNG/JPEG loading.
//!
//! Pixels are kept as `f32` in `[0, 1]`, row-major `(y, x, channel)`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Image { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut img = Image::zeros(h, w, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    img.data[(y * w + x) * c + ch] = f(y, x, ch);
                }
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    /// Rec. 601 luma for 3-channel images; identity for single-channel.
    pub fn grayscale(&self) -> Image {
        match self.c {
            1 => self.clone(),
            3 => Image::from_fn(self.h, self.w, 1, |y, x, _| {
                0.299 * self.get(y, x, 0) + 0.587 * self.get(y, x, 1) + 0.114 * self.get(y, x, 2)
            }),
            c => panic!("grayscale: unsupported channel count {c}"),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        assert!(y0 + h <= self.h && x0 + w <= self.w, "crop out of bounds");
        Image::from_fn(h, w, self.c, |y, x, ch| self.get(y0 + y, x0 + x, ch))
    }

    pub fn hflip(&self) -> Image {
        Image::from_fn(self.h, self.w, self.c, |y, x, ch| self.get(y, self.w - 1 - x, ch))
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize_bilinear(&self, nh: usize, nw: usize) -> Image {
        if nh == self.h && nw == self.w {
            return self.clone();
        }
        let sy = self.h as f32 / nh as f32;
        let sx = self.w as f32 / nw as f32;
        Image::from_fn(nh, nw, self.c, |y, x, ch| {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f32);
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f32);
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let x1 = (x0 + 1).min(self.w - 1);
            let dy = fy - y0 as f32;
            let dx = fx - x0 as f32;
            let top = self.get(y0, x0, ch) * (1.0 - dx) + self.get(y0, x1, ch) * dx;
            let bot = self.get(y1, x0, ch) * (1.0 - dx) + self.get(y1, x1, ch) * dx;
            top * (1.0 - dy) + bot * dy
        })
    }

    /// Mean absolute difference, used by dedup tests.
    pub fn mean_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len());
        let s: f32 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        s / self.data.len() as f32
    }
}

/// Binary mask aligned with an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize) -> Self {
        Mask { h, w, data: vec![false; h * w] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Mask {
        assert!(y0 + h <= self.h && x0 + w <= self.w);
        let mut out = Mask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                out.set(y, x, self.get(y0 + y, x0 + x));
            }
        }
        out
    }

    pub fn hflip(&self) -> Mask {
        let mut out = Mask::new(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                out.set(y, x, self.get(y, self.w - 1 - x));
            }
        }
        out
    }

    pub fn resize_nearest(&self, nh: usize, nw: usize) -> Mask {
        if nh == self.h && nw == self.w {
            return self.clone();
        }
        let sy = self.h as f32 / nh as f32;
        let sx = self.w as f32 / nw as f32;
        let mut out = Mask::new(nh, nw);
        for y in 0..nh {
            for x in 0..nw {
                let fy = (((y as f32 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(self.h - 1);
                let fx = (((x as f32 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(self.w - 1);
                out.set(y, x, self.get(fy, fx));
            }
        }
        out
    }

    /// Fraction of true pixels inside the given window.
    pub fn coverage(&self, y0: usize, x0: usize, h: usize, w: usize) -> f64 {
        let mut count = 0usize;
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                if self.get(y, x) {
                    count += 1;
                }
            }
        }
        count as f64 / (h * w) as f64
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let dynimg = image::open(path)?;
    Ok(match dynimg {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let mut img = Image::zeros(h, w, 1);
            for (i, p) in g.pixels().enumerate() {
                img.data[i] = p.0[0] as f32 / 255.0;
            }
            img
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut img = Image::zeros(h, w, 3);
            for (i, p) in rgb.pixels().enumerate() {
                for ch in 0..3 {
                    img.data[i * 3 + ch] = p.0[ch] as f32 / 255.0;
                }
            }
            img
        }
    })
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = load_image(path)?;
    let gray = img.grayscale();
    let mut mask = Mask::new(gray.h, gray.w);
    for (i, &v) in gray.data.iter().enumerate() {
        mask.data[i] = v >= 0.5;
    }
    Ok(mask)
}

fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    match img.c {
        1 => {
            let buf: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
            let g = image::GrayImage::from_raw(img.w as u32, img.h as u32, buf)
                .ok_or_else(|| Error::Data("gray buffer size mismatch".into()))?;
            g.save(path)?;
        }
        3 => {
            let buf: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
            let rgb = image::RgbImage::from_raw(img.w as u32, img.h as u32, buf)
                .ok_or_else(|| Error::Data("rgb buffer size mismatch".into()))?;
            rgb.save(path)?;
        }
        c => return Err(Error::Data(format!("save_png: unsupported channels {c}"))),
    }
    Ok(())
}

pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let img = Image::from_fn(mask.h, mask.w, 1, |y, x, _| if mask.get(y, x) { 1.0 } else { 0.0 });
    save_png(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_is_involution() {
        let img = Image::from_fn(5, 7, 3, |y, x, c| (y * 100 + x * 10 + c) as f32 / 1000.0);
        assert_eq!(img.hflip().hflip(), img);
    }

    #[test]
    fn crop_then_shape() {
        let img = Image::from_fn(8, 8, 1, |y, x, _| (y * 8 + x) as f32);
        let c = img.crop(2, 3, 4, 5);
        assert_eq!((c.h, c.w), (4, 5));
        assert_eq!(c.get(0, 0, 0), img.get(2, 3, 0));
    }

    #[test]
    fn resize_identity_when_same_size() {
        let img = Image::from_fn(6, 6, 1, |y, x, _| (y + x) as f32 / 12.0);
        assert_eq!(img.resize_bilinear(6, 6), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::from_fn(10, 10, 3, |_, _, _| 0.42);
        let r = img.resize_bilinear(7, 13);
        for &v in &r.data {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(16, 12, 3, |y, x, c| ((y * 31 + x * 17 + c * 97) % 256) as f32 / 255.0);
        let p = dir.path().join("x.png");
        save_png(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!((back.h, back.w, back.c), (16, 12, 3));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1.0 / 255.0 / 2.0 + 1e-6);
        }
    }
}
