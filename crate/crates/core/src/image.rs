//! Minimal row-major float raster used for frames and crops.
//!
//! Pixel `(row, col)` covers the unit square `[col, col+1) x [row, row+1)` in
//! image coordinates, so its centre sits at `(col + 0.5, row + 0.5)`.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a single-channel image from a per-pixel function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            channels: 1,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    /// Bilinear sample at continuous image coordinates `(x, y)`; neighbours
    /// outside the raster contribute zero.
    pub fn sample_bilinear(&self, x: f64, y: f64, ch: usize) -> f32 {
        self.sample_with(x, y, ch, |img, r, c, ch| {
            if r < 0 || c < 0 || r >= img.height as i64 || c >= img.width as i64 {
                0.0
            } else {
                img.get(r as usize, c as usize, ch)
            }
        })
    }

    /// Bilinear sample that clamps out-of-range neighbours to the nearest edge pixel.
    pub fn sample_bilinear_clamped(&self, x: f64, y: f64, ch: usize) -> f32 {
        self.sample_with(x, y, ch, |img, r, c, ch| {
            let r = r.clamp(0, img.height as i64 - 1) as usize;
            let c = c.clamp(0, img.width as i64 - 1) as usize;
            img.get(r, c, ch)
        })
    }

    #[inline]
    fn sample_with(
        &self,
        x: f64,
        y: f64,
        ch: usize,
        fetch: impl Fn(&Self, i64, i64, usize) -> f32,
    ) -> f32 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0) as f32;
        let ty = (fy - y0) as f32;
        let (c0, r0) = (x0 as i64, y0 as i64);
        let p00 = fetch(self, r0, c0, ch);
        let p01 = fetch(self, r0, c0 + 1, ch);
        let p10 = fetch(self, r0 + 1, c0, ch);
        let p11 = fetch(self, r0 + 1, c0 + 1, ch);
        let top = p00 + (p01 - p00) * tx;
        let bottom = p10 + (p11 - p10) * tx;
        top + (bottom - top) * ty
    }

    /// Averages channels into a single-channel image.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.height * self.width;
        let mut data = Vec::with_capacity(n);
        for px in self.data.chunks_exact(self.channels) {
            data.push(px.iter().sum::<f32>() / self.channels as f32);
        }
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.height != other.height || self.width != other.width || self.channels != other.channels
        {
            return Err(Error::invalid("image shapes differ"));
        }
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(total / self.data.len().max(1) as f64)
    }

    /// Rounds every sample to the value an 8-bit PNG roundtrip yields.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0;
        }
    }

    /// Writes an 8-bit PNG (grayscale for one channel, RGB for three).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::invalid(format!("cannot write {c}-channel png"))),
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::Png(e.to_string()))?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => 3,
        };
        let (h, w) = (info.height as usize, info.width as usize);
        let raw = &buf[..h * w * channels];
        // Alpha is dropped; everything downstream works on colour only.
        let keep = if channels == 2 || channels == 4 { channels - 1 } else { channels };
        let mut data = Vec::with_capacity(h * w * keep);
        for px in raw.chunks_exact(channels) {
            for &v in &px[..keep] {
                data.push(v as f32 / 255.0);
            }
        }
        Image::from_vec(h, w, keep, data)
    }
}
