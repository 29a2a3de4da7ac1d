//! Grayscale rasters in `[0, 1]` and their 8-bit PNG encoding.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use nanet_tensor::kernels::{bilinear_resize, lerp};

use crate::{Error, Result};

/// Row-major single-channel image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0, 1]")));
        }
        Ok(ImageBuffer { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        assert!((0.0..=1.0).contains(&value), "intensity {value} outside [0, 1]");
        ImageBuffer { height, width, values: vec![value; height * width] }
    }

    /// Build from arbitrary floats, clamping into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(height, width, values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidImage(format!("cannot resize to {out_h}x{out_w}")));
        }
        if (out_h, out_w) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let values = bilinear_resize(&self.values, self.height, self.width, out_h, out_w);
        Ok(ImageBuffer { height: out_h, width: out_w, values })
    }

    /// Rotate about the image center by `angle_deg` with bilinear sampling;
    /// pixels that map outside the source take `fill`.
    pub fn rotate(&self, angle_deg: f64, fill: f32) -> Self {
        let (h, w) = (self.height, self.width);
        let (sin, cos) = angle_deg.to_radians().sin_cos();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        const EDGE: f64 = 1e-6;
        let mut values = Vec::with_capacity(h * w);
        for y in 0..h {
            let dy = y as f64 - cy;
            for x in 0..w {
                let dx = x as f64 - cx;
                // inverse rotation back into the source frame
                let sx = cx + cos * dx + sin * dy;
                let sy = cy - sin * dx + cos * dy;
                if sx < -EDGE || sy < -EDGE || sx > w as f64 - 1.0 + EDGE || sy > h as f64 - 1.0 + EDGE {
                    values.push(fill);
                    continue;
                }
                let sx = sx.clamp(0.0, w as f64 - 1.0);
                let sy = sy.clamp(0.0, h as f64 - 1.0);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
                let top = lerp(self.get(y0, x0), self.get(y0, x1), fx);
                let bottom = lerp(self.get(y1, x0), self.get(y1, x1), fx);
                values.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
            }
        }
        ImageBuffer { height: h, width: w, values }
    }

    /// 8-bit quantization: `round(v * 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let encoder = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Sub);
        encoder
            .write_image(&self.to_bytes(), self.width as u32, self.height as u32, ExtendedColorType::L8)
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::io(path, e))?.into_luma8();
        let (w, h) = img.dimensions();
        Self::from_bytes(h as usize, w as usize, img.as_raw())
    }
}
