//! Float RGB image buffer with PNG I/O.
//!
//! Pixels live in [0, 1], channel-major (3, H, W), the same layout the
//! detector consumes. Encoding quantizes to 8-bit with round-to-nearest, so
//! identical buffers always produce identical files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    width: u32,
    height: u32,
    /// Channel-major: [r plane, g plane, b plane], each height*width.
    data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height * 3) as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn idx(&self, c: usize, x: u32, y: u32) -> usize {
        (c as u32 * self.width * self.height + y * self.width + x) as usize
    }

    #[inline]
    pub fn get(&self, c: usize, x: u32, y: u32) -> f32 {
        self.data[self.idx(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: u32, y: u32, v: f32) {
        let i = self.idx(c, x, y);
        self.data[i] = v;
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Bilinear sample with edge replication outside the frame.
    pub fn sample_clamped(&self, c: usize, x: f32, y: f32) -> f32 {
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let xc = x.clamp(0.0, max_x);
        let yc = y.clamp(0.0, max_y);
        let x0 = xc.floor();
        let y0 = yc.floor();
        let fx = xc - x0;
        let fy = yc - y0;
        let x0 = x0 as u32;
        let y0 = y0 as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = self.get(c, x0, y0);
        let v10 = self.get(c, x1, y0);
        let v01 = self.get(c, x0, y1);
        let v11 = self.get(c, x1, y1);
        let top = v00 + (v10 - v00) * fx;
        let bot = v01 + (v11 - v01) * fx;
        top + (bot - top) * fy
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(
            &[3, self.height as usize, self.width as usize],
            self.data.clone(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (width, height) = img.dimensions();
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let p = img.get_pixel(x, y);
                for c in 0..3 {
                    out.set(c, x, y, p[c] as f32 / 255.0);
                }
            }
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = [
                    quantize(self.get(0, x, y)),
                    quantize(self.get(1, x, y)),
                    quantize(self.get(2, x, y)),
                ];
                img.put_pixel(x, y, image::Rgb(px));
            }
        }
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
