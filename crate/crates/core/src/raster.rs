//! Binary masks and PNG helpers shared by labeling, prediction and counting.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::tile_pyramid::TILE_SIZE;

pub const TILE_PX: usize = TILE_SIZE as usize;

/// Row-major binary raster; every value is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn tile() -> Self {
        Self::zeros(TILE_PX, TILE_PX)
    }

    /// Builds a mask from raw values; any non-zero value counts as 1.
    pub fn from_values(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}"),
                got: format!("{} values", values.len()),
            });
        }
        let data = values.into_iter().map(|v| u8::from(v != 0)).collect();
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count_ones() as f64 / self.data.len() as f64
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    pub fn from_gray_image(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| u8::from(p.0[0] >= 128)).collect();
        Mask {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        self.to_gray_image().save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        Ok(Self::from_gray_image(&img))
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Loads an RGB tile and checks it is 256 × 256.
pub fn load_tile_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.into_rgb8();
    if img.dimensions() != (TILE_SIZE, TILE_SIZE) {
        return Err(Error::ShapeMismatch {
            expected: format!("{TILE_SIZE}x{TILE_SIZE}"),
            got: format!("{}x{}", img.width(), img.height()),
        });
    }
    Ok(img)
}
