//! Image decoding and resizing to a backbone's input resolution.

use image::imageops::FilterType;
use rayon::prelude::*;

use crate::augment::PixelGrid;
use crate::dataset::{Dataset, ImageRecord};
use crate::error::{Error, Result};

/// Decodes images to 8-bit RGB and resizes them (bilinear) to a fixed resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageLoader {
    height: usize,
    width: usize,
}

impl ImageLoader {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn load(&self, record: &ImageRecord) -> Result<PixelGrid> {
        let decode_err = |reason: String| Error::Decode {
            image_id: record.image_id.clone(),
            path: record.image_path.clone(),
            reason,
        };
        let img = image::open(&record.image_path).map_err(|e| decode_err(e.to_string()))?;
        let rgb = img.to_rgb8();
        let rgb = if rgb.height() as usize == self.height && rgb.width() as usize == self.width {
            rgb
        } else {
            image::imageops::resize(&rgb, self.width as u32, self.height as u32, FilterType::Triangle)
        };
        PixelGrid::new(self.height, self.width, 3, rgb.into_raw()).map_err(|e| decode_err(e.to_string()))
    }

    /// Decodes every record in parallel; the result keeps dataset order.
    pub fn load_all(&self, ds: &Dataset) -> Result<Vec<PixelGrid>> {
        ds.records().par_iter().map(|r| self.load(r)).collect()
    }

    /// Like [`ImageLoader::load_all`] but keeps going past failures.
    pub fn load_each(&self, ds: &Dataset) -> Vec<Result<PixelGrid>> {
        ds.records().par_iter().map(|r| self.load(r)).collect()
    }
}
