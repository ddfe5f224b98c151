//! Pixel grids and the flip augmentation used during training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loader::ImageLoader;

/// Row-major `H × W × C` grid of 8-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Dimension(format!(
                "pixel grid must be non-empty, got {height}×{width}×{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}×{width}×{channels} grid needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    fn remap(&self, source_of: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in 0..self.width {
                let (sr, sc) = source_of(r, c);
                data.extend_from_slice(self.pixel(sr, sc));
            }
        }
        Self { data, ..*self }
    }
}

/// Mirrors columns: pixel `(r, c)` moves to `(r, W−1−c)`.
pub fn flip_horizontal(img: &PixelGrid) -> PixelGrid {
    let w = img.width;
    img.remap(|r, c| (r, w - 1 - c))
}

/// Mirrors rows: pixel `(r, c)` moves to `(H−1−r, c)`.
pub fn flip_vertical(img: &PixelGrid) -> PixelGrid {
    let h = img.height;
    img.remap(|r, c| (h - 1 - r, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augmentation {
    Identity,
    Horizontal,
    Vertical,
    Both,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::Identity,
        Augmentation::Horizontal,
        Augmentation::Vertical,
        Augmentation::Both,
    ];

    pub fn apply(self, img: &PixelGrid) -> PixelGrid {
        match self {
            Augmentation::Identity => img.clone(),
            Augmentation::Horizontal => flip_horizontal(img),
            Augmentation::Vertical => flip_vertical(img),
            Augmentation::Both => flip_vertical(&flip_horizontal(img)),
        }
    }
}

/// One uniformly drawn augmentation per sample, reproducible from `seed`.
pub fn augmentation_plan(len: usize, seed: u64) -> Vec<Augmentation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| Augmentation::ALL[rng.gen_range(0..4)]).collect()
}

/// Lazily decodes each labeled record in dataset order and applies its planned flip.
pub fn augmented_stream<'a>(
    ds: &'a Dataset,
    loader: &'a ImageLoader,
    seed: u64,
) -> Result<impl Iterator<Item = Result<(PixelGrid, usize)>> + 'a> {
    if !ds.is_labeled() {
        return Err(Error::Input(
            "augmented stream needs a fully labeled dataset".into(),
        ));
    }
    let plan = augmentation_plan(ds.len(), seed);
    Ok(ds.records().iter().zip(plan).map(move |(record, aug)| {
        let img = loader.load(record)?;
        Ok((aug.apply(&img), record.label.expect("checked labeled")))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, c: usize) -> PixelGrid {
        let data = (0..h * w * c).map(|i| (i * 7 % 251) as u8).collect();
        PixelGrid::new(h, w, c, data).unwrap()
    }

    #[test]
    fn horizontal_flip_of_a_pair_swaps_it() {
        let img = PixelGrid::new(1, 2, 1, vec![10, 20]).unwrap();
        assert_eq!(flip_horizontal(&img).data(), &[20, 10]);
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(matches!(
            PixelGrid::new(0, 3, 3, vec![]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            PixelGrid::new(2, 2, 3, vec![0; 5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn both_flips_rotate_a_3x3_by_half_a_turn() {
        // 180° rotation written out as an index permutation: k ↦ 8 − k.
        let img = PixelGrid::new(3, 3, 1, (0..9).collect()).unwrap();
        let rotated = flip_horizontal(&flip_vertical(&img));
        assert_eq!(rotated.data(), &[8, 7, 6, 5, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn flips_keep_channels_together() {
        let img = grid(2, 3, 3);
        let flipped = flip_horizontal(&img);
        assert_eq!(flipped.pixel(0, 0), img.pixel(0, 2));
        assert_eq!(flipped.pixel(1, 2), img.pixel(1, 0));
        assert_eq!(flip_vertical(&img).pixel(0, 1), img.pixel(1, 1));
    }

    #[test]
    fn plan_is_deterministic() {
        assert_eq!(augmentation_plan(500, 9), augmentation_plan(500, 9));
        assert_ne!(augmentation_plan(500, 9), augmentation_plan(500, 10));
    }

    #[test]
    fn plan_is_uniform_over_the_four_variants() {
        let plan = augmentation_plan(10_000, 2024);
        let mut counts = [0usize; 4];
        for a in plan {
            counts[Augmentation::ALL.iter().position(|x| *x == a).unwrap()] += 1;
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        // 3 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 16.27, "chi-square {chi2} for {counts:?}");
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() <= 0.02, "{counts:?}");
        }
    }
}
