//! Desk-scale synthetic dataset: colored "lesions" on a skin-toned background.
//! Classes differ only by lesion color, so they are separable by color alone.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::LabelSpace;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub images: usize,
    /// Relative class frequencies; one entry per class.
    pub ratios: Vec<usize>,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            images: 600,
            ratios: vec![10, 3, 1],
            size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub label_space: LabelSpace,
    pub class_counts: Vec<usize>,
    pub ground_truth: PathBuf,
    pub image_dir: PathBuf,
}

const PALETTE: [(&str, [u8; 3]); 7] = [
    ("RED", [170, 35, 40]),
    ("GREEN", [40, 150, 60]),
    ("BLUE", [45, 60, 175]),
    ("YELLOW", [200, 190, 40]),
    ("PURPLE", [130, 40, 150]),
    ("CYAN", [40, 170, 170]),
    ("BLACK", [25, 25, 25]),
];

/// Splits `total` by `ratios` with the largest-remainder method (ties to the lower class).
pub fn allocate(total: usize, ratios: &[usize]) -> Vec<usize> {
    let sum: usize = ratios.iter().sum();
    let mut counts: Vec<usize> = ratios.iter().map(|r| total * r / sum).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(total * ratios[c] % sum));
    let short = total - counts.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        counts[c] += 1;
    }
    counts
}

pub fn make_synthetic(out_dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    let k = spec.ratios.len();
    if !(2..=PALETTE.len()).contains(&k) || spec.ratios.contains(&0) {
        return Err(Error::Contract(format!(
            "synthetic data needs 2..={} positive class ratios",
            PALETTE.len()
        )));
    }
    if spec.size < 16 {
        return Err(Error::Contract(
            "synthetic images must be at least 16 pixels wide".into(),
        ));
    }
    let codes: Vec<&str> = PALETTE[..k].iter().map(|(c, _)| *c).collect();
    let label_space = LabelSpace::new(&codes)?;
    let class_counts = allocate(spec.images, &spec.ratios);

    let image_dir = out_dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&image_dir)?;
    let ground_truth = out_dir.join(GROUND_TRUTH_FILE);
    let mut gt = std::io::BufWriter::new(std::fs::File::create(&ground_truth)?);
    writeln!(gt, "{}", label_space.csv_header())?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<usize> = class_counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);

    for (i, &class) in labels.iter().enumerate() {
        let id = format!("SYN_{i:05}");
        render(spec.size, PALETTE[class].1, &mut rng)
            .save(image_dir.join(format!("{id}.png")))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        write!(gt, "{id}")?;
        for c in 0..k {
            gt.write_all(if c == class { b",1.0" } else { b",0.0" })?;
        }
        writeln!(gt)?;
    }
    gt.flush()?;
    Ok(SyntheticDataset {
        label_space,
        class_counts,
        ground_truth,
        image_dir,
    })
}

fn render(size: usize, lesion: [u8; 3], rng: &mut ChaCha8Rng) -> image::RgbImage {
    let s = size as f64;
    let skin = [
        rng.gen_range(200..235) as f64,
        rng.gen_range(160..190) as f64,
        rng.gen_range(130..160) as f64,
    ];
    let cx = rng.gen_range(0.35 * s..0.65 * s);
    let cy = rng.gen_range(0.35 * s..0.65 * s);
    let rx = rng.gen_range(0.18 * s..0.32 * s);
    let ry = rng.gen_range(0.18 * s..0.32 * s);
    image::RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let dx = (x as f64 - cx) / rx;
        let dy = (y as f64 - cy) / ry;
        let inside = dx * dx + dy * dy <= 1.0;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let base = if inside { lesion[c] as f64 } else { skin[c] };
            px[c] = (base + rng.gen_range(-18.0..18.0)).clamp(0.0, 255.0) as u8;
        }
        image::Rgb(px)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_three_one_over_six_hundred() {
        assert_eq!(allocate(600, &[10, 3, 1]), vec![429, 128, 43]);
        assert_eq!(allocate(14, &[10, 3, 1]), vec![10, 3, 1]);
    }

    #[test]
    fn writes_parseable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            images: 12,
            ratios: vec![2, 1],
            size: 16,
            seed: 4,
        };
        let out = make_synthetic(dir.path(), &spec).unwrap();
        let ds = crate::dataset::parse_ground_truth(
            std::fs::File::open(&out.ground_truth).unwrap(),
            &out.image_dir,
            &out.label_space,
        )
        .unwrap();
        assert_eq!(ds.class_counts(), &[8, 4]);
        assert_eq!(out.label_space.csv_header(), "image,RED,GREEN");
    }
}
