//! Ground-truth ingestion, stratified splitting and split manifests.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelSpace;

/// Extensions tried, in order, when resolving `<image_id>` inside an image directory.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    label_space: LabelSpace,
    class_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>, label_space: LabelSpace) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut class_counts = vec![0; label_space.len()];
        for record in &records {
            if record.image_id.is_empty() {
                return Err(Error::Input("empty image id".into()));
            }
            if !seen.insert(record.image_id.as_str()) {
                return Err(Error::DuplicateId(record.image_id.clone()));
            }
            if let Some(label) = record.label {
                if label >= label_space.len() {
                    return Err(Error::Input(format!(
                        "label {label} of {} is outside the {}-class label space",
                        record.image_id,
                        label_space.len()
                    )));
                }
                class_counts[label] += 1;
            }
        }
        Ok(Self {
            records,
            label_space,
            class_counts,
        })
    }

    /// Unlabeled dataset with every image found in `dir`, ordered by image id.
    pub fn from_image_dir(dir: &Path, label_space: LabelSpace) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            let Some(ext) = ext else { continue };
            let Some(rank) = IMAGE_EXTENSIONS.iter().position(|e| *e == ext) else {
                continue;
            };
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            // Prefer .jpg over .jpeg over .png when an id exists in several formats.
            let keep = match by_id.get(stem) {
                Some((r, _)) => rank < *r,
                None => true,
            };
            if keep {
                by_id.insert(stem.to_string(), (rank, path.clone()));
            }
        }
        let records = by_id
            .into_iter()
            .map(|(image_id, (_, image_path))| ImageRecord {
                image_id,
                image_path,
                label: None,
            })
            .collect();
        Self::new(records, label_space)
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    /// image id → class for every labeled record.
    pub fn truth(&self) -> BTreeMap<String, usize> {
        self.records
            .iter()
            .filter_map(|r| r.label.map(|l| (r.image_id.clone(), l)))
            .collect()
    }

    /// Keeps records whose id is in `ids`, preserving order.
    pub fn subset(&self, ids: &HashSet<&str>) -> Result<Self> {
        let records = self
            .records
            .iter()
            .filter(|r| ids.contains(r.image_id.as_str()))
            .cloned()
            .collect();
        Self::new(records, self.label_space.clone())
    }
}

fn resolve_image(dir: &Path, image_id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
}

/// Parses a one-hot ground-truth CSV and resolves every id to a file in `image_dir`.
pub fn parse_ground_truth<R: Read>(
    csv_source: R,
    image_dir: &Path,
    label_space: &LabelSpace,
) -> Result<Dataset> {
    let rows = parse_label_rows(csv_source, label_space)?;
    let mut missing = Vec::new();
    let mut records = Vec::with_capacity(rows.len());
    for (image_id, label) in rows {
        match resolve_image(image_dir, &image_id) {
            Some(image_path) => records.push(ImageRecord {
                image_id,
                image_path,
                label: Some(label),
            }),
            None => missing.push(image_id),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    Dataset::new(records, label_space.clone())
}

/// Parses the ground-truth CSV into `(image_id, class)` pairs without touching the filesystem.
pub fn parse_label_rows<R: Read>(csv_source: R, label_space: &LabelSpace) -> Result<Vec<(String, usize)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(csv_source);
    let mut rows = reader.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::Format("empty ground-truth file (no header row)".into()))??;
    let header: Vec<&str> = header.iter().collect();
    label_space.check_header(&header)?;

    let k = label_space.len();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in rows.enumerate() {
        let row = row?;
        let row_no = i + 2;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        let image_id = row[0].trim().to_string();
        let label_err = |reason: String| Error::Label {
            row: row_no,
            image_id: image_id.clone(),
            reason,
        };
        if image_id.is_empty() {
            return Err(label_err("empty image id".into()));
        }
        if row.len() != k + 1 {
            return Err(label_err(format!(
                "expected {} values, found {}",
                k,
                row.len() - 1
            )));
        }
        let mut label = None;
        for (c, field) in row.iter().skip(1).enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| label_err(format!("value `{field}` is not a number")))?;
            if value == 1.0 {
                if label.is_some() {
                    return Err(label_err("more than one class set to 1.0".into()));
                }
                label = Some(c);
            } else if value != 0.0 {
                return Err(label_err(format!("value `{field}` is neither 0.0 nor 1.0")));
            }
        }
        let label = label.ok_or_else(|| label_err("no class set to 1.0".into()))?;
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateId(image_id));
        }
        out.push((image_id, label));
    }
    Ok(out)
}

/// Writes labeled records in the ground-truth layout (`1.0`/`0.0` one-hot columns).
pub fn write_ground_truth<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    writeln!(out, "{}", ds.label_space().csv_header())?;
    for record in ds.records() {
        let label = record
            .label
            .ok_or_else(|| Error::Input(format!("record {} has no label to serialize", record.image_id)))?;
        write!(out, "{}", record.image_id)?;
        for c in 0..ds.label_space().len() {
            out.write_all(if c == label { b",1.0" } else { b",0.0" })?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Exact rational in (0, 1), used for the validation fraction so that
/// per-class rounding never depends on binary floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    numer: u64,
    denom: u64,
}

impl Fraction {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 || numer == 0 || numer >= denom {
            return Err(Error::Contract(format!(
                "split fraction must lie strictly between 0 and 1, got {numer}/{denom}"
            )));
        }
        Ok(Self { numer, denom })
    }

    pub fn as_f64(self) -> f64 {
        self.numer as f64 / self.denom as f64
    }

    /// `round-half-up(self × count)`, computed in integers.
    pub fn round_half_up_of(self, count: usize) -> usize {
        let n = count as u128;
        ((2 * self.numer as u128 * n + self.denom as u128) / (2 * self.denom as u128)) as usize
    }
}

impl Default for Fraction {
    fn default() -> Self {
        Self { numer: 1, denom: 10 }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl FromStr for Fraction {
    type Err = Error;

    /// Accepts decimals (`0.1`, `.25`) and ratios (`1/10`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Contract(format!("cannot parse split fraction `{s}`"));
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| bad())?;
            let d = d.trim().parse().map_err(|_| bad())?;
            return Self::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let denom = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let numer = int
            .checked_mul(denom)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        let g = gcd(numer, denom);
        Self::new(numer / g.max(1), denom / g.max(1))
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Serialize for Fraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        let text = match Repr::deserialize(d)? {
            // `{}` on f64 prints the shortest decimal that round-trips, e.g. 0.1 → "0.1".
            Repr::Number(v) => format!("{v}"),
            Repr::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Dataset,
    pub validation: Dataset,
    pub seed: u64,
    pub fraction: Fraction,
}

/// Number of validation images drawn from a class of `class_count` records.
pub fn validation_count(fraction: Fraction, class_count: usize) -> usize {
    fraction.round_half_up_of(class_count).max(1)
}

/// Per-class stratified split. Each class draws its validation members from an
/// independent ChaCha stream (stream index = class index) of the top-level seed,
/// over the class's records sorted by image id, so the selection does not depend
/// on input row order.
pub fn stratified_split(ds: &Dataset, fraction: Fraction, seed: u64) -> Result<SplitResult> {
    let k = ds.label_space().len();
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); k];
    for record in ds.records() {
        let label = record
            .label
            .ok_or_else(|| Error::Input(format!("cannot split unlabeled record {}", record.image_id)))?;
        by_class[label].push(&record.image_id);
    }

    let mut validation_ids = HashSet::new();
    for (class, ids) in by_class.iter_mut().enumerate() {
        if ids.is_empty() {
            continue;
        }
        if ids.len() < 2 {
            return Err(Error::Split {
                class: ds.label_space().code(class).to_string(),
                reason: format!("needs at least 2 records, has {}", ids.len()),
            });
        }
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        ids.shuffle(&mut rng);
        let take = validation_count(fraction, ids.len());
        validation_ids.extend(ids[..take].iter().copied());
    }

    let (validation, train): (Vec<_>, Vec<_>) = ds
        .records()
        .iter()
        .cloned()
        .partition(|r| validation_ids.contains(r.image_id.as_str()));
    Ok(SplitResult {
        train: Dataset::new(train, ds.label_space().clone())?,
        validation: Dataset::new(validation, ds.label_space().clone())?,
        seed,
        fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Validation => "validation",
        }
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "validation" => Ok(Subset::Validation),
            other => Err(Error::Format(format!(
                "subset must be `train` or `validation`, got `{other}`"
            ))),
        }
    }
}

/// Writes the `image,subset` manifest, one row per input record in input order.
pub fn write_split_manifest<W: Write>(input: &Dataset, split: &SplitResult, mut out: W) -> Result<()> {
    let validation: HashSet<&str> = split
        .validation
        .records()
        .iter()
        .map(|r| r.image_id.as_str())
        .collect();
    writeln!(out, "image,subset")?;
    for record in input.records() {
        let subset = if validation.contains(record.image_id.as_str()) {
            Subset::Validation
        } else {
            Subset::Train
        };
        writeln!(out, "{},{}", record.image_id, subset.as_str())?;
    }
    Ok(())
}

pub fn read_split_manifest<R: Read>(source: R) -> Result<Vec<(String, Subset)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(source);
    let mut rows = reader.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::Format("empty split manifest".into()))??;
    if header.len() != 2 || &header[0] != "image" || &header[1] != "subset" {
        return Err(Error::Format(format!(
            "split manifest header must be `image,subset`, got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rows.map(|row| {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::Format(format!("manifest row has {} fields", row.len())));
        }
        Ok((row[0].to_string(), row[1].parse()?))
    })
    .collect()
}

/// Rebuilds a split from a manifest written for `ds`.
pub fn apply_split_manifest(
    ds: &Dataset,
    manifest: &[(String, Subset)],
    fraction: Fraction,
    seed: u64,
) -> Result<SplitResult> {
    let listed: BTreeMap<&str, Subset> = manifest.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let present: HashSet<&str> = ds.records().iter().map(|r| r.image_id.as_str()).collect();
    let only_left: Vec<String> = present
        .iter()
        .filter(|id| !listed.contains_key(*id))
        .map(|s| s.to_string())
        .collect();
    let only_right: Vec<String> = listed
        .keys()
        .filter(|id| !present.contains(*id))
        .map(|s| s.to_string())
        .collect();
    if !only_left.is_empty() || !only_right.is_empty() {
        return Err(Error::Alignment {
            only_left,
            only_right,
        });
    }
    let pick = |want: Subset| -> HashSet<&str> {
        listed
            .iter()
            .filter(|(_, s)| **s == want)
            .map(|(id, _)| *id)
            .collect()
    };
    Ok(SplitResult {
        train: ds.subset(&pick(Subset::Train))?,
        validation: ds.subset(&pick(Subset::Validation))?,
        seed,
        fraction,
    })
}
