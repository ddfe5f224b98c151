//! Per-model prediction sets, soft/hard ensembling and label decisions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::AdaptedModel;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labels::LabelSpace;
use crate::loader::ImageLoader;

/// Allowed deviation of a probability vector's sum from one.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// A non-negative vector summing to one (within [`SUM_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(Vec<f64>);

impl ClassProbabilities {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        Self::check(&p, SUM_TOLERANCE)?;
        Ok(Self(p))
    }

    /// Accepts a vector whose sum is off by at most `tolerance` (e.g. after
    /// printing at fixed precision) and rescales it to sum to one. Vectors
    /// already within rounding error of one are kept as they are.
    pub fn renormalized(p: Vec<f64>, tolerance: f64) -> Result<Self> {
        Self::check(&p, tolerance)?;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() <= p.len() as f64 * f64::EPSILON {
            return Ok(Self(p));
        }
        Ok(Self(p.into_iter().map(|v| v / sum).collect()))
    }

    fn check(p: &[f64], tolerance: f64) -> Result<()> {
        if p.is_empty() {
            return Err(Error::EmptyInput("empty probability vector".into()));
        }
        if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NumericInput(format!(
                "probability {v} is not a finite non-negative number"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::NumericInput(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, ties going to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest value; exact ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Probabilities from one model (or one ensemble) for a set of images.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub model_id: String,
    pub label_space: LabelSpace,
    pub rows: BTreeMap<String, ClassProbabilities>,
}

impl PredictionSet {
    pub fn new(model_id: impl Into<String>, label_space: LabelSpace) -> Self {
        Self {
            model_id: model_id.into(),
            label_space,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, image_id: impl Into<String>, p: ClassProbabilities) -> Result<()> {
        let image_id = image_id.into();
        if p.len() != self.label_space.len() {
            return Err(Error::Contract(format!(
                "{}-class probabilities for a {}-class label space",
                p.len(),
                self.label_space.len()
            )));
        }
        if self.rows.insert(image_id.clone(), p).is_some() {
            return Err(Error::DuplicateId(image_id));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Combiner {
    #[default]
    #[serde(rename = "soft", alias = "soft_average")]
    SoftAverage,
    #[serde(rename = "vote", alias = "majority_vote")]
    MajorityVote,
}

impl Combiner {
    pub fn as_str(self) -> &'static str {
        match self {
            Combiner::SoftAverage => "soft",
            Combiner::MajorityVote => "vote",
        }
    }

    pub fn combine(self, sets: &[PredictionSet]) -> Result<PredictionSet> {
        match self {
            Combiner::SoftAverage => combine_soft(sets),
            Combiner::MajorityVote => combine_majority(sets),
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" | "soft_average" => Ok(Combiner::SoftAverage),
            "vote" | "majority_vote" => Ok(Combiner::MajorityVote),
            other => Err(Error::Contract(format!(
                "unknown combiner `{other}` (expected soft or vote)"
            ))),
        }
    }
}

/// Which members to combine, and how.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    members: Vec<String>,
    combiner: Combiner,
}

impl EnsembleSpec {
    pub fn new(members: Vec<String>, combiner: Combiner) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Contract("an ensemble needs at least one member".into()));
        }
        let distinct: BTreeSet<&String> = members.iter().collect();
        if distinct.len() != members.len() {
            return Err(Error::Contract("ensemble members must be distinct".into()));
        }
        Ok(Self { members, combiner })
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }

    pub fn combiner(&self) -> Combiner {
        self.combiner
    }

    /// Picks the member sets out of `available` by model id and combines them.
    pub fn apply(&self, available: &[PredictionSet]) -> Result<PredictionSet> {
        let chosen: Vec<PredictionSet> = self
            .members
            .iter()
            .map(|id| {
                available
                    .iter()
                    .find(|s| &s.model_id == id)
                    .cloned()
                    .ok_or_else(|| Error::Input(format!("no predictions for ensemble member `{id}`")))
            })
            .collect::<Result<_>>()?;
        self.combiner.combine(&chosen)
    }
}

fn check_aligned(sets: &[PredictionSet]) -> Result<()> {
    let first = sets
        .first()
        .ok_or_else(|| Error::EmptyInput("no prediction sets to combine".into()))?;
    for other in &sets[1..] {
        if other.label_space != first.label_space {
            return Err(Error::Contract(format!(
                "`{}` and `{}` use different label spaces",
                first.model_id, other.model_id
            )));
        }
        if other.rows.len() != first.rows.len() || !other.rows.keys().eq(first.rows.keys()) {
            return Err(Error::Alignment {
                only_left: first
                    .rows
                    .keys()
                    .filter(|k| !other.rows.contains_key(*k))
                    .cloned()
                    .collect(),
                only_right: other
                    .rows
                    .keys()
                    .filter(|k| !first.rows.contains_key(*k))
                    .cloned()
                    .collect(),
            });
        }
    }
    Ok(())
}

fn combined_id(kind: &str, sets: &[PredictionSet]) -> String {
    let ids: BTreeSet<&str> = sets.iter().map(|s| s.model_id.as_str()).collect();
    format!("{kind}({})", ids.into_iter().collect::<Vec<_>>().join("+"))
}

/// Arithmetic mean of member probability vectors, per image.
///
/// Each component is summed in ascending order of its member values, so the
/// result is bit-identical for any member order.
pub fn combine_soft(sets: &[PredictionSet]) -> Result<PredictionSet> {
    check_aligned(sets)?;
    let k = sets[0].label_space.len();
    let n = sets.len() as f64;
    let mut out = PredictionSet::new(combined_id("soft", sets), sets[0].label_space.clone());
    let mut column = Vec::with_capacity(sets.len());
    for image_id in sets[0].rows.keys() {
        let mut mean = Vec::with_capacity(k);
        for c in 0..k {
            column.clear();
            column.extend(sets.iter().map(|s| s.rows[image_id].as_slice()[c]));
            column.sort_by(f64::total_cmp);
            mean.push(column.iter().sum::<f64>() / n);
        }
        let tolerance = SUM_TOLERANCE * sets.len() as f64;
        out.insert(
            image_id.clone(),
            ClassProbabilities::renormalized(mean, tolerance)?,
        )?;
    }
    Ok(out)
}

/// One vote per member for its argmax class; the output vector is the vote share.
pub fn combine_majority(sets: &[PredictionSet]) -> Result<PredictionSet> {
    check_aligned(sets)?;
    let k = sets[0].label_space.len();
    let n = sets.len() as f64;
    let mut out = PredictionSet::new(combined_id("vote", sets), sets[0].label_space.clone());
    for image_id in sets[0].rows.keys() {
        let mut votes = vec![0usize; k];
        for s in sets {
            votes[s.rows[image_id].argmax()] += 1;
        }
        let share = votes.into_iter().map(|v| v as f64 / n).collect();
        out.insert(
            image_id.clone(),
            ClassProbabilities::renormalized(share, SUM_TOLERANCE)?,
        )?;
    }
    Ok(out)
}

/// Argmax label per image, ties to the lowest class index.
pub fn decide_labels(ps: &PredictionSet) -> BTreeMap<String, usize> {
    ps.rows.iter().map(|(id, p)| (id.clone(), p.argmax())).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct PredictOptions {
    pub batch_size: usize,
    /// Leave undecodable images out of the result instead of failing.
    pub skip_failures: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            skip_failures: false,
        }
    }
}

/// Predictions plus the images that could not be decoded.
#[derive(Debug, Clone)]
pub struct PredictionReport {
    pub predictions: PredictionSet,
    pub failures: Vec<(String, String)>,
}

/// Applies the model to every record (no augmentation).
pub fn predict_dataset(
    m: &AdaptedModel,
    ds: &Dataset,
    model_id: &str,
    opts: PredictOptions,
) -> Result<PredictionReport> {
    let label_space = match m.label_space() {
        Some(ls) => ls.clone(),
        None if m.head_classes() == ds.label_space().len() => ds.label_space().clone(),
        None => {
            return Err(Error::Contract(format!(
                "{}-way head cannot predict the {}-class label space",
                m.head_classes(),
                ds.label_space().len()
            )))
        }
    };
    let (h, w) = m.spec().input_resolution;
    let loader = ImageLoader::new(h, w);
    let mut predictions = PredictionSet::new(model_id, label_space);
    let mut failures = Vec::new();
    for chunk in ds.records().chunks(opts.batch_size.max(1)) {
        let mut ids = Vec::with_capacity(chunk.len());
        let mut images = Vec::with_capacity(chunk.len());
        let decoded: Vec<_> = {
            use rayon::prelude::*;
            chunk.par_iter().map(|r| loader.load(r)).collect()
        };
        for (record, img) in chunk.iter().zip(decoded) {
            match img {
                Ok(img) => {
                    ids.push(record.image_id.clone());
                    images.push(img);
                }
                Err(e) => failures.push((record.image_id.clone(), e.to_string())),
            }
        }
        for (id, p) in ids.into_iter().zip(m.predict_batch(&images)?) {
            predictions.insert(id, p)?;
        }
    }
    if !failures.is_empty() && !opts.skip_failures {
        return Err(Error::UndecodableImages(failures));
    }
    Ok(PredictionReport {
        predictions,
        failures,
    })
}

/// Writes the submission layout: label-space header, then one row per image
/// with every probability at six decimals.
pub fn write_predictions<W: Write>(ps: &PredictionSet, mut out: W) -> Result<()> {
    writeln!(out, "{}", ps.label_space.csv_header())?;
    for (id, p) in &ps.rows {
        write!(out, "{id}")?;
        for v in p.as_slice() {
            write!(out, ",{v:.6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a prediction CSV. With `expected` set the header must match it;
/// otherwise the label space is taken from the header. Rows are rescaled to
/// sum to one after checking they are within print precision of it.
pub fn read_predictions<R: Read>(
    source: R,
    model_id: &str,
    expected: Option<&LabelSpace>,
) -> Result<PredictionSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rows = reader.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::Format("empty prediction file (no header row)".into()))??;
    let fields: Vec<&str> = header.iter().collect();
    let label_space = match expected {
        Some(ls) => ls.clone(),
        None => {
            if fields.first().map(|f| f.trim()) != Some("image") {
                return Err(Error::Format("header column 1 must be `image`".into()));
            }
            LabelSpace::new(&fields[1..])?
        }
    };
    label_space.check_header(&fields)?;
    let k = label_space.len();
    // Six-decimal printing moves each entry by at most 5e-7.
    let tolerance = SUM_TOLERANCE + 5e-7 * k as f64;
    let mut set = PredictionSet::new(model_id, label_space);
    for (i, row) in rows.enumerate() {
        let row = row?;
        let row_no = i + 2;
        if row.len() != k + 1 {
            return Err(Error::Format(format!(
                "row {row_no} has {} fields, expected {}",
                row.len(),
                k + 1
            )));
        }
        let values = row
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {row_no}: `{f}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = ClassProbabilities::renormalized(values, tolerance)
            .map_err(|e| Error::Format(format!("row {row_no} ({}): {e}", &row[0])))?;
        set.insert(row[0].trim(), p)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ls3() -> LabelSpace {
        LabelSpace::new(&["A", "B", "C"]).unwrap()
    }

    fn set(id: &str, rows: &[(&str, [f64; 3])]) -> PredictionSet {
        let mut s = PredictionSet::new(id, ls3());
        for (img, p) in rows {
            s.insert(*img, ClassProbabilities::new(p.to_vec()).unwrap())
                .unwrap();
        }
        s
    }

    fn lesion_onehot(class: usize) -> ClassProbabilities {
        let mut p = vec![0.0; 7];
        p[class] = 1.0;
        ClassProbabilities::new(p).unwrap()
    }

    #[test]
    fn worked_three_member_average() {
        let a = set("a", &[("x", [0.6, 0.3, 0.1])]);
        let b = set("b", &[("x", [0.2, 0.5, 0.3])]);
        let c = set("c", &[("x", [0.4, 0.4, 0.2])]);
        let out = combine_soft(&[a, b, c]).unwrap();
        let p = out.rows["x"].as_slice();
        for (got, want) in p.iter().zip([0.4, 0.4, 0.2]) {
            assert!((got - want).abs() < 1e-12, "{p:?}");
        }
        assert_eq!(out.model_id, "soft(a+b+c)");
    }

    #[test]
    fn single_member_soft_is_identity() {
        let a = set("a", &[("x", [0.6, 0.3, 0.1]), ("y", [0.0, 0.0, 1.0])]);
        let out = combine_soft(std::slice::from_ref(&a)).unwrap();
        assert_eq!(out.rows, a.rows);
    }

    #[test]
    fn majority_vote_counts_argmaxes() {
        let mut members = Vec::new();
        for (id, class) in [("r", 1), ("d", 1), ("m", 0)] {
            let mut s = PredictionSet::new(id, LabelSpace::lesions());
            s.insert("img", lesion_onehot(class)).unwrap();
            members.push(s);
        }
        let out = combine_majority(&members).unwrap();
        let p = out.rows["img"].as_slice();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(decide_labels(&out)["img"], 1);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let mut s = PredictionSet::new("t", LabelSpace::lesions());
        s.insert(
            "x",
            ClassProbabilities::new(vec![0.4, 0.4, 0.2, 0.0, 0.0, 0.0, 0.0]).unwrap(),
        )
        .unwrap();
        s.insert("y", lesion_onehot(5)).unwrap();
        let labels = decide_labels(&s);
        assert_eq!(labels["x"], 0);
        assert_eq!(labels["y"], 5);
    }

    #[test]
    fn split_votes_fall_back_to_the_lowest_class() {
        let a = set("a", &[("x", [0.1, 0.1, 0.8])]);
        let b = set("b", &[("x", [0.1, 0.8, 0.1])]);
        let out = combine_majority(&[a, b]).unwrap();
        assert_eq!(decide_labels(&out)["x"], 1);
    }

    #[test]
    fn misaligned_members_are_reported() {
        let a = set("a", &[("x", [1.0, 0.0, 0.0]), ("y", [1.0, 0.0, 0.0])]);
        let b = set("b", &[("x", [1.0, 0.0, 0.0]), ("z", [1.0, 0.0, 0.0])]);
        match combine_soft(&[a.clone(), b.clone()]) {
            Err(Error::Alignment {
                only_left,
                only_right,
            }) => {
                assert_eq!(only_left, vec!["y"]);
                assert_eq!(only_right, vec!["z"]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(combine_majority(&[a, b]), Err(Error::Alignment { .. })));
        assert!(matches!(combine_soft(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn ensemble_spec_validates_members() {
        assert!(EnsembleSpec::new(vec![], Combiner::SoftAverage).is_err());
        assert!(EnsembleSpec::new(vec!["a".into(), "a".into()], Combiner::SoftAverage).is_err());
        let a = set("a", &[("x", [0.6, 0.3, 0.1])]);
        let b = set("b", &[("x", [0.2, 0.5, 0.3])]);
        let spec = EnsembleSpec::new(vec!["b".into()], Combiner::MajorityVote).unwrap();
        let out = spec.apply(&[a, b]).unwrap();
        assert_eq!(decide_labels(&out)["x"], 1);
    }

    #[test]
    fn csv_layout_is_exact() {
        let mut s = PredictionSet::new("m", LabelSpace::lesions());
        s.insert(
            "ISIC_1",
            ClassProbabilities::new(vec![0.5, 0.25, 0.125, 0.0625, 0.0625, 0.0, 0.0]).unwrap(),
        )
        .unwrap();
        let mut bytes = Vec::new();
        write_predictions(&s, &mut bytes).unwrap();
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC\n\
             ISIC_1,0.500000,0.250000,0.125000,0.062500,0.062500,0.000000,0.000000\n"
        );
        let back = read_predictions(bytes.as_slice(), "m", None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rounded_rows_are_accepted_and_bad_rows_rejected() {
        let csv = "image,A,B,C\nx,0.333333,0.333333,0.333333\n";
        let s = read_predictions(csv.as_bytes(), "m", None).unwrap();
        assert!((s.rows["x"].as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let bad = "image,A,B,C\nx,0.5,0.6,0.0\n";
        assert!(matches!(
            read_predictions(bad.as_bytes(), "m", None),
            Err(Error::Format(_))
        ));
        let wrong_header = "image,A,B,D\nx,1,0,0\n";
        assert!(read_predictions(wrong_header.as_bytes(), "m", Some(&ls3())).is_err());
    }

    fn distribution() -> impl Strategy<Value = [f64; 3]> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b, c)| {
            let s = a + b + c + 1e-9;
            [a / s, b / s, (c + 1e-9) / s]
        })
    }

    proptest! {
        #[test]
        fn combiners_ignore_member_order(
            members in prop::collection::vec(prop::collection::vec(distribution(), 4), 1..6),
            rotation in 0usize..6,
        ) {
            let sets: Vec<PredictionSet> = members
                .iter()
                .enumerate()
                .map(|(m, rows)| {
                    let named: Vec<(String, [f64; 3])> =
                        rows.iter().enumerate().map(|(i, p)| (format!("img{i}"), *p)).collect();
                    let refs: Vec<(&str, [f64; 3])> = named.iter().map(|(i, p)| (i.as_str(), *p)).collect();
                    set(&format!("m{m}"), &refs)
                })
                .collect();
            let mut shuffled = sets.clone();
            shuffled.rotate_left(rotation % sets.len());
            shuffled.reverse();
            let soft = combine_soft(&sets).unwrap();
            prop_assert_eq!(&soft, &combine_soft(&shuffled).unwrap());
            let vote = combine_majority(&sets).unwrap();
            prop_assert_eq!(&vote, &combine_majority(&shuffled).unwrap());
            for (id, p) in &soft.rows {
                let sum: f64 = p.as_slice().iter().sum();
                prop_assert!((sum - 1.0).abs() <= SUM_TOLERANCE * sets.len() as f64);
                prop_assert!(p.as_slice().iter().all(|&v| v >= 0.0));
                let decided = vote.rows[id].argmax();
                prop_assert!(sets.iter().any(|s| s.rows[id].argmax() == decided));
            }
        }

        #[test]
        fn duplicated_member_average_is_idempotent(rows in prop::collection::vec(distribution(), 1..5), copies in 1usize..5) {
            let named: Vec<(String, [f64; 3])> =
                rows.iter().enumerate().map(|(i, p)| (format!("img{i}"), *p)).collect();
            let refs: Vec<(&str, [f64; 3])> = named.iter().map(|(i, p)| (i.as_str(), *p)).collect();
            let base = set("a", &refs);
            let sets: Vec<PredictionSet> = (0..copies)
                .map(|c| PredictionSet { model_id: format!("a{c}"), ..base.clone() })
                .collect();
            let out = combine_soft(&sets).unwrap();
            for (id, p) in &out.rows {
                for (x, y) in p.as_slice().iter().zip(base.rows[id].as_slice()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn scaling_keeps_decisions(rows in prop::collection::vec(distribution(), 1..8), scale in 0.01f64..100.0) {
            for p in rows {
                let scaled: Vec<f64> = p.iter().map(|v| v * scale).collect();
                prop_assert_eq!(argmax(&p), argmax(&scaled));
            }
        }
    }
}
