//! Uniform contract over the supported convolutional backbones: pretrained
//! loading, head replacement, parameter-group freezing, prediction and
//! checkpointing.
//!
//! Every model is split into two parameter groups. The *body* is the
//! convolutional feature extractor; the *head* is the final affine layer
//! mapping pooled features to class logits.

mod checkpoint;
mod densenet;
mod layers;
mod mobilenet;
mod params;
mod resnet;
mod stub;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::{DType, Device, Module, Tensor, Var};
use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, open_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use params::ParamStore;

use crate::augment::PixelGrid;
use crate::ensemble::ClassProbabilities;
use crate::error::{Error, Result};
use crate::labels::LabelSpace;
use crate::loss::softmax;
use densenet::DenseNet121;
use layers::Linear;
use mobilenet::MobileNetV1;
use params::{ParamBuilder, Source};
use resnet::ResNet50;
use stub::StubNet;

/// Seed the bundled stub "pretrained" weights are generated from.
const STUB_PRETRAINED_SEED: u64 = 0x5EED_0001;
/// Width of the stub's original classification head.
const STUB_PRETRAINED_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneName {
    Resnet50,
    Densenet121,
    Mobilenet,
    Stub,
}

impl BackboneName {
    pub const ALL: [BackboneName; 4] = [
        BackboneName::Resnet50,
        BackboneName::Densenet121,
        BackboneName::Mobilenet,
        BackboneName::Stub,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Resnet50 => "resnet50",
            BackboneName::Densenet121 => "densenet121",
            BackboneName::Mobilenet => "mobilenet",
            BackboneName::Stub => "stub",
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            BackboneName::Resnet50 => resnet::FEATURES,
            BackboneName::Densenet121 => densenet::FEATURES,
            BackboneName::Mobilenet => mobilenet::FEATURES,
            BackboneName::Stub => stub::FEATURES,
        }
    }

    /// Key prefix of the original classification layer in a pretrained weight file.
    fn pretrained_head_prefix(self) -> &'static str {
        match self {
            BackboneName::Resnet50 => "fc",
            BackboneName::Densenet121 | BackboneName::Mobilenet => "classifier",
            BackboneName::Stub => "head",
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s).ok_or_else(|| {
            Error::Contract(format!(
                "unknown backbone `{s}` (expected resnet50, densenet121, mobilenet or stub)"
            ))
        })
    }
}

/// Per-channel statistics the pretrained weights expect, on `[0, 1]` pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

const IMAGENET: Normalization = Normalization {
    mean: [0.485, 0.456, 0.406],
    std: [0.229, 0.224, 0.225],
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: BackboneName,
    /// `(height, width)` in pixels.
    pub input_resolution: (usize, usize),
    pub normalization: Normalization,
}

impl BackboneSpec {
    /// Native resolution and normalization of the named backbone.
    pub fn native(name: BackboneName) -> Self {
        match name {
            BackboneName::Stub => Self {
                name,
                input_resolution: (64, 64),
                normalization: Normalization {
                    mean: [0.5; 3],
                    std: [0.25; 3],
                },
            },
            _ => Self {
                name,
                input_resolution: (224, 224),
                normalization: IMAGENET,
            },
        }
    }

    pub fn with_resolution(mut self, height: usize, width: usize) -> Result<Self> {
        if height < 32 || width < 32 {
            return Err(Error::Contract(format!(
                "input resolution {height}×{width} is below the 32×32 minimum"
            )));
        }
        self.input_resolution = (height, width);
        Ok(self)
    }
}

impl FromStr for BackboneSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(Self::native(s.parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Body,
    Head,
}

/// A subset of `{body, head}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<ParamGroup>", try_from = "Vec<ParamGroup>")]
pub struct ParamGroups {
    body: bool,
    head: bool,
}

impl ParamGroups {
    pub const HEAD: ParamGroups = ParamGroups {
        body: false,
        head: true,
    };
    pub const ALL: ParamGroups = ParamGroups {
        body: true,
        head: true,
    };

    pub fn from_groups(groups: &[ParamGroup]) -> Self {
        Self {
            body: groups.contains(&ParamGroup::Body),
            head: groups.contains(&ParamGroup::Head),
        }
    }

    pub fn contains(self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Body => self.body,
            ParamGroup::Head => self.head,
        }
    }

    pub fn is_empty(self) -> bool {
        !self.body && !self.head
    }

    pub fn complement(self) -> Self {
        Self {
            body: !self.body,
            head: !self.head,
        }
    }
}

impl From<ParamGroups> for Vec<ParamGroup> {
    fn from(g: ParamGroups) -> Self {
        let mut out = Vec::new();
        if g.body {
            out.push(ParamGroup::Body);
        }
        if g.head {
            out.push(ParamGroup::Head);
        }
        out
    }
}

impl TryFrom<Vec<ParamGroup>> for ParamGroups {
    type Error = String;

    fn try_from(v: Vec<ParamGroup>) -> std::result::Result<Self, String> {
        Ok(Self::from_groups(&v))
    }
}

impl fmt::Display for ParamGroups {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Vec::<ParamGroup>::from(*self)
            .into_iter()
            .map(|g| match g {
                ParamGroup::Body => "body",
                ParamGroup::Head => "head",
            })
            .collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

#[derive(Debug, Clone)]
enum Body {
    Stub(StubNet),
    ResNet50(ResNet50),
    DenseNet121(DenseNet121),
    MobileNet(MobileNetV1),
}

impl Body {
    fn build(name: BackboneName, pb: &ParamBuilder) -> Result<Self> {
        Ok(match name {
            BackboneName::Stub => Body::Stub(StubNet::new(pb)?),
            BackboneName::Resnet50 => Body::ResNet50(ResNet50::new(pb)?),
            BackboneName::Densenet121 => Body::DenseNet121(DenseNet121::new(pb)?),
            BackboneName::Mobilenet => Body::MobileNet(MobileNetV1::new(pb)?),
        })
    }
}

impl Module for Body {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        match self {
            Body::Stub(m) => m.forward(x),
            Body::ResNet50(m) => m.forward(x),
            Body::DenseNet121(m) => m.forward(x),
            Body::MobileNet(m) => m.forward(x),
        }
    }
}

/// A backbone with a classification head and a record of which groups train.
///
/// Parameters live in shared `Var` storage, so the model is deliberately not
/// `Clone`: take a [`ModelSnapshot`] to keep a copy of the weights.
#[derive(Debug)]
pub struct AdaptedModel {
    spec: BackboneSpec,
    body: Body,
    body_params: ParamStore,
    head: Linear,
    head_params: ParamStore,
    trainable: ParamGroups,
    label_space: Option<LabelSpace>,
}

/// Deep copy of a model's parameters.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    body: BTreeMap<String, Tensor>,
    head: BTreeMap<String, Tensor>,
}

fn build_head(feature_dim: usize, classes: usize, source: Source) -> Result<(Linear, ParamStore)> {
    let pb = ParamBuilder::new(source);
    let head = Linear::new(&pb, feature_dim, classes)?;
    Ok((head, pb.finish()))
}

fn pretrained_path(dir: &Path, name: BackboneName) -> PathBuf {
    dir.join(format!("{name}.safetensors"))
}

/// Splits a flat pretrained tensor map into body tensors and head tensors
/// (the latter with the head prefix stripped).
fn split_head(
    name: BackboneName,
    mut tensors: HashMap<String, Tensor>,
) -> (HashMap<String, Tensor>, HashMap<String, Tensor>) {
    let prefix = format!("{}.", name.pretrained_head_prefix());
    let head_keys: Vec<String> = tensors
        .keys()
        .filter(|k| k.starts_with(&prefix))
        .cloned()
        .collect();
    let head = head_keys
        .into_iter()
        .map(|k| {
            let t = tensors.remove(&k).expect("key listed above");
            (k[prefix.len()..].to_string(), t)
        })
        .collect();
    (tensors, head)
}

/// Loads pretrained body and original head weights.
///
/// Real backbones read `<weights_dir>/<name>.safetensors` using torchvision
/// parameter names (`fc.*` / `classifier.*` hold the original head). The stub
/// backbone's weights are bundled: they are generated from a fixed seed.
pub fn load_pretrained(spec: &BackboneSpec, weights_dir: &Path) -> Result<AdaptedModel> {
    if spec.name == BackboneName::Stub {
        let body_source = Source::seeded(STUB_PRETRAINED_SEED);
        let head_source = Source::seeded(STUB_PRETRAINED_SEED + 1);
        let pb = ParamBuilder::new(body_source);
        let body = Body::build(spec.name, &pb)?;
        let (head, head_params) = build_head(stub::FEATURES, STUB_PRETRAINED_CLASSES, head_source)?;
        return Ok(AdaptedModel {
            spec: *spec,
            body,
            body_params: pb.finish(),
            head,
            head_params,
            trainable: ParamGroups::ALL,
            label_space: None,
        });
    }

    let path = pretrained_path(weights_dir, spec.name);
    let dependency = |reason: String| Error::Dependency {
        backbone: spec.name.to_string(),
        expected: path.display().to_string(),
        reason,
    };
    if !path.is_file() {
        return Err(dependency(
            "file not found; export the ImageNet weights to safetensors with torchvision parameter names"
                .into(),
        ));
    }
    let tensors =
        candle_core::safetensors::load(&path, &Device::Cpu).map_err(|e| dependency(e.to_string()))?;
    let (body_tensors, head_tensors) = split_head(spec.name, tensors);
    let pb = ParamBuilder::new(Source::Tensors(&body_tensors));
    let body = Body::build(spec.name, &pb).map_err(|e| dependency(e.to_string()))?;
    let body_params = pb.finish();
    let classes = head_tensors.get("weight").map(|w| w.dims()[0]).ok_or_else(|| {
        dependency(format!(
            "no `{}.weight` tensor",
            spec.name.pretrained_head_prefix()
        ))
    })?;
    let (head, head_params) = build_head(spec.name.feature_dim(), classes, Source::Tensors(&head_tensors))
        .map_err(|e| dependency(e.to_string()))?;
    Ok(AdaptedModel {
        spec: *spec,
        body,
        body_params,
        head,
        head_params,
        trainable: ParamGroups::ALL,
        label_space: None,
    })
}

/// Writes a randomly initialized weight file in the layout [`load_pretrained`]
/// reads, with a 1000-way head. Useful for smoke-testing the architectures
/// without the real ImageNet weights.
pub fn write_random_weights(name: BackboneName, dir: &Path, seed: u64) -> Result<PathBuf> {
    if name == BackboneName::Stub {
        return Err(Error::Contract("the stub backbone's weights are bundled".into()));
    }
    let pb = ParamBuilder::new(Source::seeded(seed));
    Body::build(name, &pb)?;
    let body = pb.finish();
    let (_, head) = build_head(name.feature_dim(), 1000, Source::seeded(seed.wrapping_add(1)))?;
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for (k, var, _) in body.iter() {
        tensors.insert(k.to_string(), var.as_tensor().clone());
    }
    for (k, var, _) in head.iter() {
        tensors.insert(
            format!("{}.{k}", name.pretrained_head_prefix()),
            var.as_tensor().clone(),
        );
    }
    std::fs::create_dir_all(dir)?;
    let path = pretrained_path(dir, name);
    candle_core::safetensors::save(&tensors, &path)?;
    Ok(path)
}

/// Drops the current head and attaches a fresh `num_classes`-way affine head
/// initialized from `seed`. Body weights are untouched.
pub fn replace_head(m: AdaptedModel, num_classes: usize, seed: u64) -> Result<AdaptedModel> {
    if num_classes < 2 {
        return Err(Error::Contract(format!(
            "a classification head needs at least 2 outputs, got {num_classes}"
        )));
    }
    let (head, head_params) = build_head(m.spec.name.feature_dim(), num_classes, Source::seeded(seed))?;
    Ok(AdaptedModel {
        head,
        head_params,
        label_space: None,
        ..m
    })
}

/// Marks which parameter groups receive gradient updates. The head must train.
pub fn set_trainable(mut m: AdaptedModel, groups: ParamGroups) -> Result<AdaptedModel> {
    if groups.is_empty() {
        return Err(Error::Contract("no trainable parameter group given".into()));
    }
    if !groups.contains(ParamGroup::Head) {
        return Err(Error::Contract("the head must always be trainable".into()));
    }
    m.trainable = groups;
    Ok(m)
}

impl AdaptedModel {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn head_classes(&self) -> usize {
        self.head.out_features()
    }

    pub fn trainable_groups(&self) -> ParamGroups {
        self.trainable
    }

    pub fn frozen_groups(&self) -> ParamGroups {
        self.trainable.complement()
    }

    pub fn label_space(&self) -> Option<&LabelSpace> {
        self.label_space.as_ref()
    }

    /// Attaches class codes to the head; its width must match.
    pub fn set_label_space(&mut self, ls: LabelSpace) -> Result<()> {
        if ls.len() != self.head_classes() {
            return Err(Error::Contract(format!(
                "{}-class label space for a {}-way head",
                ls.len(),
                self.head_classes()
            )));
        }
        self.label_space = Some(ls);
        Ok(())
    }

    pub fn body_params(&self) -> &ParamStore {
        &self.body_params
    }

    pub fn head_params(&self) -> &ParamStore {
        &self.head_params
    }

    pub fn body_checksum(&self) -> Result<String> {
        self.body_params.checksum()
    }

    pub fn head_checksum(&self) -> Result<String> {
        self.head_params.checksum()
    }

    /// Variables an optimizer may update under the current trainable groups.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut vars: Vec<Var> = Vec::new();
        if self.trainable.body {
            vars.extend(self.body_params.trainable_vars().cloned());
        }
        if self.trainable.head {
            vars.extend(self.head_params.trainable_vars().cloned());
        }
        vars
    }

    pub fn snapshot(&self) -> Result<ModelSnapshot> {
        Ok(ModelSnapshot {
            body: self.body_params.snapshot()?,
            head: self.head_params.snapshot()?,
        })
    }

    pub fn restore(&self, snapshot: &ModelSnapshot) -> Result<()> {
        self.body_params.restore(&snapshot.body)?;
        self.head_params.restore(&snapshot.head)
    }

    /// `(N, 3, H, W)` normalized input → `(N, classes)` logits. When the body is
    /// frozen its output is detached, so no gradient reaches body parameters.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        let features = self.body.forward(input)?;
        let features = if self.trainable.body {
            features
        } else {
            features.detach()
        };
        Ok(self.head.forward(&features)?)
    }

    /// Normalized `(N, 3, H, W)` tensor from grids already at the input resolution.
    pub fn input_tensor(&self, images: &[&PixelGrid]) -> Result<Tensor> {
        let (h, w) = self.spec.input_resolution;
        let Normalization { mean, std } = self.spec.normalization;
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.channels() != 3 || img.height() != h || img.width() != w {
                return Err(Error::Input(format!(
                    "{} expects {h}×{w}×3 input, got {}×{}×{}",
                    self.spec.name,
                    img.height(),
                    img.width(),
                    img.channels()
                )));
            }
            let px = img.data();
            for c in 0..3 {
                let (m, s) = (mean[c], std[c]);
                data.extend(px.iter().skip(c).step_by(3).map(|&v| (v as f32 / 255.0 - m) / s));
            }
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, h, w), &Device::Cpu)?)
    }

    /// Softmax class probabilities for each image. Images are resized to the
    /// input resolution first; anything other than 3 channels is rejected.
    pub fn predict_batch(&self, images: &[PixelGrid]) -> Result<Vec<ClassProbabilities>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let resized: Vec<PixelGrid> = images
            .iter()
            .map(|img| self.preprocess(img))
            .collect::<Result<_>>()?;
        let refs: Vec<&PixelGrid> = resized.iter().collect();
        let logits = self.logits(&self.input_tensor(&refs)?)?.detach();
        let rows = logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        rows.into_iter()
            .map(|row| ClassProbabilities::new(softmax(&row)))
            .collect()
    }

    fn preprocess(&self, img: &PixelGrid) -> Result<PixelGrid> {
        if img.channels() != 3 {
            return Err(Error::Input(format!(
                "expected an RGB image, got {} channels",
                img.channels()
            )));
        }
        let (h, w) = self.spec.input_resolution;
        if img.height() == h && img.width() == w {
            return Ok(img.clone());
        }
        let buffer = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
            .ok_or_else(|| Error::Input("pixel buffer does not match its dimensions".into()))?;
        let resized = image::imageops::resize(&buffer, w as u32, h as u32, FilterType::Triangle);
        PixelGrid::new(h, w, 3, resized.into_raw())
    }
}

/// Softmax class probabilities of one image.
pub fn predict_probabilities(m: &AdaptedModel, img: &PixelGrid) -> Result<ClassProbabilities> {
    Ok(m.predict_batch(std::slice::from_ref(img))?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub() -> AdaptedModel {
        load_pretrained(
            &BackboneSpec::native(BackboneName::Stub),
            Path::new("/nonexistent"),
        )
        .unwrap()
    }

    fn test_image(seed: u8) -> PixelGrid {
        let data = (0..64 * 64 * 3)
            .map(|i: usize| (i.wrapping_mul(31).wrapping_add(seed as usize * 17) % 256) as u8)
            .collect();
        PixelGrid::new(64, 64, 3, data).unwrap()
    }

    #[test]
    fn names_parse() {
        for b in BackboneName::ALL {
            assert_eq!(b.as_str().parse::<BackboneName>().unwrap(), b);
        }
        assert!(matches!("vgg16".parse::<BackboneName>(), Err(Error::Contract(_))));
        assert!(matches!("vgg16".parse::<BackboneSpec>(), Err(Error::Contract(_))));
    }

    #[test]
    fn param_groups_serialize_as_lists() {
        assert_eq!(serde_json::to_string(&ParamGroups::HEAD).unwrap(), r#"["head"]"#);
        let all: ParamGroups = serde_json::from_str(r#"["body","head"]"#).unwrap();
        assert_eq!(all, ParamGroups::ALL);
        assert_eq!(
            ParamGroups::HEAD.complement(),
            ParamGroups::from_groups(&[ParamGroup::Body])
        );
    }

    #[test]
    fn stub_pretrained_load_is_deterministic() {
        let a = stub();
        let b = stub();
        assert_eq!(a.body_checksum().unwrap(), b.body_checksum().unwrap());
        assert_eq!(a.head_checksum().unwrap(), b.head_checksum().unwrap());
        assert_eq!(a.head_classes(), STUB_PRETRAINED_CLASSES);
    }

    #[test]
    fn zero_image_gives_finite_logits() {
        let m = stub();
        let zero = PixelGrid::new(64, 64, 3, vec![0; 64 * 64 * 3]).unwrap();
        let x = m.input_tensor(&[&zero]).unwrap();
        let logits = m
            .logits(&x)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn missing_weight_file_is_a_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_pretrained(&BackboneSpec::native(BackboneName::Resnet50), dir.path()).unwrap_err();
        match err {
            Error::Dependency {
                backbone, expected, ..
            } => {
                assert_eq!(backbone, "resnet50");
                assert!(expected.ends_with("resnet50.safetensors"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn head_replacement_keeps_the_body() {
        let m = stub();
        let body_before = m.body_checksum().unwrap();
        let m = replace_head(m, 7, 3).unwrap();
        assert_eq!(m.body_checksum().unwrap(), body_before);
        assert_eq!(m.head_classes(), 7);
        let p = predict_probabilities(&m, &test_image(1)).unwrap();
        assert_eq!(p.len(), 7);
    }

    #[test]
    fn head_init_is_seeded() {
        let a = replace_head(stub(), 7, 11).unwrap();
        let b = replace_head(stub(), 7, 11).unwrap();
        let c = replace_head(stub(), 7, 12).unwrap();
        assert_eq!(a.head_checksum().unwrap(), b.head_checksum().unwrap());
        assert_ne!(a.head_checksum().unwrap(), c.head_checksum().unwrap());
        assert!(matches!(replace_head(stub(), 1, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn head_must_stay_trainable() {
        let body_only = ParamGroups::from_groups(&[ParamGroup::Body]);
        assert!(matches!(
            set_trainable(stub(), body_only),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            set_trainable(stub(), ParamGroups::from_groups(&[])),
            Err(Error::Contract(_))
        ));
        let m = set_trainable(stub(), ParamGroups::HEAD).unwrap();
        assert_eq!(m.frozen_groups(), body_only);
        assert_eq!(m.trainable_vars().len(), m.head_params().len());
    }

    #[test]
    fn predictions_are_distributions_and_repeatable() {
        let m = replace_head(stub(), 7, 0).unwrap();
        let img = test_image(9);
        let a = predict_probabilities(&m, &img).unwrap();
        let b = predict_probabilities(&m, &img).unwrap();
        assert_eq!(a, b);
        assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(a.as_slice().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn off_resolution_images_are_resized_but_channels_checked() {
        let m = replace_head(stub(), 3, 0).unwrap();
        let big = PixelGrid::new(100, 80, 3, vec![128; 100 * 80 * 3]).unwrap();
        assert_eq!(predict_probabilities(&m, &big).unwrap().len(), 3);
        let gray = PixelGrid::new(64, 64, 1, vec![128; 64 * 64]).unwrap();
        assert!(matches!(predict_probabilities(&m, &gray), Err(Error::Input(_))));
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let m = stub();
        let snap = m.snapshot().unwrap();
        let before = m.body_checksum().unwrap();
        for var in m.trainable_vars() {
            var.set(&var.as_tensor().affine(2.0, 1.0).unwrap()).unwrap();
        }
        assert_ne!(m.body_checksum().unwrap(), before);
        m.restore(&snap).unwrap();
        assert_eq!(m.body_checksum().unwrap(), before);
    }
}
