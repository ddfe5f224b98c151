//! Flat JSON run configuration. Missing keys take the published schedule's values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dermnet_core::backbone::{BackboneName, ParamGroups};
use dermnet_core::dataset::Fraction;
use dermnet_core::ensemble::Combiner;
use dermnet_core::labels::{LabelSpace, LESION_CODES};
use dermnet_core::training::{Schedule, TrainingPhase};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightMode {
    /// `"auto"`: inverse class frequency of the training subset.
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for WeightMode {
    fn default() -> Self {
        WeightMode::Named("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ground_truth: PathBuf,
    pub image_dir: PathBuf,
    pub run_dir: PathBuf,
    pub weights_dir: PathBuf,
    pub classes: Vec<String>,
    pub split_fraction: Fraction,
    pub seed: u64,
    pub backbones: Vec<BackboneName>,
    pub phase1_learning_rate: f64,
    pub phase1_epochs: usize,
    pub phase1_patience: usize,
    pub phase2_learning_rate: f64,
    pub phase2_epochs: usize,
    pub phase2_patience: usize,
    pub augment: bool,
    pub class_weights: WeightMode,
    pub batch_size: usize,
    pub momentum: f64,
    pub combiner: Combiner,
}

impl Default for RunConfig {
    fn default() -> Self {
        let standard = Schedule::standard();
        let [p1, p2] = standard.phases() else {
            unreachable!("published schedule has two phases")
        };
        Self {
            ground_truth: PathBuf::from("ISIC2018_Task3_Training_GroundTruth.csv"),
            image_dir: PathBuf::from("ISIC2018_Task3_Training_Input"),
            run_dir: PathBuf::from("runs/default"),
            weights_dir: PathBuf::from("weights"),
            classes: LESION_CODES.iter().map(|s| s.to_string()).collect(),
            split_fraction: Fraction::default(),
            seed: 0,
            backbones: vec![
                BackboneName::Resnet50,
                BackboneName::Densenet121,
                BackboneName::Mobilenet,
            ],
            phase1_learning_rate: p1.learning_rate,
            phase1_epochs: p1.max_epochs,
            phase1_patience: p1.patience,
            phase2_learning_rate: p2.learning_rate,
            phase2_epochs: p2.max_epochs,
            phase2_patience: p2.patience,
            augment: true,
            class_weights: WeightMode::default(),
            batch_size: 32,
            momentum: 0.9,
            combiner: Combiner::SoftAverage,
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut cfg.ground_truth,
            &mut cfg.image_dir,
            &mut cfg.run_dir,
            &mut cfg.weights_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.label_space()?;
        self.schedule()?;
        if self.batch_size == 0 {
            bail!("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!("momentum must lie in [0, 1)");
        }
        if let WeightMode::Named(name) = &self.class_weights {
            if name != "auto" {
                bail!("class_weights must be \"auto\" or an explicit list, got \"{name}\"");
            }
        }
        Ok(())
    }

    pub fn label_space(&self) -> anyhow::Result<LabelSpace> {
        Ok(LabelSpace::new(&self.classes)?)
    }

    pub fn schedule(&self) -> anyhow::Result<Schedule> {
        Ok(Schedule::new(vec![
            TrainingPhase::new(
                ParamGroups::HEAD,
                self.phase1_learning_rate,
                self.phase1_epochs,
                self.phase1_patience,
            )?,
            TrainingPhase::new(
                ParamGroups::ALL,
                self.phase2_learning_rate,
                self.phase2_epochs,
                self.phase2_patience,
            )?,
        ])?)
    }
}
