//! Experiment configuration: one TOML file, with command-line overrides.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/cnx"
//!
//! [data]
//! annotations = "FloodNet/Questions/Training Question.json"
//! images = "FloodNet/Images/Train_Image"
//!
//! [split]
//! test_image_fraction = 0.2002762430939227
//!
//! [encoders]
//! image = "convnext-large"
//! text = "roberta-large"
//! weights_dir = "weights"   # <dir>/<encoder>/model.safetensors
//! # seeded_weights = true   # offline smoke runs: untrained, deterministic
//! batch_size = 32
//!
//! [fusion]
//! method = "mul"
//!
//! [training]
//! epochs = 100
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! The top-level `seed` drives the split, head initialization and batch
//! shuffling.

use std::path::{Path, PathBuf};

use floodvqa_core::split::DEFAULT_TEST_IMAGE_FRACTION;
use floodvqa_core::{Activation, FusionConfig, FusionMethod, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::encoders::{self, Modality, WeightSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub annotations: Option<PathBuf>,
    pub images: Option<PathBuf>,
}

fn default_fraction() -> f64 {
    DEFAULT_TEST_IMAGE_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_fraction")]
    pub test_image_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_image_fraction: default_fraction(),
        }
    }
}

fn default_image_encoder() -> String {
    "convnext-large".into()
}
fn default_text_encoder() -> String {
    "roberta-large".into()
}
fn default_extract_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_image_encoder")]
    pub image: String,
    #[serde(default = "default_text_encoder")]
    pub text: String,
    pub weights_dir: Option<PathBuf>,
    #[serde(default)]
    pub seeded_weights: bool,
    #[serde(default = "default_extract_batch")]
    pub batch_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image: default_image_encoder(),
            text: default_text_encoder(),
            weights_dir: None,
            seeded_weights: false,
            batch_size: default_extract_batch(),
        }
    }
}

fn default_method() -> FusionMethod {
    FusionMethod::Mul
}
fn default_common_dim() -> usize {
    512
}
fn default_hidden() -> [usize; 2] {
    [512, 256]
}

/// Head settings; feature widths come from the stores at train time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(default = "default_method")]
    pub method: FusionMethod,
    #[serde(default = "default_common_dim")]
    pub common_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: [usize; 2],
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            method: default_method(),
            common_dim: default_common_dim(),
            hidden_dims: default_hidden(),
            activation: Activation::default(),
            dropout: 0.0,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub encoders: EncoderConfig,
    #[serde(default)]
    pub fusion: HeadConfig,
    #[serde(default)]
    pub training: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: default_out_dir(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            encoders: EncoderConfig::default(),
            fusion: HeadConfig::default(),
            training: TrainConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out_dir);
        for p in [&mut self.data.annotations, &mut self.data.images, &mut self.encoders.weights_dir]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        let f = self.split.test_image_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("split.test_image_fraction must be in (0, 1), got {f}")));
        }
        for (name, modality) in [(&self.encoders.image, Modality::Image), (&self.encoders.text, Modality::Text)] {
            let spec = encoders::spec(name)?;
            if spec.modality != modality {
                return Err(Error::Config(format!("encoder {name:?} is not a {modality} encoder")));
            }
        }
        if self.encoders.batch_size == 0 {
            return Err(Error::Config("encoders.batch_size must be positive".into()));
        }
        self.training.validate()?;
        Ok(())
    }

    pub fn weight_source(&self) -> Result<WeightSource> {
        match (&self.encoders.weights_dir, self.encoders.seeded_weights) {
            (_, true) => Ok(WeightSource::Seeded(self.seed)),
            (Some(dir), false) => Ok(WeightSource::Directory(dir.clone())),
            (None, false) => Err(Error::Config(
                "no encoder weights: set encoders.weights_dir (or encoders.seeded_weights for offline smoke runs)".into(),
            )),
        }
    }

    pub fn annotations(&self) -> Result<&Path> {
        self.data
            .annotations
            .as_deref()
            .ok_or_else(|| Error::Config("data.annotations is not set".into()))
    }

    pub fn images(&self) -> Result<&Path> {
        self.data
            .images
            .as_deref()
            .ok_or_else(|| Error::Config("data.images is not set".into()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn fusion_config(&self, image_dim: usize, text_dim: usize) -> FusionConfig {
        let mut f = FusionConfig::new(self.fusion.method, image_dim, text_dim);
        f.common_dim = self.fusion.common_dim;
        f.hidden_dims = self.fusion.hidden_dims;
        f.activation = self.fusion.activation;
        f.dropout = self.fusion.dropout;
        f.seed = self.seed;
        f
    }

    /// `(backbone)-(method)`, e.g. `CNX-mul`.
    pub fn model_tag(&self) -> String {
        format!("{}-{}", backbone_tag(&self.encoders.image), self.fusion.method.short_name())
    }

    pub fn splits_dir(&self) -> PathBuf {
        self.out_dir.join("splits")
    }

    pub fn split_path(&self) -> PathBuf {
        self.splits_dir().join(format!("split-seed{}.json", self.seed))
    }

    pub fn features_dir(&self, encoder: &str) -> PathBuf {
        self.out_dir.join("features").join(encoder)
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoints")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }
}

/// Short backbone name used in model tags.
pub fn backbone_tag(image_encoder: &str) -> String {
    match image_encoder {
        "resnet50" => "R50".into(),
        "resnet18" => "R18".into(),
        "convnext-large" => "CNX".into(),
        "convnext-atto" => "CNXa".into(),
        other => other.to_string(),
    }
}

/// Maps a `--backbone` value to a registered image encoder.
pub fn backbone_encoder(backbone: &str) -> Result<&'static str> {
    match backbone.to_ascii_lowercase().as_str() {
        "resnet50" | "r50" => Ok("resnet50"),
        "resnet18" | "r18" => Ok("resnet18"),
        "convnext" | "convnext-large" | "cnx" => Ok("convnext-large"),
        "convnext-atto" => Ok("convnext-atto"),
        _ => Err(Error::Config(format!(
            "unknown backbone {backbone:?} (expected resnet50, convnext, resnet18 or convnext-atto)"
        ))),
    }
}
