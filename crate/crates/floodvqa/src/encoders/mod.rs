//! Frozen encoders and one-time feature extraction into [`crate::store`].
//!
//! Encoders are looked up by name in a static registry. The
//! [`EncoderProvider`] trait is the seam between the pipeline and the
//! backbone implementation; [`CandleProvider`] is the shipped one.

pub mod image;
pub mod text;
pub mod weights;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use candle_core::Device;
use candle_nn::Activation;
use candle_transformers::models::convnext;
use candle_transformers::models::xlm_roberta::Config as RobertaConfig;
use floodvqa_core::QAPair;
use ::image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::{FeatureStore, Manifest, StoreWriter};
use self::image::{CandleImageEncoder, ImageArchitecture, IMAGENET_MEAN, IMAGENET_STD};
use self::text::{CandleTextEncoder, HashingTokenizer, HfTokenizer, Tokenize};
pub use self::weights::{WeightBank, WeightSource, TOKENIZER_FILE, WEIGHTS_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Text => "text",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "image" | "visual" => Ok(Modality::Image),
            "text" | "question" => Ok(Modality::Text),
            _ => Err(Error::Config(format!("unknown modality {s:?} (expected image or text)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Preprocess {
    Image { resolution: u32, mean: [f32; 3], std: [f32; 3] },
    Text { tokenizer: &'static str, max_length: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub name: String,
    pub modality: Modality,
    pub output_dim: usize,
    pub preprocess: Preprocess,
}

#[derive(Clone)]
pub enum Architecture {
    Text(RobertaConfig),
    Image(ImageArchitecture),
}

pub const ENCODER_NAMES: [&str; 7] = [
    "roberta-large",
    "roberta-base",
    "roberta-tiny",
    "resnet18",
    "resnet50",
    "convnext-atto",
    "convnext-large",
];

fn roberta(hidden: usize, layers: usize, heads: usize, intermediate: usize) -> RobertaConfig {
    RobertaConfig {
        hidden_size: hidden,
        layer_norm_eps: 1e-5,
        attention_probs_dropout_prob: 0.1,
        hidden_dropout_prob: 0.1,
        num_attention_heads: heads,
        position_embedding_type: "absolute".into(),
        intermediate_size: intermediate,
        hidden_act: Activation::Gelu,
        num_hidden_layers: layers,
        vocab_size: 50265,
        max_position_embeddings: 514,
        type_vocab_size: 1,
        pad_token_id: 1,
    }
}

fn image_spec(name: &str, output_dim: usize) -> EncoderSpec {
    EncoderSpec {
        name: name.into(),
        modality: Modality::Image,
        output_dim,
        preprocess: Preprocess::Image {
            resolution: 224,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        },
    }
}

fn text_spec(name: &str, output_dim: usize) -> EncoderSpec {
    EncoderSpec {
        name: name.into(),
        modality: Modality::Text,
        output_dim,
        preprocess: Preprocess::Text {
            tokenizer: TOKENIZER_FILE,
            max_length: 512,
        },
    }
}

/// Spec and architecture for a registered encoder.
pub fn lookup(name: &str) -> Result<(EncoderSpec, Architecture)> {
    let entry = match name {
        "roberta-large" => (text_spec(name, 1024), Architecture::Text(roberta(1024, 24, 16, 4096))),
        "roberta-base" => (text_spec(name, 768), Architecture::Text(roberta(768, 12, 12, 3072))),
        // test-scale: RoBERTa layout with toy dimensions
        "roberta-tiny" => (text_spec(name, 64), Architecture::Text(roberta(64, 2, 4, 128))),
        "resnet18" => (image_spec(name, 512), Architecture::Image(ImageArchitecture::ResNet18)),
        "resnet50" => (image_spec(name, 2048), Architecture::Image(ImageArchitecture::ResNet50)),
        "convnext-atto" => (
            image_spec(name, 320),
            Architecture::Image(ImageArchitecture::ConvNext(convnext::Config::atto(), 320)),
        ),
        "convnext-large" => (
            image_spec(name, 1536),
            Architecture::Image(ImageArchitecture::ConvNext(convnext::Config::large(), 1536)),
        ),
        _ => {
            return Err(Error::Config(format!(
                "unknown encoder {name:?}; registered: {}",
                ENCODER_NAMES.join(", ")
            )))
        }
    };
    Ok(entry)
}

pub fn spec(name: &str) -> Result<EncoderSpec> {
    lookup(name).map(|(s, _)| s)
}

pub trait TextEncoder: Send + Sync {
    fn spec(&self) -> &EncoderSpec;
    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;
    fn weights_checksum(&self) -> Result<String>;

    fn encode_text(&self, text: &str) -> Result<Vec<f32>> {
        Ok(self.encode_batch(&[text])?.remove(0))
    }
}

pub trait ImageEncoder: Send + Sync {
    fn spec(&self) -> &EncoderSpec;
    fn encode_batch(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>>;
    fn weights_checksum(&self) -> Result<String>;

    fn encode_image(&self, image: &RgbImage) -> Result<Vec<f32>> {
        Ok(self.encode_batch(std::slice::from_ref(image))?.remove(0))
    }
}

/// Builds encoders by registry name.
pub trait EncoderProvider {
    fn text_encoder(&self, name: &str) -> Result<Box<dyn TextEncoder>>;
    fn image_encoder(&self, name: &str) -> Result<Box<dyn ImageEncoder>>;
}

/// Candle CPU backbones with weights from a [`WeightSource`].
pub struct CandleProvider {
    pub source: WeightSource,
    pub device: Device,
}

impl CandleProvider {
    pub fn new(source: WeightSource) -> Self {
        CandleProvider {
            source,
            device: Device::Cpu,
        }
    }

    fn weights(&self, name: &str) -> Result<(WeightBank, candle_nn::VarBuilder<'static>)> {
        match &self.source {
            WeightSource::Directory(_) => {
                let dir = self.source.encoder_dir(name).expect("directory source");
                WeightBank::from_safetensors(&dir.join(WEIGHTS_FILE), &self.device)
            }
            WeightSource::Seeded(seed) => Ok(WeightBank::seeded(*seed, &self.device)),
        }
    }
}

impl EncoderProvider for CandleProvider {
    fn text_encoder(&self, name: &str) -> Result<Box<dyn TextEncoder>> {
        let (spec, arch) = lookup(name)?;
        let Architecture::Text(config) = arch else {
            return Err(Error::encoder(name, "is an image encoder"));
        };
        let tokenizer: Box<dyn Tokenize> = match &self.source {
            WeightSource::Directory(_) => {
                let dir = self.source.encoder_dir(name).expect("directory source");
                Box::new(HfTokenizer::from_file(&dir.join(TOKENIZER_FILE))?)
            }
            WeightSource::Seeded(_) => Box::new(HashingTokenizer::new(config.vocab_size as u32)),
        };
        let (bank, vb) = self.weights(name)?;
        let encoder = CandleTextEncoder::new(spec, &config, tokenizer, bank, vb, self.device.clone())?;
        Ok(Box::new(encoder))
    }

    fn image_encoder(&self, name: &str) -> Result<Box<dyn ImageEncoder>> {
        let (spec, arch) = lookup(name)?;
        let Architecture::Image(arch) = arch else {
            return Err(Error::encoder(name, "is a text encoder"));
        };
        let (bank, vb) = self.weights(name)?;
        let encoder = CandleImageEncoder::new(spec, &arch, bank, vb, self.device.clone())?;
        Ok(Box::new(encoder))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    /// A complete, checksum-valid store covering every item was already on
    /// disk; nothing was encoded.
    Reused,
    Written,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub outcome: CacheOutcome,
    pub manifest: Manifest,
}

/// Encodes `ids` in batches and writes them to a store at `dir`, unless a
/// valid store for the same encoder already covers them.
///
/// `encode` receives indices into `ids` and returns one vector per index.
pub fn extract_and_cache<F>(
    ids: &[String],
    encoder_name: &str,
    output_dim: usize,
    dir: &Path,
    batch_size: usize,
    mut encode: F,
) -> Result<Extraction>
where
    F: FnMut(&[usize]) -> Result<Vec<Vec<f32>>>,
{
    if batch_size == 0 {
        return Err(Error::Config("extraction batch size must be positive".into()));
    }
    if FeatureStore::manifest_exists(dir) {
        let store = FeatureStore::open(dir)?;
        let mismatch = |message: String| Error::Store {
            path: dir.to_path_buf(),
            message: format!("{message}; delete the directory to re-extract"),
        };
        if store.encoder_name() != encoder_name {
            return Err(mismatch(format!(
                "holds features from {:?}, not {encoder_name:?}",
                store.encoder_name()
            )));
        }
        if store.output_dim() != output_dim {
            return Err(mismatch(format!(
                "has width {}, expected {output_dim}",
                store.output_dim()
            )));
        }
        if let Some(missing) = ids.iter().find(|id| !store.contains(id)) {
            return Err(mismatch(format!("does not contain item {missing:?}")));
        }
        log::info!("{}: reusing {} cached vectors", dir.display(), store.len());
        return Ok(Extraction {
            outcome: CacheOutcome::Reused,
            manifest: store.manifest().clone(),
        });
    }

    let mut seen = HashSet::new();
    let unique: Vec<usize> = (0..ids.len()).filter(|&i| seen.insert(ids[i].as_str())).collect();
    let mut writer = StoreWriter::create(dir, encoder_name, output_dim)?;
    for (b, chunk) in unique.chunks(batch_size).enumerate() {
        let vectors = encode(chunk)?;
        if vectors.len() != chunk.len() {
            return Err(Error::encoder(
                encoder_name,
                format!("returned {} vectors for a batch of {}", vectors.len(), chunk.len()),
            ));
        }
        for (&i, v) in chunk.iter().zip(&vectors) {
            if v.len() != output_dim {
                return Err(Error::encoder(
                    encoder_name,
                    format!("produced width {} for {:?}, registry says {output_dim}", v.len(), ids[i]),
                ));
            }
            writer.append(&ids[i], v)?;
        }
        log::debug!("{encoder_name}: batch {} ({} items)", b + 1, chunk.len());
    }
    let manifest = writer.finish()?;
    log::info!("{}: wrote {} vectors", dir.display(), manifest.count);
    Ok(Extraction {
        outcome: CacheOutcome::Written,
        manifest,
    })
}

/// Question features keyed by question id.
pub fn extract_text(encoder: &dyn TextEncoder, pairs: &[QAPair], dir: &Path, batch_size: usize) -> Result<Extraction> {
    let ids: Vec<String> = pairs.iter().map(|p| p.question_id.clone()).collect();
    let spec = encoder.spec();
    extract_and_cache(&ids, &spec.name, spec.output_dim, dir, batch_size, |rows| {
        let texts: Vec<&str> = rows.iter().map(|&i| pairs[i].question_text.as_str()).collect();
        encoder.encode_batch(&texts)
    })
}

/// Image features keyed by image id; files are decoded in parallel per batch.
pub fn extract_images(
    encoder: &dyn ImageEncoder,
    images: &[(String, PathBuf)],
    dir: &Path,
    batch_size: usize,
) -> Result<Extraction> {
    let ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
    let spec = encoder.spec();
    extract_and_cache(&ids, &spec.name, spec.output_dim, dir, batch_size, |rows| {
        let decoded: Vec<RgbImage> = rows
            .par_iter()
            .map(|&i| {
                let path = &images[i].1;
                self::image::decode_image_file(path).map(|img| self::image::to_rgb(&img, &path.display().to_string()))
            })
            .collect::<Result<_>>()?;
        encoder.encode_batch(&decoded)
    })
}

/// Width of the vectors an encoder actually produces.
pub fn probe_text_dim(encoder: &dyn TextEncoder) -> Result<usize> {
    Ok(encoder.encode_text("Is the road flooded?")?.len())
}

pub fn probe_image_dim(encoder: &dyn ImageEncoder) -> Result<usize> {
    let resolution = match encoder.spec().preprocess {
        Preprocess::Image { resolution, .. } => resolution,
        Preprocess::Text { .. } => 224,
    };
    let blank = RgbImage::new(resolution, resolution);
    Ok(encoder.encode_image(&blank)?.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_widths() {
        let widths: Vec<(String, usize)> = ENCODER_NAMES
            .iter()
            .map(|n| spec(n).map(|s| (s.name, s.output_dim)).unwrap())
            .collect();
        assert!(widths.contains(&("roberta-large".into(), 1024)));
        assert!(widths.contains(&("resnet50".into(), 2048)));
        assert!(widths.contains(&("convnext-large".into(), 1536)));
        assert!(spec("vgg16").is_err());
    }

    #[test]
    fn cache_reuse_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = ["a", "b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let calls = std::cell::Cell::new(0);
        let mut enc = |rows: &[usize]| {
            calls.set(calls.get() + 1);
            Ok(rows.iter().map(|&i| vec![i as f32; 3]).collect())
        };
        let first = extract_and_cache(&ids, "toy", 3, dir.path(), 2, &mut enc).unwrap();
        assert_eq!(first.outcome, CacheOutcome::Written);
        assert_eq!(first.manifest.count, 3);
        let second = extract_and_cache(&ids, "toy", 3, dir.path(), 2, &mut enc).unwrap();
        assert_eq!(second.outcome, CacheOutcome::Reused);
        assert_eq!(calls.get(), 2);
        assert!(extract_and_cache(&ids, "other", 3, dir.path(), 2, &mut enc).is_err());
        let more = vec!["z".to_string()];
        assert!(extract_and_cache(&more, "toy", 3, dir.path(), 2, &mut enc).is_err());
    }

    #[test]
    fn wrong_width_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ids = vec!["a".to_string()];
        let err = extract_and_cache(&ids, "toy", 4, dir.path(), 8, |rows| Ok(vec![vec![0.0; 3]; rows.len()])).unwrap_err();
        assert!(err.to_string().contains("width 3"));
    }
}
