//! Frozen image backbones: decode, resize, normalize, then global-average-pool
//! the final feature map.

use std::path::Path;

use candle_core::{Device, Module, Tensor};
use candle_nn::{Func, LayerNorm};
use candle_transformers::models::{convnext, resnet};
use image::{imageops::FilterType, ColorType, DynamicImage, RgbImage};
use rayon::prelude::*;

use super::weights::WeightBank;
use super::{EncoderSpec, ImageEncoder, Preprocess};
use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone)]
pub enum ImageArchitecture {
    ResNet18,
    ResNet50,
    ConvNext(convnext::Config, usize),
}

fn is_grayscale(color: ColorType) -> bool {
    matches!(color, ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16)
}

/// Converts to 3-channel RGB, replicating the luminance channel of grayscale
/// inputs.
pub fn to_rgb(image: &DynamicImage, source: &str) -> RgbImage {
    if is_grayscale(image.color()) {
        log::warn!("{source}: grayscale image replicated to 3 channels");
    }
    image.to_rgb8()
}

pub fn decode_image_file(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: format!("cannot decode: {e}"),
    })
}

/// Bilinear resize to `resolution²` and per-channel normalization, returned
/// in CHW order.
pub fn preprocess(image: &RgbImage, resolution: u32, mean: [f32; 3], std: [f32; 3]) -> Vec<f32> {
    let resized = if image.width() == resolution && image.height() == resolution {
        image.clone()
    } else {
        image::imageops::resize(image, resolution, resolution, FilterType::Triangle)
    };
    let plane = (resolution * resolution) as usize;
    let mut out = vec![0.0f32; 3 * plane];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = (px[c] as f32 / 255.0 - mean[c]) / std[c];
        }
    }
    out
}

pub struct CandleImageEncoder {
    spec: EncoderSpec,
    backbone: Func<'static>,
    head_norm: Option<LayerNorm>,
    bank: WeightBank,
    device: Device,
}

impl CandleImageEncoder {
    pub fn new(
        spec: EncoderSpec,
        architecture: &ImageArchitecture,
        bank: WeightBank,
        vb: candle_nn::VarBuilder<'static>,
        device: Device,
    ) -> Result<Self> {
        let (backbone, head_norm) = match architecture {
            ImageArchitecture::ResNet18 => (resnet::resnet18_no_final_layer(vb)?, None),
            ImageArchitecture::ResNet50 => (resnet::resnet50_no_final_layer(vb)?, None),
            ImageArchitecture::ConvNext(cfg, channels) => {
                // the pre-logits feature includes the head's LayerNorm
                let norm = candle_nn::layer_norm(*channels, 1e-6, vb.pp("head.norm"))?;
                (convnext::convnext_no_final_layer(cfg, vb)?, Some(norm))
            }
        };
        Ok(CandleImageEncoder {
            spec,
            backbone,
            head_norm,
            bank,
            device,
        })
    }
}

impl ImageEncoder for CandleImageEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn encode_batch(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let Preprocess::Image { resolution, mean, std } = self.spec.preprocess else {
            return Err(Error::encoder(&self.spec.name, "not an image encoder"));
        };
        let pixels: Vec<f32> = images
            .par_iter()
            .map(|img| preprocess(img, resolution, mean, std))
            .collect::<Vec<_>>()
            .concat();
        let r = resolution as usize;
        let input = Tensor::from_vec(pixels, (images.len(), 3, r, r), &self.device)?;
        let mut features = self.backbone.forward(&input)?;
        if let Some(norm) = &self.head_norm {
            features = norm.forward(&features)?;
        }
        Ok(features.to_vec2::<f32>()?)
    }

    fn weights_checksum(&self) -> Result<String> {
        self.bank.checksum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb};

    #[test]
    fn preprocess_layout_and_normalization() {
        let img = RgbImage::from_pixel(4, 4, Rgb([255, 0, 128]));
        let out = preprocess(&img, 4, IMAGENET_MEAN, IMAGENET_STD);
        assert_eq!(out.len(), 48);
        assert!((out[0] - (1.0 - 0.485) / 0.229).abs() < 1e-6);
        assert!((out[16] - (0.0 - 0.456) / 0.224).abs() < 1e-6);
        assert!((out[32] - (128.0 / 255.0 - 0.406) / 0.225).abs() < 1e-6);
    }

    #[test]
    fn resize_to_resolution() {
        let img = RgbImage::from_fn(40, 30, |x, y| Rgb([x as u8, y as u8, 7]));
        assert_eq!(preprocess(&img, 8, IMAGENET_MEAN, IMAGENET_STD).len(), 3 * 64);
    }

    #[test]
    fn grayscale_replicated() {
        let gray = DynamicImage::ImageLuma8(GrayImage::from_pixel(2, 2, Luma([90])));
        let rgb = to_rgb(&gray, "test");
        assert!(rgb.pixels().all(|p| p.0 == [90, 90, 90]));
    }

    #[test]
    fn undecodable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.jpg");
        std::fs::write(&path, b"not a jpeg").unwrap();
        let err = decode_image_file(&path).unwrap_err();
        assert!(err.to_string().contains("broken.jpg"));
    }
}
