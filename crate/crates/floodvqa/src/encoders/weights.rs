//! Where frozen encoder weights come from, and how they are fingerprinted.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor};
use candle_nn::init::NormalOrUniform;
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const TOKENIZER_FILE: &str = "tokenizer.json";

/// Source of pretrained parameters for the named encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightSource {
    /// `<root>/<encoder-name>/model.safetensors` (plus `tokenizer.json` for
    /// text encoders).
    Directory(PathBuf),
    /// Deterministic pseudo-random parameters drawn from each layer's default
    /// initializer. Architecture-faithful, but not pretrained: for offline
    /// smoke tests and width probes only.
    Seeded(u64),
}

impl WeightSource {
    pub fn encoder_dir(&self, name: &str) -> Option<PathBuf> {
        match self {
            WeightSource::Directory(root) => Some(root.join(name)),
            WeightSource::Seeded(_) => None,
        }
    }
}

/// The parameter tensors backing one encoder instance. Shared with the
/// `VarBuilder` that built the model, so the checksum reflects exactly what
/// the network computes with.
#[derive(Clone)]
pub struct WeightBank {
    tensors: Arc<Mutex<BTreeMap<String, Tensor>>>,
}

impl WeightBank {
    /// Loads a safetensors file fully into memory.
    pub fn from_safetensors(path: &Path, device: &Device) -> Result<(Self, VarBuilder<'static>)> {
        if !path.is_file() {
            return Err(Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "weights file not found"),
            });
        }
        let map: HashMap<String, Tensor> = candle_core::safetensors::load(path, device)?;
        let bank = WeightBank {
            tensors: Arc::new(Mutex::new(map.iter().map(|(k, v)| (k.clone(), v.clone())).collect())),
        };
        let vb = VarBuilder::from_tensors(map, DType::F32, device);
        Ok((bank, vb))
    }

    /// A bank that materializes seeded tensors on demand as the model is built.
    pub fn seeded(seed: u64, device: &Device) -> (Self, VarBuilder<'static>) {
        let tensors = Arc::new(Mutex::new(BTreeMap::new()));
        let backend = SeededBackend {
            seed,
            tensors: Arc::clone(&tensors),
        };
        let vb = VarBuilder::from_backend(Box::new(backend), DType::F32, device.clone());
        (WeightBank { tensors }, vb)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.lock().expect("weight bank lock").contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.lock().expect("weight bank lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// SHA-256 over every tensor in name order: name, shape, then the values
    /// as little-endian f32.
    pub fn checksum(&self) -> Result<String> {
        let tensors = self.tensors.lock().expect("weight bank lock");
        let mut hasher = Sha256::new();
        for (name, t) in tensors.iter() {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for d in t.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let values: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the tensor name, mixed with the bank seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct SeededBackend {
    seed: u64,
    tensors: Arc<Mutex<BTreeMap<String, Tensor>>>,
}

impl SeededBackend {
    fn generate(&self, shape: &Shape, name: &str, init: Init) -> Vec<f32> {
        let n = shape.elem_count();
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
        let uniform = |rng: &mut ChaCha8Rng, lo: f64, up: f64| (0..n).map(|_| rng.gen_range(lo..up) as f32).collect();
        let normal = |rng: &mut ChaCha8Rng, mean: f64, std: f64| {
            let dist = Normal::new(mean, std.max(f64::MIN_POSITIVE)).expect("valid normal");
            (0..n).map(|_| dist.sample(rng) as f32).collect()
        };
        match init {
            Init::Const(v) => vec![v as f32; n],
            Init::Uniform { lo, up } => uniform(&mut rng, lo, up),
            Init::Randn { mean, stdev } => normal(&mut rng, mean, stdev),
            Init::Kaiming {
                dist,
                fan,
                non_linearity,
            } => {
                let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
                match dist {
                    NormalOrUniform::Uniform => {
                        let bound = 3f64.sqrt() * std;
                        uniform(&mut rng, -bound, bound)
                    }
                    NormalOrUniform::Normal => normal(&mut rng, 0.0, std),
                }
            }
        }
    }
}

impl SimpleBackend for SeededBackend {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        let mut tensors = self.tensors.lock().expect("weight bank lock");
        if let Some(t) = tensors.get(name) {
            if t.shape() != &s {
                candle_core::bail!("seeded tensor {name} requested with shape {s:?}, created as {:?}", t.shape());
            }
            return t.to_dtype(dtype);
        }
        let values = self.generate(&s, name, h);
        let t = Tensor::from_vec(values, s, dev)?;
        tensors.insert(name.to_string(), t.clone());
        t.to_dtype(dtype)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        match self.tensors.lock().expect("weight bank lock").get(name) {
            Some(t) => t.to_dtype(dtype),
            None => candle_core::bail!("seeded tensor {name} has no known shape"),
        }
    }

    fn contains_tensor(&self, _name: &str) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_tensors_are_reproducible() {
        let dev = Device::Cpu;
        let (a, vba) = WeightBank::seeded(7, &dev);
        let (b, vbb) = WeightBank::seeded(7, &dev);
        let ta = vba.get_with_hints((3, 4), "w", candle_nn::init::DEFAULT_KAIMING_NORMAL).unwrap();
        let tb = vbb.get_with_hints((3, 4), "w", candle_nn::init::DEFAULT_KAIMING_NORMAL).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());

        let (c, vbc) = WeightBank::seeded(8, &dev);
        vbc.get_with_hints((3, 4), "w", candle_nn::init::DEFAULT_KAIMING_NORMAL).unwrap();
        assert_ne!(a.checksum().unwrap(), c.checksum().unwrap());
    }

    #[test]
    fn const_hints_are_respected() {
        let (_, vb) = WeightBank::seeded(1, &Device::Cpu);
        let ones = vb.get_with_hints(5, "bn.running_var", Init::Const(1.0)).unwrap();
        assert_eq!(ones.to_vec1::<f32>().unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn safetensors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let t = Tensor::new(&[[1.0f32, 2.0], [3.0, 4.0]], &Device::Cpu).unwrap();
        candle_core::safetensors::save(&HashMap::from([("x".to_string(), t)]), &path).unwrap();
        let (bank, vb) = WeightBank::from_safetensors(&path, &Device::Cpu).unwrap();
        assert!(bank.contains("x"));
        assert_eq!(vb.get((2, 2), "x").unwrap().to_vec2::<f32>().unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(WeightBank::from_safetensors(&dir.path().join("none"), &Device::Cpu).is_err());
    }
}
