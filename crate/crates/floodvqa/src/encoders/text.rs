//! Frozen text encoder: RoBERTa token states mean-pooled over non-padding
//! tokens.

use candle_core::{DType, Device, Tensor};
use candle_transformers::models::xlm_roberta::{Config as RobertaConfig, XLMRobertaModel};

use super::weights::WeightBank;
use super::{EncoderSpec, Preprocess, TextEncoder};
use crate::error::{Error, Result};

/// Turns a question into token ids, special tokens included.
pub trait Tokenize: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Vec<u32>>;
    fn pad_id(&self) -> u32;
    fn eos_id(&self) -> u32;
}

/// A `tokenizer.json` loaded through the `tokenizers` crate.
pub struct HfTokenizer {
    inner: tokenizers::Tokenizer,
    pad: u32,
    eos: u32,
}

impl HfTokenizer {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let inner = tokenizers::Tokenizer::from_file(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
        let pad = inner.token_to_id("<pad>").unwrap_or(1);
        let eos = inner.token_to_id("</s>").unwrap_or(2);
        Ok(HfTokenizer { inner, pad, eos })
    }
}

impl Tokenize for HfTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let enc = self
            .inner
            .encode(text, true)
            .map_err(|e| Error::encoder("tokenizer", e))?;
        Ok(enc.get_ids().to_vec())
    }

    fn pad_id(&self) -> u32 {
        self.pad
    }

    fn eos_id(&self) -> u32 {
        self.eos
    }
}

/// Offline stand-in tokenizer for seeded encoders: lowercased words and
/// punctuation hashed into the vocabulary, wrapped in `<s>` (0) … `</s>` (2),
/// with padding id 1.
pub struct HashingTokenizer {
    vocab_size: u32,
}

impl HashingTokenizer {
    pub fn new(vocab_size: u32) -> Self {
        assert!(vocab_size > 3);
        HashingTokenizer { vocab_size }
    }

    fn word_id(&self, word: &str) -> u32 {
        let mut h: u32 = 0x811c_9dc5;
        for b in word.bytes() {
            h ^= b as u32;
            h = h.wrapping_mul(0x0100_0193);
        }
        3 + h % (self.vocab_size - 3)
    }
}

impl Tokenize for HashingTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let lower = text.to_lowercase();
        let mut ids = vec![0];
        let mut word = String::new();
        for ch in lower.chars() {
            if ch.is_alphanumeric() {
                word.push(ch);
                continue;
            }
            if !word.is_empty() {
                ids.push(self.word_id(&word));
                word.clear();
            }
            if !ch.is_whitespace() {
                ids.push(self.word_id(ch.encode_utf8(&mut [0; 4])));
            }
        }
        if !word.is_empty() {
            ids.push(self.word_id(&word));
        }
        ids.push(2);
        Ok(ids)
    }

    fn pad_id(&self) -> u32 {
        1
    }

    fn eos_id(&self) -> u32 {
        2
    }
}

pub struct CandleTextEncoder {
    spec: EncoderSpec,
    model: XLMRobertaModel,
    tokenizer: Box<dyn Tokenize>,
    bank: WeightBank,
    device: Device,
}

impl CandleTextEncoder {
    pub fn new(
        spec: EncoderSpec,
        config: &RobertaConfig,
        tokenizer: Box<dyn Tokenize>,
        bank: WeightBank,
        vb: candle_nn::VarBuilder<'static>,
        device: Device,
    ) -> Result<Self> {
        let vb = if bank.contains("roberta.embeddings.word_embeddings.weight") {
            vb.pp("roberta")
        } else {
            vb
        };
        let model = XLMRobertaModel::new(config, vb)?;
        Ok(CandleTextEncoder {
            spec,
            model,
            tokenizer,
            bank,
            device,
        })
    }

    fn max_length(&self) -> usize {
        match self.spec.preprocess {
            Preprocess::Text { max_length, .. } => max_length,
            _ => usize::MAX,
        }
    }

    /// Token ids, truncated (keeping the closing token) to the maximum length.
    pub fn token_ids(&self, text: &str) -> Result<Vec<u32>> {
        if text.trim().is_empty() {
            return Err(Error::encoder(&self.spec.name, "cannot encode an empty question"));
        }
        let mut ids = self.tokenizer.tokenize(text)?;
        let max = self.max_length();
        if ids.len() > max {
            log::warn!(
                "{}: question truncated from {} to {max} tokens: {text:?}",
                self.spec.name,
                ids.len()
            );
            ids.truncate(max);
            if let Some(last) = ids.last_mut() {
                *last = self.tokenizer.eos_id();
            }
        }
        Ok(ids)
    }
}

impl TextEncoder for CandleTextEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let tokenized: Vec<Vec<u32>> = texts.iter().map(|t| self.token_ids(t)).collect::<Result<_>>()?;
        let width = tokenized.iter().map(Vec::len).max().unwrap_or(0);
        let pad = self.tokenizer.pad_id();
        let mut ids = Vec::with_capacity(texts.len() * width);
        let mut mask = Vec::with_capacity(texts.len() * width);
        for t in &tokenized {
            ids.extend_from_slice(t);
            ids.extend(std::iter::repeat_n(pad, width - t.len()));
            mask.extend(std::iter::repeat_n(1.0f32, t.len()));
            mask.extend(std::iter::repeat_n(0.0f32, width - t.len()));
        }
        let shape = (texts.len(), width);
        let input_ids = Tensor::from_vec(ids, shape, &self.device)?;
        let mask = Tensor::from_vec(mask, shape, &self.device)?;
        let token_types = input_ids.zeros_like()?;
        let hidden = self
            .model
            .forward(&input_ids, &mask, &token_types, None, None, None)?;
        // mean over non-padding tokens
        let mask3 = mask.unsqueeze(2)?.to_dtype(hidden.dtype())?;
        let summed = hidden.broadcast_mul(&mask3)?.sum(1)?;
        let counts = mask3.sum(1)?;
        let pooled = summed.broadcast_div(&counts)?.to_dtype(DType::F32)?;
        Ok(pooled.to_vec2::<f32>()?)
    }

    fn weights_checksum(&self) -> Result<String> {
        self.bank.checksum()
    }
}
