//! Pinned split files: a JSON record of which images and questions went to
//! each side, so a split can be shared and reused.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use floodvqa_core::qa::QAPair;
use floodvqa_core::split::DatasetSplit;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SPLIT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub format_version: u32,
    pub seed: u64,
    pub test_image_fraction: f64,
    pub train_image_ids: Vec<String>,
    pub test_image_ids: Vec<String>,
    pub train_question_ids: Vec<String>,
    pub test_question_ids: Vec<String>,
}

impl SplitFile {
    pub fn from_split(split: &DatasetSplit) -> Self {
        SplitFile {
            format_version: SPLIT_FORMAT_VERSION,
            seed: split.seed,
            test_image_fraction: split.test_image_fraction,
            train_image_ids: split.image_ids_train.iter().cloned().collect(),
            test_image_ids: split.image_ids_test.iter().cloned().collect(),
            train_question_ids: split.train.iter().map(|p| p.question_id.clone()).collect(),
            test_question_ids: split.test.iter().map(|p| p.question_id.clone()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split file serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        fs::write(path, self.to_json()).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let file: SplitFile = serde_json::from_str(&text).map_err(Error::json(path))?;
        if file.format_version != SPLIT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported split format version {}",
                path.display(),
                file.format_version
            )));
        }
        Ok(file)
    }

    /// Re-applies the pinned split to freshly loaded pairs. The question ids
    /// on each side must match the file exactly.
    pub fn apply(&self, pairs: &[QAPair]) -> Result<DatasetSplit> {
        let train_ids: BTreeSet<String> = self.train_image_ids.iter().cloned().collect();
        let test_ids: BTreeSet<String> = self.test_image_ids.iter().cloned().collect();
        let split = DatasetSplit::from_image_sets(pairs, train_ids, test_ids, self.seed, self.test_image_fraction)?;
        let same = |side: &[QAPair], ids: &[String]| {
            side.len() == ids.len() && side.iter().zip(ids).all(|(p, id)| &p.question_id == id)
        };
        if !same(&split.train, &self.train_question_ids) || !same(&split.test, &self.test_question_ids) {
            return Err(Error::Config(
                "split file question lists do not match the loaded annotations".into(),
            ));
        }
        Ok(split)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
