//! On-disk cache of pooled encoder outputs.
//!
//! A store is a directory holding:
//!
//! - `features.bin`: the vectors concatenated in manifest order, each
//!   `output_dim` little-endian `f32` values;
//! - `manifest.json`: encoder name, `output_dim`, item count, every item id
//!   with its byte offset, and the SHA-256 digest of `features.bin`.
//!
//! The manifest is written last (via rename), so a directory without one is
//! an incomplete store.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "features.bin";
pub const STORE_FORMAT_VERSION: u32 = 1;
const PARTIAL_SUFFIX: &str = ".partial";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksum {
    pub algorithm: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub encoder_name: String,
    pub output_dim: usize,
    pub dtype: String,
    pub count: usize,
    pub items: Vec<ManifestItem>,
    pub checksum: Checksum,
}

impl Manifest {
    fn record_bytes(&self) -> u64 {
        self.output_dim as u64 * 4
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let fail = |message: String| Error::Store {
            path: path.to_path_buf(),
            message,
        };
        if self.format_version != STORE_FORMAT_VERSION {
            return Err(fail(format!("unsupported format version {}", self.format_version)));
        }
        if self.dtype != "f32-le" {
            return Err(fail(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.output_dim == 0 {
            return Err(fail("output_dim must be positive".into()));
        }
        if self.count != self.items.len() {
            return Err(fail(format!("count {} but {} items listed", self.count, self.items.len())));
        }
        if self.checksum.algorithm != "sha256" {
            return Err(fail(format!("unsupported checksum algorithm {:?}", self.checksum.algorithm)));
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.offset != i as u64 * self.record_bytes() {
                return Err(fail(format!("item {:?} has inconsistent offset {}", item.id, item.offset)));
            }
        }
        Ok(())
    }
}

/// Streams vectors into a new store directory.
pub struct StoreWriter {
    dir: PathBuf,
    encoder_name: String,
    output_dim: usize,
    items: Vec<ManifestItem>,
    seen: HashMap<String, usize>,
    hasher: Sha256,
    payload: BufWriter<File>,
    partial_path: PathBuf,
}

impl StoreWriter {
    /// Starts a store in `dir`, discarding any earlier incomplete attempt.
    /// Fails if `dir` already holds a finalized store.
    pub fn create(dir: &Path, encoder_name: &str, output_dim: usize) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::Store {
                path: dir.to_path_buf(),
                message: "output_dim must be positive".into(),
            });
        }
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let manifest = dir.join(MANIFEST_FILE);
        if manifest.exists() {
            return Err(Error::Store {
                path: dir.to_path_buf(),
                message: "a finalized store already exists here".into(),
            });
        }
        let _ = fs::remove_file(dir.join(PAYLOAD_FILE));
        let partial_path = dir.join(format!("{PAYLOAD_FILE}{PARTIAL_SUFFIX}"));
        let file = File::create(&partial_path).map_err(Error::io(&partial_path))?;
        Ok(StoreWriter {
            dir: dir.to_path_buf(),
            encoder_name: encoder_name.to_string(),
            output_dim,
            items: Vec::new(),
            seen: HashMap::new(),
            hasher: Sha256::new(),
            payload: BufWriter::new(file),
            partial_path,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn append(&mut self, item_id: &str, vector: &[f32]) -> Result<()> {
        let fail = |message: String| Error::Store {
            path: self.dir.clone(),
            message,
        };
        if vector.len() != self.output_dim {
            return Err(fail(format!(
                "item {item_id:?} has width {}, store width is {}",
                vector.len(),
                self.output_dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(fail(format!("item {item_id:?} contains non-finite values")));
        }
        if self.seen.contains_key(item_id) {
            return Err(fail(format!("duplicate item id {item_id:?}")));
        }
        let mut bytes = Vec::with_capacity(vector.len() * 4);
        for v in vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.payload.write_all(&bytes).map_err(Error::io(&self.partial_path))?;
        self.hasher.update(&bytes);
        self.seen.insert(item_id.to_string(), self.items.len());
        self.items.push(ManifestItem {
            id: item_id.to_string(),
            offset: (self.items.len() * self.output_dim * 4) as u64,
        });
        Ok(())
    }

    /// Flushes the payload and atomically publishes the manifest.
    pub fn finish(self) -> Result<Manifest> {
        let StoreWriter {
            dir,
            encoder_name,
            output_dim,
            items,
            hasher,
            payload,
            partial_path,
            ..
        } = self;
        let file = payload
            .into_inner()
            .map_err(|e| Error::Io {
                path: partial_path.clone(),
                source: e.into_error(),
            })?;
        file.sync_all().map_err(Error::io(&partial_path))?;
        drop(file);
        let payload_path = dir.join(PAYLOAD_FILE);
        fs::rename(&partial_path, &payload_path).map_err(Error::io(&payload_path))?;

        let manifest = Manifest {
            format_version: STORE_FORMAT_VERSION,
            encoder_name,
            output_dim,
            dtype: "f32-le".into(),
            count: items.len(),
            items,
            checksum: Checksum {
                algorithm: "sha256".into(),
                digest: hex::encode(hasher.finalize()),
            },
        };
        let tmp = dir.join(format!("{MANIFEST_FILE}{PARTIAL_SUFFIX}"));
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(&tmp, json).map_err(Error::io(&tmp))?;
        let final_path = dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &final_path).map_err(Error::io(&final_path))?;
        Ok(manifest)
    }
}

/// A validated, fully loaded feature store. Read-only after opening, so it
/// can be shared across threads.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dir: PathBuf,
    manifest: Manifest,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl FeatureStore {
    pub fn manifest_exists(dir: &Path) -> bool {
        dir.join(MANIFEST_FILE).is_file()
    }

    pub fn read_manifest(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(Error::json(&path))?;
        manifest.validate(dir)?;
        Ok(manifest)
    }

    /// Opens a store, checking the manifest invariants and the payload digest.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        let payload_path = dir.join(PAYLOAD_FILE);
        let bytes = fs::read(&payload_path).map_err(Error::io(&payload_path))?;
        let actual = hex::encode(Sha256::digest(&bytes));
        if actual != manifest.checksum.digest {
            return Err(Error::Corrupt {
                path: dir.to_path_buf(),
                expected: manifest.checksum.digest.clone(),
                actual,
            });
        }
        let expected_len = manifest.count as u64 * manifest.record_bytes();
        if bytes.len() as u64 != expected_len {
            return Err(Error::Store {
                path: dir.to_path_buf(),
                message: format!("payload has {} bytes, manifest implies {expected_len}", bytes.len()),
            });
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut index = HashMap::with_capacity(manifest.count);
        for (i, item) in manifest.items.iter().enumerate() {
            if index.insert(item.id.clone(), i).is_some() {
                return Err(Error::Store {
                    path: dir.to_path_buf(),
                    message: format!("duplicate item id {:?}", item.id),
                });
            }
        }
        Ok(FeatureStore {
            dir: dir.to_path_buf(),
            manifest,
            index,
            data,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn encoder_name(&self) -> &str {
        &self.manifest.encoder_name
    }

    pub fn output_dim(&self) -> usize {
        self.manifest.output_dim
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn checksum(&self) -> &str {
        &self.manifest.checksum.digest
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.manifest.items.iter().map(|i| i.id.as_str())
    }

    /// Borrowed view of one stored vector.
    pub fn get(&self, item_id: &str) -> Result<&[f32]> {
        let i = *self.index.get(item_id).ok_or_else(|| Error::MissingFeature {
            store: self.dir.clone(),
            item_id: item_id.to_string(),
        })?;
        let d = self.manifest.output_dim;
        Ok(&self.data[i * d..(i + 1) * d])
    }
}

/// Returns the exact stored vector for `item_id`.
pub fn load_features(store: &FeatureStore, item_id: &str) -> Result<Vec<f32>> {
    store.get(item_id).map(<[f32]>::to_vec)
}

/// Writes a complete store from `(id, vector)` records.
pub fn write_store<'a, I>(dir: &Path, encoder_name: &str, output_dim: usize, records: I) -> Result<Manifest>
where
    I: IntoIterator<Item = (&'a str, &'a [f32])>,
{
    let mut writer = StoreWriter::create(dir, encoder_name, output_dim)?;
    for (id, v) in records {
        writer.append(id, v)?;
    }
    writer.finish()
}
