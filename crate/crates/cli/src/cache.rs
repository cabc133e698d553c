//! On-disk caches: one JSON file per extraction keyed by request digest, and
//! an exportable binary file of feature-side embedding vectors.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use shield_core::extraction::FeatureSet;

use crate::error::AppError;

/// Cache entry on disk: the feature set plus bookkeeping. `created_at` is a
/// unix timestamp and the only non-deterministic byte in the cache.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExtractionCacheEntry {
    pub key: String,
    pub created_at: u64,
    pub value: FeatureSet,
}

/// Directory cache: `<root>/<first two hex chars>/<digest>.json`.
/// Writes go to a temp file in the destination directory and are renamed
/// into place, so concurrent writers of the same key are safe (values for a
/// key are identical by construction).
#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, AppError> {
        let root = root.into();
        std::fs::create_dir_all(&root)
            .map_err(|e| AppError::storage(format!("cannot create cache dir {}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        let shard = &key[..2.min(key.len())];
        self.root.join(shard).join(format!("{key}.json"))
    }

    pub fn lookup(&self, key: &str) -> Result<Option<FeatureSet>, AppError> {
        let path = self.entry_path(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(AppError::storage(format!(
                    "cannot read cache entry {}: {e}",
                    path.display()
                )))
            }
        };
        let entry: ExtractionCacheEntry = serde_json::from_str(&text).map_err(|e| {
            AppError::storage(format!("corrupt cache entry {}: {e}", path.display()))
        })?;
        Ok(Some(entry.value))
    }

    pub fn store(&self, key: &str, value: &FeatureSet) -> Result<(), AppError> {
        let entry = ExtractionCacheEntry {
            key: key.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            value: value.clone(),
        };
        let path = self.entry_path(key);
        let dir = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(dir)
            .map_err(|e| AppError::storage(format!("cannot create {}: {e}", dir.display())))?;
        let body = serde_json::to_string_pretty(&entry)
            .map_err(|e| AppError::storage(format!("serialize cache entry: {e}")))?;
        atomic_write(&path, body.as_bytes())
    }

    /// Park an unparseable raw response for later inspection.
    pub fn store_failed_raw(&self, key: &str, raw: &str) -> Result<PathBuf, AppError> {
        let dir = self.root.join("failed");
        std::fs::create_dir_all(&dir)
            .map_err(|e| AppError::storage(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(format!("{key}.txt"));
        atomic_write(&path, raw.as_bytes())?;
        Ok(path)
    }
}

/// Write-to-temp-then-rename in the destination directory.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    let dir = path.parent().expect("path has a parent");
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    std::fs::write(&tmp, bytes)
        .map_err(|e| AppError::storage(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        AppError::storage(format!("cannot rename into {}: {e}", path.display()))
    })
}

const VEC_CACHE_MAGIC: &[u8; 8] = b"SHLDVEC1";

/// Exportable cache of feature-side embeddings: float32 vectors keyed by
/// feature-set digest, in one little-endian binary file.
///
/// Layout: magic, u32 entry count, then per entry a u16 digest length, the
/// hex digest bytes, a u32 dimension, and `dim` f32 values.
#[derive(Debug, Default, Clone)]
pub struct EmbeddingCache {
    entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, digest: &str) -> Option<&[f32]> {
        self.entries.get(digest).map(Vec::as_slice)
    }

    pub fn put(&mut self, digest: impl Into<String>, vector: Vec<f32>) {
        self.entries.insert(digest.into(), vector);
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let mut file = std::fs::File::open(path)
            .map_err(|e| AppError::storage(format!("cannot open {}: {e}", path.display())))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| AppError::storage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
            .ok_or_else(|| AppError::storage(format!("corrupt embedding cache {}", path.display())))
    }

    fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Option<&[u8]> {
            let slice = bytes.get(*at..*at + n)?;
            *at += n;
            Some(slice)
        };
        if take(&mut at, 8)? != VEC_CACHE_MAGIC {
            return None;
        }
        let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().ok()?) as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let key_len = u16::from_le_bytes(take(&mut at, 2)?.try_into().ok()?) as usize;
            let key = core::str::from_utf8(take(&mut at, key_len)?).ok()?.to_string();
            let dim = u32::from_le_bytes(take(&mut at, 4)?.try_into().ok()?) as usize;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                vector.push(f32::from_le_bytes(take(&mut at, 4)?.try_into().ok()?));
            }
            entries.insert(key, vector);
        }
        Some(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), AppError> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(VEC_CACHE_MAGIC);
        bytes.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (key, vector) in &self.entries {
            bytes.extend_from_slice(&(key.len() as u16).to_le_bytes());
            bytes.extend_from_slice(key.as_bytes());
            bytes.extend_from_slice(&(vector.len() as u32).to_le_bytes());
            for v in vector {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| {
                    AppError::storage(format!("cannot create {}: {e}", dir.display()))
                })?;
            }
        }
        atomic_write(path, &bytes)
    }
}
