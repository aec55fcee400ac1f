//! Append-only on-disk caches. Every record is written with a single
//! `write_all` under a lock, so a crash leaves at most one torn trailing
//! record, which is skipped on reload.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Joins parts with a separator that cannot occur in hex digests or model names.
pub fn cache_key(parts: &[&str]) -> String {
    sha256_hex(parts.join("\u{1f}").as_bytes())
}

#[derive(Serialize, Deserialize)]
struct Record<V> {
    key: String,
    value: V,
}

/// String-keyed JSON-lines cache. Without a backing path it is memory-only.
pub struct JsonlCache<V> {
    path: Option<PathBuf>,
    map: RwLock<HashMap<String, V>>,
    writer: Mutex<Option<File>>,
}

impl<V: Serialize + DeserializeOwned + Clone> JsonlCache<V> {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            map: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut map = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                match serde_json::from_str::<Record<V>>(&line) {
                    Ok(r) => {
                        map.insert(r.key, r.value);
                    }
                    Err(e) => log::warn!("{}: skipping unreadable cache record: {e}", path.display()),
                }
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            map: RwLock::new(map),
            writer: Mutex::new(None),
        })
    }

    pub fn get(&self, key: &str) -> Option<V> {
        self.map.read().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: &str, value: V) -> Result<()> {
        if let Some(path) = &self.path {
            let mut line = serde_json::to_vec(&Record {
                key: key.to_string(),
                value: &value,
            })?;
            line.push(b'\n');
            let mut writer = self.writer.lock();
            if writer.is_none() {
                *writer = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let f = writer.as_mut().expect("writer opened above");
            f.write_all(&line)?;
            f.flush()?;
        }
        self.map.write().insert(key.to_string(), value);
        Ok(())
    }
}

/// Binary cache of float32 vectors keyed by a 64-character hex digest.
/// Record layout: 64 key bytes, `u32` LE length, `length` float32 LE values.
pub struct VectorCache {
    path: Option<PathBuf>,
    map: RwLock<HashMap<String, Vec<f32>>>,
    writer: Mutex<Option<File>>,
}

const KEY_LEN: usize = 64;

impl VectorCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            map: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut map = HashMap::new();
        if path.exists() {
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            let mut pos = 0;
            while pos + KEY_LEN + 4 <= bytes.len() {
                let key = String::from_utf8_lossy(&bytes[pos..pos + KEY_LEN]).into_owned();
                let len_bytes: [u8; 4] = bytes[pos + KEY_LEN..pos + KEY_LEN + 4].try_into().unwrap();
                let n = u32::from_le_bytes(len_bytes) as usize;
                let start = pos + KEY_LEN + 4;
                let end = start + 4 * n;
                if end > bytes.len() {
                    log::warn!("{}: truncated trailing vector record", path.display());
                    break;
                }
                let v = bytes[start..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                map.insert(key, v);
                pos = end;
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            map: RwLock::new(map),
            writer: Mutex::new(None),
        })
    }

    pub fn get(&self, key: &str) -> Option<Vec<f32>> {
        self.map.read().get(key).cloned()
    }

    pub fn insert(&self, key: &str, value: &[f32]) -> Result<()> {
        if key.len() != KEY_LEN {
            return Err(Error::validation(format!("vector cache keys are {KEY_LEN} hex chars")));
        }
        if let Some(path) = &self.path {
            let mut rec = Vec::with_capacity(KEY_LEN + 4 + value.len() * 4);
            rec.extend_from_slice(key.as_bytes());
            rec.extend_from_slice(&(value.len() as u32).to_le_bytes());
            for x in value {
                rec.extend_from_slice(&x.to_le_bytes());
            }
            let mut writer = self.writer.lock();
            if writer.is_none() {
                *writer = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let f = writer.as_mut().expect("writer opened above");
            f.write_all(&rec)?;
            f.flush()?;
        }
        self.map.write().insert(key.to_string(), value.to_vec());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_cache_survives_reopen_and_skips_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        {
            let c: JsonlCache<String> = JsonlCache::open(&path).unwrap();
            c.insert("a", "yes".into()).unwrap();
            c.insert("b", "no".into()).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"key\":\"c\",\"val").unwrap();
        let c: JsonlCache<String> = JsonlCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get("b").as_deref(), Some("no"));
    }

    #[test]
    fn vector_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        let key = sha256_hex(b"frame");
        {
            let c = VectorCache::open(&path).unwrap();
            c.insert(&key, &[1.0, -2.5, 0.125]).unwrap();
        }
        let c = VectorCache::open(&path).unwrap();
        assert_eq!(c.get(&key).unwrap(), vec![1.0, -2.5, 0.125]);
        assert!(c.insert("short", &[1.0]).is_err());
    }
}
