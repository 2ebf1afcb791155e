//! On-disk response cache, one JSON file per request hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::linkage::ingest::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub request_hash: String,
    pub model: String,
    /// "vision" or "decision".
    pub kind: String,
    pub image_sha256: Option<String>,
    pub raw_text: String,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> std::io::Result<Option<CachedResponse>> {
        let path = self.path_for(hash);
        match std::fs::read_to_string(&path) {
            Ok(text) => match serde_json::from_str::<CachedResponse>(&text) {
                Ok(entry) if entry.request_hash == hash => Ok(Some(entry)),
                // Corrupt or mismatched entries are treated as misses and overwritten later.
                _ => {
                    log::warn!("ignoring unreadable cache entry {}", path.display());
                    Ok(None)
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, entry: &CachedResponse) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let text = serde_json::to_string_pretty(entry)?;
        write_atomic(&self.path_for(&entry.request_hash), text.as_bytes()).map_err(std::io::Error::other)
    }

    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(hash: &str) -> CachedResponse {
        CachedResponse {
            request_hash: hash.into(),
            model: "m".into(),
            kind: "decision".into(),
            image_sha256: None,
            raw_text: "Occupied".into(),
        }
    }

    #[test]
    fn put_get_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path().join("c"));
        assert_eq!(cache.get("ab").unwrap(), None);
        cache.put(&entry("ab")).unwrap();
        assert_eq!(cache.get("ab").unwrap(), Some(entry("ab")));
        assert_eq!(cache.len(), 1);
        std::fs::write(dir.path().join("c/cd.json"), "{trunc").unwrap();
        assert_eq!(cache.get("cd").unwrap(), None);
    }
}
