//! Image-builder cache modes. Building is simulated by writing a sentinel
//! file named after a digest of the key inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CacheMode {
    Scratch,
    Versioned,
    Lock,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub base_image: String,
    pub framework_version: String,
    pub lockfile_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CacheDecision {
    Hit,
    Rebuild,
}

pub fn cache_decision(mode: CacheMode, cached: Option<&CacheKey>, new: &CacheKey) -> CacheDecision {
    let Some(cached) = cached else {
        return CacheDecision::Rebuild;
    };
    let hit = match mode {
        CacheMode::Scratch => false,
        CacheMode::Versioned => {
            cached.base_image == new.base_image && cached.framework_version == new.framework_version
        }
        CacheMode::Lock => cached.lockfile_digest == new.lockfile_digest,
    };
    if hit {
        CacheDecision::Hit
    } else {
        CacheDecision::Rebuild
    }
}

impl CacheKey {
    pub fn new(base_image: &str, framework_version: &str, lockfile_digest: &str) -> Self {
        Self {
            base_image: base_image.into(),
            framework_version: framework_version.into(),
            lockfile_digest: lockfile_digest.into(),
        }
    }

    /// The fields that identify an image under `mode`. Scratch images are
    /// never reused, so they hash everything.
    fn identity(&self, mode: CacheMode) -> Vec<&str> {
        match mode {
            CacheMode::Scratch => vec![&self.base_image, &self.framework_version, &self.lockfile_digest],
            CacheMode::Versioned => vec![&self.base_image, &self.framework_version],
            CacheMode::Lock => vec![&self.lockfile_digest],
        }
    }

    pub fn digest(&self, mode: CacheMode) -> String {
        let mut h = Sha256::new();
        h.update(format!("{mode:?}").as_bytes());
        for part in self.identity(mode) {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOutcome {
    pub decision: CacheDecision,
    pub image: PathBuf,
}

/// Simulated image builder with an on-disk cache at `<cache_root>/<digest>.img`.
#[derive(Debug, Clone)]
pub struct ImageBuilder {
    root: PathBuf,
    mode: CacheMode,
}

impl ImageBuilder {
    pub fn new(root: impl Into<PathBuf>, mode: CacheMode) -> Self {
        Self { root: root.into(), mode }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(format!("{}.img", key.digest(self.mode)))
    }

    fn read_key(path: &Path) -> Option<CacheKey> {
        let bytes = std::fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Reuses the cached image when the mode allows it, otherwise rewrites
    /// the sentinel. Writes go through a temp file so readers never see a
    /// partial sentinel.
    pub fn build(&self, key: &CacheKey) -> std::io::Result<BuildOutcome> {
        std::fs::create_dir_all(&self.root)?;
        let image = self.image_path(key);
        let cached = Self::read_key(&image);
        let decision = cache_decision(self.mode, cached.as_ref(), key);
        if decision == CacheDecision::Rebuild {
            let tmp = self.root.join(format!(".{}.tmp", crate::util::short_id("img")));
            std::fs::write(&tmp, serde_json::to_vec(key).map_err(std::io::Error::other)?)?;
            std::fs::rename(&tmp, &image)?;
        }
        Ok(BuildOutcome { decision, image })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_cached_image_always_rebuilds() {
        let k = CacheKey::new("ubuntu", "1.0", "abc");
        for mode in [CacheMode::Scratch, CacheMode::Versioned, CacheMode::Lock] {
            assert_eq!(cache_decision(mode, None, &k), CacheDecision::Rebuild);
        }
    }

    #[test]
    fn builder_observes_hits_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let b = ImageBuilder::new(dir.path(), CacheMode::Lock);
        let k1 = CacheKey::new("ubuntu", "1.0", "lock-a");
        assert_eq!(b.build(&k1).unwrap().decision, CacheDecision::Rebuild);
        assert_eq!(b.build(&k1).unwrap().decision, CacheDecision::Hit);
        let k2 = CacheKey::new("debian", "2.0", "lock-a");
        let out = b.build(&k2).unwrap();
        assert_eq!(out.decision, CacheDecision::Hit);
        assert!(out.image.exists());

        let s = ImageBuilder::new(dir.path(), CacheMode::Scratch);
        assert_eq!(s.build(&k1).unwrap().decision, CacheDecision::Rebuild);
        assert_eq!(s.build(&k1).unwrap().decision, CacheDecision::Rebuild);
    }
}
