//! Output directory bookkeeping: every artifact written through [`RunOutput`]
//! is hashed, and the hashes land in `hashes.txt` next to the config echo.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const CONFIG_FILE: &str = "config.txt";
pub const HASHES_FILE: &str = "hashes.txt";

pub struct RunOutput {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl RunOutput {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(name, bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.hashes.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
    }

    /// Writes the config echo and the hash list (`sha256sum` layout).
    pub fn finish(mut self, config: &str) -> Result<()> {
        self.write(CONFIG_FILE, config.as_bytes())?;
        let listing: String = self
            .hashes
            .iter()
            .map(|(name, hash)| format!("{hash}  {name}\n"))
            .collect();
        fs::write(self.path(HASHES_FILE), listing)?;
        Ok(())
    }
}
