//! Run manifests and output bookkeeping.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to repeat a command: its resolved configuration, the
/// RNG seeds in play, the tool version, and digests of what it read and
/// wrote. Output paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Map<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, config: Map<String, Value>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| data(path, e))?;
        serde_json::from_str(&text).map_err(|e| data(path, e))
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }
}

pub fn data(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path).map_err(|e| data(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| data(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Output directory that remembers every file written through it.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| data(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| data(dir, e))?;
        }
        fs::write(&path, contents).map_err(|e| data(&path, e))?;
        self.record(rel);
        Ok(())
    }

    /// Registers a file that was written by other means.
    pub fn record(&mut self, rel: &str) {
        self.files.push(rel.to_string());
    }

    /// Digests every recorded file into `m.outputs` and writes the manifest.
    pub fn finish(self, mut m: RunManifest) -> Result<RunManifest, CliError> {
        let mut files = self.files;
        files.sort();
        files.dedup();
        m.outputs = files
            .into_iter()
            .map(|rel| {
                Ok(FileDigest {
                    sha256: sha256_file(&self.root.join(&rel))?,
                    path: rel,
                })
            })
            .collect::<Result<_, CliError>>()?;
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| data(&path, e))?;
        Ok(m)
    }
}
