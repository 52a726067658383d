use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use ravenforge::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Provenance record written beside every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Digest of command, config and inputs; see [`Manifest::run_hash`].
    #[serde(default)]
    pub run_hash: String,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: "ravenforge".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            run_hash: String::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileHash::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileHash::of(path)?);
        Ok(())
    }

    /// Digest of the resolved config and inputs, independent of outputs.
    pub fn run_hash(&self) -> Result<String> {
        let key = serde_json::to_vec(&(&self.command, &self.config, &self.inputs))?;
        Ok(hex::encode(Sha256::digest(&key)))
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.run_hash = self.run_hash()?;
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// `DIR/manifest.json` for directory outputs, `FILE.manifest.json` otherwise.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        suffixed(out, ".manifest.json")
    }
}

/// `path` with `suffix` appended to its file name.
pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_hash_tracks_config_and_inputs_only() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("in.bin");
        std::fs::write(&f, b"abc").unwrap();
        let mut a = Manifest::new("gen", &serde_json::json!({"seed": 1})).unwrap();
        a.input(&f).unwrap();
        assert_eq!(a.inputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let mut b = a.clone();
        b.output(&f).unwrap();
        assert_eq!(a.run_hash().unwrap(), b.run_hash().unwrap());
        let c = Manifest::new("gen", &serde_json::json!({"seed": 2})).unwrap();
        assert_ne!(Manifest::new("gen", &serde_json::json!({"seed": 1})).unwrap().run_hash().unwrap(), c.run_hash().unwrap());
        assert_eq!(manifest_path(dir.path()), dir.path().join("manifest.json"));
        assert_eq!(manifest_path(&f), dir.path().join("in.bin.manifest.json"));
    }
}
