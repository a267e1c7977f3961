use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use nlsurf::{Error, Result};

/// Build an artifact directory under a temporary sibling of `out`, then
/// move it into place. A failed build leaves `out` untouched.
pub fn stage(out: &Path, build: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    if out.exists() && !out.is_dir() {
        return Err(Error::Configuration(format!("{} exists and is not a directory", out.display())));
    }
    let tmp = tempfile::Builder::new().prefix(".nlsurf-").tempdir_in(&parent)?;
    build(tmp.path())?;
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    let path = tmp.keep();
    fs::rename(&path, out)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Hash a file, or every file of a directory in name order.
pub fn hash_input(path: &Path) -> Result<Vec<InputHash>> {
    let missing = |e: std::io::Error| Error::Configuration(format!("cannot read {}: {e}", path.display()));
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .map_err(missing)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        let mut out = Vec::new();
        for p in names.into_iter().filter(|p| p.is_file()) {
            out.push(InputHash { path: p.display().to_string(), sha256: sha256_hex(&fs::read(&p)?) });
        }
        Ok(out)
    } else {
        let bytes = fs::read(path).map_err(missing)?;
        Ok(vec![InputHash { path: path.display().to_string(), sha256: sha256_hex(&bytes) }])
    }
}

/// Record written next to every artifact. Contains no timestamps so that
/// reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: Option<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
}

impl Provenance {
    pub fn new(command: &str, config_bytes: Option<&[u8]>, config: &impl Serialize) -> Result<Self> {
        Ok(Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config_sha256: config_bytes.map(sha256_hex),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
        })
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.extend(hash_input(path)?);
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("provenance.json"), self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_build_leaves_previous_output() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("art");
        stage(&out, |d| Ok(fs::write(d.join("a.txt"), "one")?)).unwrap();
        let err = stage(&out, |d| {
            fs::write(d.join("a.txt"), "two")?;
            Err(Error::Numeric("boom".into()))
        });
        assert!(err.is_err());
        assert_eq!(fs::read_to_string(out.join("a.txt")).unwrap(), "one");
        let leftovers: Vec<_> = fs::read_dir(root.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn rerun_replaces_output() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("art");
        stage(&out, |d| Ok(fs::write(d.join("a.txt"), "one")?)).unwrap();
        stage(&out, |d| Ok(fs::write(d.join("b.txt"), "two")?)).unwrap();
        assert!(!out.join("a.txt").exists());
        assert_eq!(fs::read_to_string(out.join("b.txt")).unwrap(), "two");
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
