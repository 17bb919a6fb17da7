//! Per-run manifests (config, input hashes, output hashes) and the output
//! tracker that removes partial results when a command fails.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    /// Every config key, with paths made absolute.
    pub config: BTreeMap<String, String>,
    /// Absolute input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file relative to the output directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: bad manifest: {e}", path.display())))
    }

    /// The recorded configuration.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)
                .map_err(|e| CliError::validation(format!("manifest config: {}", e.msg)))?;
        }
        Ok(cfg)
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut reader = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Makes a path absolute against the current directory without requiring
/// it to exist.
pub fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Files written and read by one command.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<String>,
    inputs: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> CliResult<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Registers an output file (relative name, `/` allowed) and returns its path.
    pub fn path(&mut self, name: &str) -> CliResult<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(p)
    }

    /// Registers an input file for hashing and returns it. Files this
    /// command wrote itself are outputs, not inputs.
    pub fn input<'a>(&mut self, path: &'a Path) -> &'a Path {
        let abs = absolute(path);
        let own = abs
            .strip_prefix(absolute(&self.dir))
            .ok()
            .and_then(|rel| rel.to_str())
            .is_some_and(|rel| self.files.iter().any(|f| Path::new(f) == Path::new(rel)));
        if !own && !self.inputs.contains(&abs) {
            self.inputs.push(abs);
        }
        path
    }

    /// Removes every registered output, and the directory if this command
    /// created it and it is now empty.
    pub fn cleanup(&self) {
        for f in &self.files {
            let p = self.dir.join(f);
            if p.is_file() {
                let _ = fs::remove_file(&p);
            }
            let mut parent = p.parent();
            while let Some(d) = parent {
                if d == self.dir || fs::remove_dir(d).is_err() {
                    break;
                }
                parent = d.parent();
            }
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }

    /// Hashes inputs and outputs and writes the manifest next to the outputs.
    pub fn finish(&self, command: &str, cfg: &RunConfig) -> CliResult<Manifest> {
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let mut outputs = BTreeMap::new();
        for f in &self.files {
            outputs.insert(f.clone(), sha256_file(&self.dir.join(f))?);
        }
        let manifest = Manifest {
            tool: format!("nilink {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            inputs,
            outputs,
        };
        let path = self.dir.join(Manifest::file_name(command));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn cleanup_removes_only_registered_files() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("run");
        let mut out = Outputs::new(&dir).unwrap();
        fs::write(out.path("a.txt").unwrap(), "x").unwrap();
        fs::write(out.path("sub/b.txt").unwrap(), "y").unwrap();
        out.cleanup();
        assert!(!dir.exists());

        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("keep.txt"), "k").unwrap();
        let mut out = Outputs::new(&dir).unwrap();
        fs::write(out.path("a.txt").unwrap(), "x").unwrap();
        out.cleanup();
        assert!(dir.join("keep.txt").exists());
        assert!(!dir.join("a.txt").exists());
    }
}
