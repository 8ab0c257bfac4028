//! Per-stage manifests, content hashes and the output-directory lock.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const LOCK_FILE: &str = ".dialopre.lock";
pub const MANIFEST_DIR: &str = "manifests";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Absolute paths.
    pub inputs: Vec<FileHash>,
    /// Relative to the output directory.
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn manifest_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(MANIFEST_DIR).join(format!("{name}.json"))
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("malformed manifest {}: {e}", path.display())))
    }

    pub fn write(&self, out_dir: &Path, name: &str) -> Result<PathBuf, CliError> {
        let path = manifest_path(out_dir, name);
        fs::create_dir_all(path.parent().expect("manifest dir"))?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Inputs whose content no longer matches the recorded hash.
    pub fn changed_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|f| sha256_file(Path::new(&f.path)).map_or(true, |h| h != f.sha256))
            .map(|f| f.path.clone())
            .collect()
    }
}

/// Records what a stage reads and writes.
pub struct Stage {
    pub command: String,
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    /// File stem under `manifests/`; stages that run once per task or
    /// label extend the command name so runs do not overwrite each other.
    pub manifest_name: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    _lock: OutputLock,
}

impl Stage {
    pub fn begin(command: &str, cfg: RunConfig) -> Result<Self, CliError> {
        let out_dir = PathBuf::from(&cfg.out_dir);
        fs::create_dir_all(&out_dir)?;
        let lock = OutputLock::acquire(&out_dir)?;
        Ok(Self { command: command.to_string(), manifest_name: command.to_string(), cfg, out_dir, inputs: Vec::new(), outputs: Vec::new(), _lock: lock })
    }

    /// Register an input, failing with a message naming the file when it is missing.
    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(CliError::data(format!("missing input file {}", path.display())));
        }
        let abs = fs::canonicalize(path)?;
        if !self.inputs.contains(&abs) {
            self.inputs.push(abs.clone());
        }
        Ok(abs)
    }

    /// Path of an output relative to the output directory; parent
    /// directories are created.
    pub fn output(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let rel = rel.as_ref().to_path_buf();
        let full = self.out_dir.join(&rel);
        if let Some(p) = full.parent() {
            fs::create_dir_all(p)?;
        }
        if !self.outputs.contains(&rel) {
            self.outputs.push(rel);
        }
        Ok(full)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<PathBuf, CliError> {
        let path = self.output(rel)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: impl AsRef<Path>, rows: &[T]) -> Result<PathBuf, CliError> {
        let path = self.output(rel)?;
        let mut w = BufWriter::new(File::create(&path)?);
        for r in rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn finish(self) -> Result<Manifest, CliError> {
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for p in &self.inputs {
            inputs.push(FileHash { path: p.display().to_string(), sha256: sha256_file(p)? });
        }
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for rel in &self.outputs {
            outputs.push(FileHash { path: rel.display().to_string(), sha256: sha256_file(&self.out_dir.join(rel))? });
        }
        let manifest = Manifest { command: self.command.clone(), seed: self.cfg.seed, config: self.cfg.clone(), inputs, outputs };
        manifest.write(&self.out_dir, &self.manifest_name)?;
        Ok(manifest)
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(CliError::data(format!(
                "output directory {} is in use by another run (remove {} if that run died)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(CliError::Data(_))));
        drop(a);
        OutputLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
