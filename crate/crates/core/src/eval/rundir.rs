//! Run directories keyed by experiment, method and seed. Existing runs are
//! never overwritten, and a lock file admits one writer per directory.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const LOCK_FILE: &str = ".lock";

#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    /// Creates the lock file in `dir`; fails if another run holds it.
    pub fn acquire(dir: &Path) -> Result<OutputLock> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => {
                    Error::Config(format!("{} is locked by another run", dir.display()))
                }
                _ => Error::io(&path, e),
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(OutputLock { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    _lock: OutputLock,
}

impl RunDir {
    pub fn name(experiment: &str, method: &str, seed: u64) -> String {
        format!("{experiment}-{method}-seed{seed}")
    }

    /// Creates `root/<experiment>-<method>-seed<seed>`; refuses if it exists.
    pub fn create(root: &Path, experiment: &str, method: &str, seed: u64) -> Result<RunDir> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(Self::name(experiment, method, seed));
        fs::create_dir(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => {
                Error::Config(format!("{} already exists; refusing to overwrite", path.display()))
            }
            _ => Error::io(&path, e),
        })?;
        let lock = OutputLock::acquire(&path)?;
        Ok(RunDir { path, _lock: lock })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self, relative: &str, bytes: &[u8]) -> Result<PathBuf> {
        let target = self.path.join(relative);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = File::create(&target).map_err(|e| Error::io(&target, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&target, e))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&self, relative: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }
}
