use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use acclick::config::RunConfig;
use anyhow::{bail, Context, Result};
use serde::Serialize;

const LOCK: &str = ".acclick.lock";

/// An output directory held exclusively by one command. The lock file is
/// removed on drop.
pub struct RunDir {
    path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn acquire(path: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK);
        let mut f = match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = std::fs::read_to_string(&lock).unwrap_or_default();
                bail!(
                    "{} is locked by another command ({}); remove {} if that command is gone",
                    path.display(),
                    holder.trim(),
                    lock.display()
                );
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        };
        writeln!(f, "{command} pid {}", std::process::id())?;
        Ok(Self {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes the effective configuration as `config.<command>.toml`.
    pub fn archive_config(&self, cfg: &RunConfig, command: &str) -> Result<()> {
        cfg.save(&self.file(&format!("config.{command}.toml")))?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.file(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_with(
        &self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> acclick::Result<()>,
    ) -> Result<PathBuf> {
        let path = self.file(name);
        let mut w = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        f(&mut w)?;
        w.flush()?;
        Ok(path)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}
