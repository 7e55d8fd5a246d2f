//! Advisory lock files so that concurrent commands do not interleave writes
//! to the same directory.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::error::CliError;

pub const LOCK_NAME: &str = ".tplab.lock";

/// Held while a command writes into a directory; removed on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    /// Creates `dir` if needed and takes its lock, waiting up to `wait`.
    pub fn acquire(dir: &Path, wait: Duration) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let path = dir.join(LOCK_NAME);
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    if start.elapsed() >= wait {
                        let holder = fs::read_to_string(&path).unwrap_or_default();
                        return Err(CliError::usage(format!(
                            "{} is locked by process {}; remove {} if that process is gone",
                            dir.display(),
                            holder.trim(),
                            path.display()
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(100));
                }
                Err(e) => return Err(CliError::data(format!("{}: {e}", path.display()))),
            }
        }
    }

    /// Waits until nobody holds the lock of `dir`, without taking it.
    pub fn wait_unlocked(dir: &Path, wait: Duration) -> Result<(), CliError> {
        let path = dir.join(LOCK_NAME);
        let start = Instant::now();
        while path.exists() {
            if start.elapsed() >= wait {
                return Err(CliError::usage(format!("{} is being written by another command", dir.display())));
            }
            std::thread::sleep(Duration::from_millis(100));
        }
        Ok(())
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
