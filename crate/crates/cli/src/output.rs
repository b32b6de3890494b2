//! Run directories: created only once a command has something to write.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub struct RunDir {
    dir: PathBuf,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.text(name, &(body + "\n"))
    }
}

/// Comma-joined row of 17-significant-digit values.
pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| tensornet::io::fmt_f64(*v)).collect::<Vec<_>>().join(",")
}
