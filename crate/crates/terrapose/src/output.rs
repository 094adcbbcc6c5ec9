//! All-or-nothing output: files are staged in memory, written to temporary
//! siblings, and renamed into place only once every temporary is complete.

use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((path.into(), bytes.into()));
    }

    pub fn extend(&mut self, files: impl IntoIterator<Item = (PathBuf, Vec<u8>)>) {
        self.files.extend(files);
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|f| f.0.as_path())
    }

    /// Writes every file. On failure all temporaries are removed and no
    /// target is touched.
    pub fn commit(self) -> Result<(), CliError> {
        let mut temps = Vec::with_capacity(self.files.len());
        let cleanup = |temps: &[PathBuf]| {
            for t in temps {
                let _ = std::fs::remove_file(t);
            }
        };
        for (path, bytes) in &self.files {
            let tmp = temp_path(path);
            if let Err(e) = std::fs::write(&tmp, bytes) {
                cleanup(&temps);
                return Err(CliError::io(path, e));
            }
            temps.push(tmp);
        }
        for (i, (path, _)) in self.files.iter().enumerate() {
            if let Err(e) = std::fs::rename(&temps[i], path) {
                cleanup(&temps[i..]);
                return Err(CliError::io(path, e));
            }
        }
        Ok(())
    }
}
