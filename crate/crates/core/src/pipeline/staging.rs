use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::TempDir;

use crate::error::{Error, Result};

/// Collects a command's outputs in a hidden directory next to their final
/// location and moves them into place only once everything was written.
pub(crate) struct Staging {
    dir: TempDir,
    out: PathBuf,
    files: Vec<PathBuf>,
}

impl Staging {
    pub(crate) fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(out)
            .map_err(|e| Error::io(out, e))?;
        Ok(Staging {
            dir,
            out: out.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path inside the staging area for `name`, with parents created.
    pub(crate) fn path(&mut self, name: impl AsRef<Path>) -> Result<PathBuf> {
        let name = name.as_ref();
        let path = self.dir.path().join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.push(name.to_path_buf());
        Ok(path)
    }

    pub(crate) fn write_bytes(&mut self, name: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let path = self.path(name)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub(crate) fn write_json<T: Serialize + ?Sized>(&mut self, name: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
            path: name.as_ref().to_path_buf(),
            source,
        })?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub(crate) fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let from = self.dir.path().join(name);
            let to = self.out.join(name);
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            written.push(to);
        }
        Ok(written)
    }
}
