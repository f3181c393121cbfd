//! Run-directory output: atomic file writes and CSV assembly.

use std::io::Write;
use std::path::{Path, PathBuf};
use tmamba_core::Result;

/// Write bytes to `path` via a temp file in the same directory plus rename,
/// so partially written outputs never appear under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Minimal CSV builder; fields are written verbatim (all our values are
/// numeric or simple identifiers, never quoted).
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.buf.as_bytes())
    }
}

/// Shortest round-trip float formatting, stable across runs.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

pub fn run_dir(base: &Option<PathBuf>, command: &str) -> PathBuf {
    base.clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(command))
}
