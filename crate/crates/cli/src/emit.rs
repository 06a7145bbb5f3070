//! Output formatting: result files carry full-precision numbers; console
//! tables round for reading.

use std::io::Write;
use std::path::{Path, PathBuf};

/// Render a float with 17 significant digits.
pub fn full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Console rendering.
pub fn short(v: f64) -> String {
    format!("{v:.5}")
}

pub fn write_text(dir: &Path, name: &str, content: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path)?;
    f.write_all(content.as_bytes())?;
    Ok(path)
}

pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> anyhow::Result<PathBuf> {
    write_text(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}
