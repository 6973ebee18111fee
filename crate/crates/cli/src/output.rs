//! Output files: every artifact embeds the resolved-config hash and is
//! written atomically (temp file + rename) once its content is complete.

use anyhow::{Context, Result};
use std::path::{Path, PathBuf};

pub struct OutputDir {
    dir: PathBuf,
    config_hash: String,
}

impl OutputDir {
    pub fn create(dir: &Path, config_hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output dir {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), config_hash: config_hash.to_string() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_atomic(&self, name: &str, content: &str) -> Result<PathBuf> {
        let path = self.path(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, content)
            .with_context(|| format!("cannot write {}", tmp.display()))?;
        std::fs::rename(&tmp, &path)
            .with_context(|| format!("cannot move {} into place", path.display()))?;
        Ok(path)
    }

    /// CSV with a `# config_hash=...` comment line above the header.
    pub fn write_csv(&self, name: &str, csv_body: &str) -> Result<PathBuf> {
        let content = format!("# config_hash={}\n{csv_body}", self.config_hash);
        self.write_atomic(name, &content)
    }

    /// Line-delimited log with a hash meta line before the trace header.
    pub fn write_jsonl(&self, name: &str, body: &str) -> Result<PathBuf> {
        let content = format!("{{\"config_hash\":\"{}\"}}\n{body}", self.config_hash);
        self.write_atomic(name, &content)
    }

    pub fn write_json(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write_atomic(name, body)
    }
}

/// Strips the hash meta line a [`OutputDir::write_jsonl`] file starts with.
pub fn strip_meta_line(text: &str) -> &str {
    match text.split_once('\n') {
        Some((first, rest)) if first.contains("config_hash") => rest,
        _ => text,
    }
}
