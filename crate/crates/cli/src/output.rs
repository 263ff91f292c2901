//! Artifact files of one run. Everything written is tracked so a failed run
//! can be rolled back; the manifest is written last.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST: &str = "manifest.json";

pub struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    /// Creates the directory and drops any manifest left by an earlier run.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let stale = dir.join(MANIFEST);
        if stale.exists() {
            fs::remove_file(&stale).with_context(|| format!("removing {}", stale.display()))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    /// Writes `header` then one serialized record per row, so empty tables
    /// still carry their header.
    pub fn table<T, I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        T: Serialize,
        I: IntoIterator<Item = T>,
    {
        let f = self.file(name)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
        w.write_record(header)?;
        for row in rows {
            w.serialize(row).with_context(|| format!("writing {name}"))?;
        }
        w.flush().with_context(|| format!("writing {name}"))
    }

    /// Runs a library writer against a fresh file.
    pub fn with<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(BufWriter<File>) -> csv::Result<()>,
    {
        let f = self.file(name)?;
        write(f).with_context(|| format!("writing {name}"))
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        writeln!(f)?;
        f.flush().with_context(|| format!("writing {name}"))
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Removes every file this run created.
    pub fn discard(self) {
        for name in &self.written {
            let path = self.dir.join(name);
            if let Err(e) = fs::remove_file(&path) {
                log::warn!("could not remove partial output {}: {e}", path.display());
            }
        }
    }
}
