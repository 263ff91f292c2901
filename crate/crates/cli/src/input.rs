use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use informal_lob::ingest::{parse_orders, partition_by_day, DayPartition, Format, OrderRecord, Reject};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileReject {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

/// Orders of all inputs, numbered in file order.
#[derive(Debug, Default)]
pub struct Loaded {
    pub orders: Vec<OrderRecord>,
    pub rejects: Vec<FileReject>,
    pub digests: Vec<InputDigest>,
}

fn format_for(path: &Path, setting: &str) -> Result<Format> {
    if setting != "auto" {
        return setting.parse().map_err(anyhow::Error::msg);
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    Ok(match ext.to_ascii_lowercase().as_str() {
        "jsonl" | "ndjson" => Format::Jsonl,
        _ => Format::Csv,
    })
}

pub fn load(paths: &[PathBuf], format: &str) -> Result<Loaded> {
    if paths.is_empty() {
        bail!("no input given (use --input)");
    }
    let mut out = Loaded::default();
    for path in paths {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let name = path.display().to_string();
        out.digests.push(InputDigest {
            path: name.clone(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        if bytes.iter().all(u8::is_ascii_whitespace) {
            log::warn!("{name} is empty");
            continue;
        }
        let parsed = parse_orders(bytes.as_slice(), format_for(path, format)?).with_context(|| format!("parsing {name}"))?;
        let offset = out.orders.len() as u64;
        out.orders.extend(parsed.orders.into_iter().map(|mut o| {
            o.id += offset;
            o
        }));
        out.rejects.extend(parsed.rejects.into_iter().map(|Reject { line, reason }| FileReject {
            file: name.clone(),
            line,
            reason,
        }));
    }
    Ok(out)
}

impl Loaded {
    /// Day partitions, cut to the first `horizon` days when given.
    pub fn days(&self, horizon: Option<usize>) -> Vec<DayPartition> {
        let mut days = partition_by_day(&self.orders);
        if let Some(h) = horizon {
            days.truncate(h);
        }
        days
    }

    pub fn require_orders(&self) -> Result<()> {
        if self.orders.is_empty() {
            bail!("no orders in input");
        }
        Ok(())
    }
}
