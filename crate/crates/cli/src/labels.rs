//! Append-only label records.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::num::NonZeroU32;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use herdid_core::IdentityId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotInList {
    #[serde(rename = "not-in-list")]
    NotInList,
}

/// Where the chosen identity sat in the suggestion list: a 1-based rank,
/// or `"not-in-list"` when it was picked some other way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rank {
    Listed(NonZeroU32),
    NotInList(NotInList),
}

impl Rank {
    pub fn listed(r: u32) -> Option<Rank> {
        NonZeroU32::new(r).map(Rank::Listed)
    }

    pub fn not_in_list() -> Rank {
        Rank::NotInList(NotInList::NotInList)
    }

    pub fn position(&self) -> Option<u32> {
        match self {
            Rank::Listed(r) => Some(r.get()),
            Rank::NotInList(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub tracklet_id: u64,
    /// `None` marks an individual that is not enrolled.
    pub identity: Option<IdentityId>,
    pub rank: Rank,
    pub annotator: String,
    /// Unix seconds, as reported by the client.
    #[serde(default)]
    pub timestamp: Option<u64>,
}

/// Label records backed by a JSON-lines file. Every append is flushed and
/// synced before it is acknowledged; opening replays the file.
#[derive(Debug)]
pub struct LabelStore {
    path: PathBuf,
    file: File,
    records: Vec<LabelRecord>,
    labelled: HashSet<u64>,
}

impl LabelStore {
    pub fn open(path: &Path) -> anyhow::Result<Self> {
        let mut records = Vec::new();
        if path.exists() {
            let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            // Everything after the last newline is a torn write and is dropped.
            let complete = raw.rfind('\n').map_or(0, |p| p + 1);
            for (i, line) in raw[..complete].lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LabelRecord>(line) {
                    Ok(r) => records.push(r),
                    Err(e) => bail!("{}:{}: {e}", path.display(), i + 1),
                }
            }
            if complete < raw.len() {
                OpenOptions::new().write(true).open(path)?.set_len(complete as u64)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let labelled = records.iter().map(|r| r.tracklet_id).collect();
        Ok(Self {
            path: path.to_path_buf(),
            file,
            records,
            labelled,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }

    pub fn is_labelled(&self, tracklet_id: u64) -> bool {
        self.labelled.contains(&tracklet_id)
    }

    pub fn append(&mut self, record: LabelRecord) -> anyhow::Result<()> {
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()?;
        self.labelled.insert(record.tracklet_id);
        self.records.push(record);
        Ok(())
    }

    /// Fraction of records whose rank is at most `n`.
    pub fn hit_rate(&self, n: u32) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let hits = self
            .records
            .iter()
            .filter(|r| r.rank.position().is_some_and(|p| p <= n))
            .count();
        Some(hits as f64 / self.records.len() as f64)
    }
}
