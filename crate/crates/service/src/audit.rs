//! Review decisions and their append-only JSONL log.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionAction {
    Relabel,
    Keep,
    MarkRemove,
}

impl DecisionAction {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionAction::Relabel => "relabel",
            DecisionAction::Keep => "keep",
            DecisionAction::MarkRemove => "mark_remove",
        }
    }
}

/// One reviewer action. `old_label` is the working label at the time the
/// decision was accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub sample_id: String,
    pub old_label: String,
    pub new_label: String,
    pub action: DecisionAction,
    pub timestamp: String,
    pub reviewer: String,
}

impl LabelDecision {
    /// Relabel must change the label; Keep and MarkRemove must not.
    pub fn check(&self) -> Result<(), String> {
        match self.action {
            DecisionAction::Relabel if self.new_label == self.old_label => Err(format!(
                "relabel of {:?} must change the label (already {:?})",
                self.sample_id, self.old_label
            )),
            DecisionAction::Keep | DecisionAction::MarkRemove
                if self.new_label != self.old_label =>
            {
                Err(format!(
                    "{} of {:?} cannot change the label from {:?} to {:?}",
                    self.action.as_str(),
                    self.sample_id,
                    self.old_label,
                    self.new_label
                ))
            }
            _ => Ok(()),
        }
    }
}

pub fn timestamp_now() -> String {
    let now: DateTime<Utc> = Utc::now();
    now.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Appends one JSON line per decision and syncs it before returning.
#[derive(Debug, Clone)]
pub struct AuditLog {
    path: PathBuf,
}

impl AuditLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Existing entries, or an empty list when the file does not exist yet.
    pub fn read(&self) -> io::Result<Vec<LabelDecision>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", self.path.display(), i + 1),
                )
            })?;
            out.push(entry);
        }
        Ok(out)
    }

    pub fn append(&self, decision: &LabelDecision) -> io::Result<()> {
        let mut line = serde_json::to_vec(decision)?;
        line.push(b'\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        file.write_all(&line)?;
        file.sync_data()
    }
}
