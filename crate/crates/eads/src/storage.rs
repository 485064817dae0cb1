//! Trusted storage: an append-only JSON Lines journal of history records.
//!
//! Each line is `{"seq":N,"record":{...}}`. Appends are flushed before they
//! return. On open, a final line that does not parse is treated as a torn
//! write and cut off; a bad line anywhere else is corruption.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use eads_core::HistoryRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("journal {path} is corrupt at line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("conflict on ledger {ledger}: record links to version {got:?}, latest stored is {expected:?}")]
    Conflict {
        ledger: String,
        expected: Option<u64>,
        got: Option<u64>,
    },
    #[error("invalid record: {0}")]
    Input(String),
}

/// One stored line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub seq: u64,
    pub record: HistoryRecord,
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    sync: bool,
    envelopes: Vec<Envelope>,
    by_ledger: HashMap<String, Vec<usize>>,
}

impl Journal {
    /// Opens or creates the journal, applying the torn-line recovery rule.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut text = Vec::new();
        file.read_to_end(&mut text)?;

        let mut envelopes: Vec<Envelope> = Vec::new();
        let mut offset = 0usize;
        let mut keep = 0usize;
        let mut lineno = 0usize;
        while offset < text.len() {
            lineno += 1;
            let end = text[offset..]
                .iter()
                .position(|b| *b == b'\n')
                .map(|p| offset + p);
            let line = &text[offset..end.unwrap_or(text.len())];
            let next = end.map_or(text.len(), |e| e + 1);
            let is_last = next >= text.len();
            match serde_json::from_slice::<Envelope>(line) {
                Ok(env) => {
                    if envelopes.last().is_some_and(|prev| env.seq <= prev.seq) {
                        return Err(JournalError::Corrupt {
                            path,
                            line: lineno,
                            reason: format!("sequence {} does not increase", env.seq),
                        });
                    }
                    envelopes.push(env);
                    keep = next;
                }
                Err(_) if is_last => {
                    tracing::warn!(path = %path.display(), line = lineno, "discarding torn final journal line");
                    break;
                }
                Err(e) => {
                    return Err(JournalError::Corrupt {
                        path,
                        line: lineno,
                        reason: e.to_string(),
                    })
                }
            }
            offset = next;
        }
        if keep < text.len() || (keep > 0 && text[keep - 1] != b'\n') {
            file.set_len(keep as u64)?;
            if keep > 0 && text[keep - 1] != b'\n' {
                // A complete record whose newline was lost.
                file.write_all(b"\n")?;
            }
            file.sync_data()?;
        }

        let mut by_ledger: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, env) in envelopes.iter().enumerate() {
            by_ledger
                .entry(env.record.checkpoint.ledger_id.as_str().to_owned())
                .or_default()
                .push(i);
        }
        Ok(Journal {
            path,
            file,
            sync: true,
            envelopes,
            by_ledger,
        })
    }

    /// With `sync` off appends are flushed to the OS but not fsynced.
    pub fn set_sync(&mut self, sync: bool) {
        self.sync = sync;
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Last assigned sequence number (0 when empty).
    pub fn sequence(&self) -> u64 {
        self.envelopes.last().map_or(0, |e| e.seq)
    }

    /// Appends a record after checking it links to the ledger's latest version.
    pub fn append(&mut self, record: HistoryRecord) -> Result<u64, JournalError> {
        let ledger = record.checkpoint.ledger_id.as_str().to_owned();
        let expected = self.latest(&ledger).map(HistoryRecord::version);
        if record.prev_version != expected {
            return Err(JournalError::Conflict {
                ledger,
                expected,
                got: record.prev_version,
            });
        }
        let env = Envelope {
            seq: self.sequence() + 1,
            record,
        };
        let mut line = serde_json::to_vec(&env).map_err(|e| JournalError::Input(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        if self.sync {
            self.file.sync_data()?;
        }
        let seq = env.seq;
        self.by_ledger
            .entry(ledger)
            .or_default()
            .push(self.envelopes.len());
        self.envelopes.push(env);
        Ok(seq)
    }

    /// Decodes a JSON record and appends it.
    pub fn append_json(&mut self, json: &str) -> Result<u64, JournalError> {
        let record: HistoryRecord =
            serde_json::from_str(json).map_err(|e| JournalError::Input(e.to_string()))?;
        self.append(record)
    }

    pub fn envelopes(&self, ledger: &str) -> impl Iterator<Item = &Envelope> {
        self.by_ledger
            .get(ledger)
            .into_iter()
            .flatten()
            .map(|&i| &self.envelopes[i])
    }

    pub fn records(&self, ledger: &str) -> impl Iterator<Item = &HistoryRecord> {
        self.envelopes(ledger).map(|e| &e.record)
    }

    /// Records with `from_version <= version <= to_version`, in stored order.
    pub fn read(&self, ledger: &str, from_version: u64, to_version: u64) -> Vec<HistoryRecord> {
        self.records(ledger)
            .filter(|r| (from_version..=to_version).contains(&r.version()))
            .cloned()
            .collect()
    }

    pub fn latest(&self, ledger: &str) -> Option<&HistoryRecord> {
        let &i = self.by_ledger.get(ledger)?.last()?;
        Some(&self.envelopes[i].record)
    }

    pub fn latest_envelope(&self, ledger: &str) -> Option<&Envelope> {
        let &i = self.by_ledger.get(ledger)?.last()?;
        Some(&self.envelopes[i])
    }

    pub fn ledgers(&self) -> impl Iterator<Item = &str> {
        self.by_ledger.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.envelopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelopes.is_empty()
    }
}
