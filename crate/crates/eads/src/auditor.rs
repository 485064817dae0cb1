//! External auditor. Reads only trusted storage, never the server.
//!
//! A journal file is read line by line. An unterminated final line is a
//! torn write and is ignored; any other line that fails strict decoding is
//! reported as a `DECODE` link.

use std::collections::HashSet;
use std::path::PathBuf;

use eads_core::{
    detect_fork, AuditReport, ChainVerifier, ForkError, ForkEvidence, HistoryRecord, LedgerId,
    Overall, PublicKey,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::storage::Envelope;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("cannot read journal {source_name}: {detail}")]
    Read { source_name: String, detail: String },
    #[error(transparent)]
    Fork(#[from] ForkError),
}

/// Where the auditor reads a journal from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JournalSource {
    File(PathBuf),
    /// A `/journal/{id}` URL, or a server base URL it is derived from.
    Http(String),
}

impl JournalSource {
    pub fn parse(s: &str) -> Self {
        if s.starts_with("http://") || s.starts_with("https://") {
            JournalSource::Http(s.to_owned())
        } else {
            JournalSource::File(PathBuf::from(s))
        }
    }

    fn name(&self) -> String {
        match self {
            JournalSource::File(p) => p.display().to_string(),
            JournalSource::Http(u) => u.clone(),
        }
    }

    /// Reads the journal, returning the raw bytes and one item per record.
    pub fn fetch(&self, ledger: &str) -> Result<Fetched, AuditError> {
        let read_err = |detail: String| AuditError::Read {
            source_name: self.name(),
            detail,
        };
        match self {
            JournalSource::File(path) => {
                let bytes = std::fs::read(path).map_err(|e| read_err(e.to_string()))?;
                let items = split_lines(&bytes);
                Ok(Fetched { bytes, items })
            }
            JournalSource::Http(url) => {
                let url = if url.contains("/journal/") {
                    url.clone()
                } else {
                    format!("{}/journal/{ledger}", url.trim_end_matches('/'))
                };
                let agent: ureq::Agent = ureq::Agent::config_builder().build().into();
                let bytes = agent
                    .get(&url)
                    .call()
                    .and_then(|r| r.into_body().read_to_vec())
                    .map_err(|e| read_err(e.to_string()))?;
                let values: Vec<Value> = serde_json::from_slice(&bytes)
                    .map_err(|e| read_err(format!("not a JSON array: {e}")))?;
                let items = values.into_iter().map(Item::Value).collect();
                Ok(Fetched { bytes, items })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Value(Value),
    Undecodable,
}

#[derive(Debug, Clone)]
pub struct Fetched {
    /// Everything read from the source.
    pub bytes: Vec<u8>,
    pub items: Vec<Item>,
}

fn split_lines(bytes: &[u8]) -> Vec<Item> {
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    bytes[..complete]
        .split_inclusive(|b| *b == b'\n')
        .map(|line| {
            serde_json::from_slice(&line[..line.len() - 1]).map_or(Item::Undecodable, Item::Value)
        })
        .collect()
}

/// Ledger a journal value claims to belong to, if it says.
fn claimed_ledger(v: &Value) -> Option<&str> {
    let record = v.get("record").unwrap_or(v);
    record.get("checkpoint")?.get("ledger_id")?.as_str()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditOutcome {
    #[serde(flatten)]
    pub report: AuditReport,
    pub privacy_attested: bool,
    pub bytes_read: u64,
}

impl AuditOutcome {
    pub fn overall(&self) -> Overall {
        if self.privacy_attested {
            self.report.overall
        } else {
            self.report.overall.max_with(Overall::Inconsistent)
        }
    }
}

trait OverallExt {
    fn max_with(self, other: Overall) -> Overall;
}

impl OverallExt for Overall {
    fn max_with(self, other: Overall) -> Overall {
        let rank = |o: Overall| match o {
            Overall::Consistent => 0,
            Overall::Inconsistent => 1,
            Overall::Forked => 2,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

/// Verifies one ledger's history from `items`, in stored order.
pub fn audit_items(
    items: &[Item],
    ledger: &str,
    pk: &PublicKey,
) -> (AuditReport, bool, Vec<HistoryRecord>) {
    let mut verifier = ChainVerifier::new(ledger, pk);
    let mut privacy = true;
    let mut records = Vec::new();
    for item in items {
        let Item::Value(v) = item else {
            verifier.push_undecodable();
            privacy = false;
            continue;
        };
        if claimed_ledger(v).is_some_and(|id| id != ledger) {
            continue;
        }
        privacy &= attest_value(v);
        match decode_record(v) {
            Some(rec) => {
                verifier.push(&rec);
                records.push(rec);
            }
            None => verifier.push_undecodable(),
        }
    }
    (verifier.finish(), privacy, records)
}

fn decode_record(v: &Value) -> Option<HistoryRecord> {
    if v.get("seq").is_some() {
        serde_json::from_value::<Envelope>(v.clone())
            .ok()
            .map(|e| e.record)
    } else {
        serde_json::from_value(v.clone()).ok()
    }
}

pub fn audit(
    source: &JournalSource,
    ledger: &str,
    pk: &PublicKey,
) -> Result<AuditOutcome, AuditError> {
    let fetched = source.fetch(ledger)?;
    let (report, privacy_attested, _) = audit_items(&fetched.items, ledger, pk);
    Ok(AuditOutcome {
        report,
        privacy_attested,
        bytes_read: fetched.bytes.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossOutcome {
    pub a: AuditOutcome,
    pub b: AuditOutcome,
    pub fork_evidence: Option<ForkEvidence>,
    pub overall: Overall,
}

/// Audits two journals for the same ledger and compares them for a fork.
pub fn audit_cross(
    a: &JournalSource,
    b: &JournalSource,
    ledger: &str,
    pk: &PublicKey,
) -> Result<CrossOutcome, AuditError> {
    let fa = a.fetch(ledger)?;
    let fb = b.fetch(ledger)?;
    let (ra, pa, recs_a) = audit_items(&fa.items, ledger, pk);
    let (rb, pb, recs_b) = audit_items(&fb.items, ledger, pk);
    let fork_evidence = detect_fork(&recs_a, &recs_b, pk)?;
    let a = AuditOutcome {
        report: ra,
        privacy_attested: pa,
        bytes_read: fa.bytes.len() as u64,
    };
    let b = AuditOutcome {
        report: rb,
        privacy_attested: pb,
        bytes_read: fb.bytes.len() as u64,
    };
    let overall = if fork_evidence.is_some() {
        Overall::Forked
    } else {
        a.overall().max_with(b.overall())
    };
    Ok(CrossOutcome {
        a,
        b,
        fork_evidence,
        overall,
    })
}

/// True iff every value is a journal envelope or history record made only of
/// ids, integers, 32-byte hashes and 64-byte signatures.
pub fn privacy_attest(records: &[Value]) -> bool {
    records.iter().all(attest_value)
}

fn attest_value(v: &Value) -> bool {
    let Some(obj) = v.as_object() else {
        return false;
    };
    if obj.contains_key("seq") {
        exact_keys(obj, &["seq", "record"], &[])
            && is_u64(&obj["seq"])
            && attest_record(&obj["record"])
    } else {
        attest_record(v)
    }
}

fn exact_keys(obj: &Map<String, Value>, required: &[&str], optional: &[&str]) -> bool {
    required.iter().all(|k| obj.contains_key(*k))
        && obj
            .keys()
            .all(|k| required.contains(&k.as_str()) || optional.contains(&k.as_str()))
}

fn is_u64(v: &Value) -> bool {
    v.as_u64().is_some()
}

fn is_lower_hex(v: &Value, len: usize) -> bool {
    v.as_str().is_some_and(|s| {
        s.len() == len && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
    })
}

fn is_hash(v: &Value) -> bool {
    is_lower_hex(v, 64)
}

fn attest_record(v: &Value) -> bool {
    let Some(obj) = v.as_object() else {
        return false;
    };
    if !exact_keys(obj, &["checkpoint"], &["prev_version", "consistency"]) {
        return false;
    }
    let prev_ok = obj
        .get("prev_version")
        .is_none_or(|p| p.is_null() || is_u64(p));
    let cons_ok = obj
        .get("consistency")
        .is_none_or(|c| c.is_null() || attest_consistency(c));
    prev_ok && cons_ok && attest_checkpoint(&obj["checkpoint"])
}

fn attest_checkpoint(v: &Value) -> bool {
    let Some(obj) = v.as_object() else {
        return false;
    };
    exact_keys(
        obj,
        &[
            "ledger_id",
            "version",
            "tree_size",
            "root",
            "timestamp",
            "signature",
        ],
        &["map_root"],
    ) && obj["ledger_id"]
        .as_str()
        .is_some_and(|s| LedgerId::new(s).is_ok())
        && is_u64(&obj["version"])
        && is_u64(&obj["tree_size"])
        && is_u64(&obj["timestamp"])
        && is_hash(&obj["root"])
        && obj
            .get("map_root")
            .is_none_or(|m| m.is_null() || is_hash(m))
        && is_lower_hex(&obj["signature"], 128)
}

fn attest_consistency(v: &Value) -> bool {
    let Some(obj) = v.as_object() else {
        return false;
    };
    exact_keys(obj, &["old_size", "new_size", "nodes"], &[])
        && is_u64(&obj["old_size"])
        && is_u64(&obj["new_size"])
        && obj["nodes"]
            .as_array()
            .is_some_and(|n| n.iter().all(is_hash))
}

/// Counts payloads that occur in `haystack` as raw bytes or as lowercase
/// hex. Payloads must be at least 16 bytes long.
pub fn leak_scan<'a>(haystack: &[u8], payloads: impl IntoIterator<Item = &'a [u8]>) -> usize {
    const W: usize = 16;
    let windows: HashSet<&[u8]> = haystack.windows(W).collect();
    let contains = |needle: &[u8]| {
        windows.contains(&needle[..W]) && haystack.windows(needle.len()).any(|w| w == needle)
    };
    payloads
        .into_iter()
        .filter(|p| {
            assert!(
                p.len() >= W,
                "payloads shorter than {W} bytes cannot be scanned"
            );
            contains(p) || contains(hex::encode(p).as_bytes())
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torn_tail_is_ignored() {
        let items = split_lines(b"{\"a\":1}\nnot json\n{\"b\":");
        assert_eq!(items.len(), 2);
        assert_eq!(items[1], Item::Undecodable);
        assert!(split_lines(b"").is_empty());
        assert!(split_lines(b"{\"a\":").is_empty());
        assert_eq!(split_lines(b"{}\n").len(), 1);
    }

    #[test]
    fn attest_rejects_extra_fields() {
        let cp = serde_json::json!({
            "ledger_id": "main", "version": 0, "tree_size": 0,
            "root": "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
            "map_root": null, "timestamp": 1, "signature": "ab".repeat(64)
        });
        let rec = serde_json::json!({"checkpoint": cp, "prev_version": null, "consistency": null});
        let env = serde_json::json!({"seq": 1, "record": rec});
        assert!(privacy_attest(&[env.clone(), rec.clone()]));

        let mut injected = env.clone();
        injected["record"]["entry"] = Value::from("68656c6c6f");
        assert!(!privacy_attest(&[injected]));
        let mut bad_sig = rec.clone();
        bad_sig["checkpoint"]["signature"] = Value::from("00");
        assert!(!privacy_attest(&[bad_sig]));
        let mut upper = rec;
        upper["checkpoint"]["root"] = Value::from("E".repeat(64));
        assert!(!privacy_attest(&[upper]));
    }

    #[test]
    fn leak_scan_finds_raw_and_hex() {
        let secret = b"0123456789abcdef-secret".to_vec();
        let mut hay = b"prefix ".to_vec();
        hay.extend_from_slice(hex::encode(&secret).as_bytes());
        assert_eq!(leak_scan(&hay, [secret.as_slice()]), 1);
        assert_eq!(
            leak_scan(b"nothing to see here at all", [secret.as_slice()]),
            0
        );
        let mut raw = b"x".to_vec();
        raw.extend_from_slice(&secret);
        assert_eq!(leak_scan(&raw, [secret.as_slice()]), 1);
    }
}
