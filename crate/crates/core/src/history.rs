//! Signed checkpoints, history records, and chain verification.
//!
//! A history is an ordered list of [`HistoryRecord`]s, each carrying a
//! signed checkpoint and a consistency proof from the previous checkpoint.
//! Records hold only hashes, sizes, ids, timestamps and signatures. Checking
//! every adjacent pair is enough: consistency is transitive, so an
//! unbroken chain is consistent for every pair of versions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::Hash;
use crate::log::{verify_consistency, ConsistencyProof};
use crate::sig::{Signature, Signer, Verifier};

const CHECKPOINT_TAG: &str = "eads/v1";
const MAX_LEDGER_ID_LEN: usize = 64;

/// Ledger name: 1 to 64 characters from `[A-Za-z0-9._-]`.
///
/// The restricted alphabet keeps the newline-delimited signed payload
/// unambiguous and makes ids safe as URL path segments and file names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LedgerId(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid ledger id {0:?}: expected 1-64 characters from [A-Za-z0-9._-]")]
pub struct InvalidLedgerId(pub String);

impl LedgerId {
    pub fn new(id: impl Into<String>) -> Result<Self, InvalidLedgerId> {
        let id = id.into();
        let ok = !id.is_empty()
            && id.len() <= MAX_LEDGER_ID_LEN
            && id
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
        if ok {
            Ok(LedgerId(id))
        } else {
            Err(InvalidLedgerId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LedgerId {
    type Error = InvalidLedgerId;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        LedgerId::new(s)
    }
}

impl From<LedgerId> for String {
    fn from(id: LedgerId) -> String {
        id.0
    }
}

impl fmt::Display for LedgerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A signed digest of one data structure version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignedCheckpoint {
    pub ledger_id: LedgerId,
    /// Number of edits applied when this checkpoint was taken.
    pub version: u64,
    pub tree_size: u64,
    pub root: Hash,
    pub map_root: Option<Hash>,
    /// Milliseconds since the Unix epoch, UTC.
    pub timestamp: u64,
    pub signature: Signature,
}

/// Newline-delimited payload covered by the checkpoint signature.
pub fn checkpoint_signing_bytes(
    ledger_id: &LedgerId,
    version: u64,
    tree_size: u64,
    root: &Hash,
    map_root: Option<&Hash>,
    timestamp: u64,
) -> Vec<u8> {
    let map_root = map_root.map_or_else(|| String::from("-"), Hash::to_hex);
    format!(
        "{CHECKPOINT_TAG}\n{ledger_id}\n{version}\n{tree_size}\n{root}\n{map_root}\n{timestamp}\n"
    )
    .into_bytes()
}

impl SignedCheckpoint {
    pub fn signing_bytes(&self) -> Vec<u8> {
        checkpoint_signing_bytes(
            &self.ledger_id,
            self.version,
            self.tree_size,
            &self.root,
            self.map_root.as_ref(),
            self.timestamp,
        )
    }

    pub fn verify(&self, verifier: &impl Verifier) -> bool {
        verifier.verify(&self.signing_bytes(), &self.signature)
    }

    /// Same version content: everything but timestamp and signature.
    pub fn same_state(&self, other: &SignedCheckpoint) -> bool {
        self.tree_size == other.tree_size
            && self.root == other.root
            && self.map_root == other.map_root
    }
}

pub fn make_checkpoint(
    ledger_id: &LedgerId,
    version: u64,
    tree_size: u64,
    root: Hash,
    map_root: Option<Hash>,
    timestamp: u64,
    signer: &impl Signer,
) -> SignedCheckpoint {
    let payload = checkpoint_signing_bytes(
        ledger_id,
        version,
        tree_size,
        &root,
        map_root.as_ref(),
        timestamp,
    );
    SignedCheckpoint {
        ledger_id: ledger_id.clone(),
        version,
        tree_size,
        root,
        map_root,
        timestamp,
        signature: signer.sign(&payload),
    }
}

/// One entry of the published history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryRecord {
    pub checkpoint: SignedCheckpoint,
    pub prev_version: Option<u64>,
    /// Proof from the previous checkpoint; absent only at genesis.
    pub consistency: Option<ConsistencyProof>,
}

impl HistoryRecord {
    pub fn genesis(checkpoint: SignedCheckpoint) -> Self {
        HistoryRecord {
            checkpoint,
            prev_version: None,
            consistency: None,
        }
    }

    pub fn version(&self) -> u64 {
        self.checkpoint.version
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LinkVerdict {
    Ok,
    BadSignature,
    SizeRegression,
    ProofInvalid,
    VersionGap,
    LedgerMismatch,
    /// The stored record could not be decoded.
    Decode,
}

impl fmt::Display for LinkVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LinkVerdict::Ok => "OK",
            LinkVerdict::BadSignature => "BAD_SIGNATURE",
            LinkVerdict::SizeRegression => "SIZE_REGRESSION",
            LinkVerdict::ProofInvalid => "PROOF_INVALID",
            LinkVerdict::VersionGap => "VERSION_GAP",
            LinkVerdict::LedgerMismatch => "LEDGER_MISMATCH",
            LinkVerdict::Decode => "DECODE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkResult {
    /// `None` when the earlier record could not be decoded.
    pub from_version: Option<u64>,
    /// `None` when this record could not be decoded.
    pub to_version: Option<u64>,
    pub verdict: LinkVerdict,
}

/// Two validly signed checkpoints that claim the same version (or the same
/// tree size) with different contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForkEvidence {
    pub version: u64,
    pub a: SignedCheckpoint,
    pub b: SignedCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Overall {
    Consistent,
    Inconsistent,
    Forked,
}

impl fmt::Display for Overall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Overall::Consistent => "CONSISTENT",
            Overall::Inconsistent => "INCONSISTENT",
            Overall::Forked => "FORKED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub ledger_id: String,
    pub records_checked: u64,
    /// Signature and ledger check of the first record, which has no
    /// predecessor to link to.
    pub first_record: Option<LinkVerdict>,
    pub link_results: Vec<LinkResult>,
    pub fork_evidence: Option<ForkEvidence>,
    pub overall: Overall,
}

impl AuditReport {
    pub fn bad_links(&self) -> impl Iterator<Item = &LinkResult> {
        self.link_results
            .iter()
            .filter(|l| l.verdict != LinkVerdict::Ok)
    }

    pub fn first_bad_link(&self) -> Option<&LinkResult> {
        self.bad_links().next()
    }

    /// Attaches fork evidence; a fork overrides any other outcome.
    pub fn with_fork(mut self, evidence: Option<ForkEvidence>) -> Self {
        if evidence.is_some() {
            self.fork_evidence = evidence;
        }
        self.overall = self.compute_overall();
        self
    }

    fn compute_overall(&self) -> Overall {
        if self.fork_evidence.is_some() {
            Overall::Forked
        } else if self.first_record.is_some_and(|v| v != LinkVerdict::Ok)
            || self.bad_links().next().is_some()
        {
            Overall::Inconsistent
        } else {
            Overall::Consistent
        }
    }
}

/// Incremental chain checker, fed one stored record at a time.
#[derive(Debug)]
pub struct ChainVerifier<V> {
    ledger_id: String,
    verifier: V,
    prev: Option<SignedCheckpoint>,
    records_checked: u64,
    first_record: Option<LinkVerdict>,
    links: Vec<LinkResult>,
}

impl<V: Verifier> ChainVerifier<V> {
    pub fn new(ledger_id: impl Into<String>, verifier: V) -> Self {
        ChainVerifier {
            ledger_id: ledger_id.into(),
            verifier,
            prev: None,
            records_checked: 0,
            first_record: None,
            links: Vec::new(),
        }
    }

    pub fn push(&mut self, record: &HistoryRecord) {
        let cp = &record.checkpoint;
        let own = if !cp.verify(&self.verifier) {
            LinkVerdict::BadSignature
        } else if cp.ledger_id.as_str() != self.ledger_id {
            LinkVerdict::LedgerMismatch
        } else {
            LinkVerdict::Ok
        };

        match (self.records_checked, &self.prev) {
            (0, _) => self.first_record = Some(own),
            (_, None) => self.links.push(LinkResult {
                from_version: None,
                to_version: Some(cp.version),
                verdict: if own == LinkVerdict::Ok {
                    LinkVerdict::Decode
                } else {
                    own
                },
            }),
            (_, Some(prev)) => {
                let verdict = if own != LinkVerdict::Ok {
                    own
                } else {
                    check_link(prev, record)
                };
                self.links.push(LinkResult {
                    from_version: Some(prev.version),
                    to_version: Some(cp.version),
                    verdict,
                });
            }
        }
        self.prev = Some(cp.clone());
        self.records_checked += 1;
    }

    /// Records that a stored entry failed to decode.
    pub fn push_undecodable(&mut self) {
        if self.records_checked == 0 {
            self.first_record = Some(LinkVerdict::Decode);
        } else {
            self.links.push(LinkResult {
                from_version: self.prev.as_ref().map(|p| p.version),
                to_version: None,
                verdict: LinkVerdict::Decode,
            });
        }
        self.prev = None;
        self.records_checked += 1;
    }

    pub fn finish(self) -> AuditReport {
        let report = AuditReport {
            ledger_id: self.ledger_id,
            records_checked: self.records_checked,
            first_record: self.first_record,
            link_results: self.links,
            fork_evidence: None,
            overall: Overall::Consistent,
        };
        report.with_fork(None)
    }
}

fn check_link(prev: &SignedCheckpoint, record: &HistoryRecord) -> LinkVerdict {
    let cp = &record.checkpoint;
    if record.prev_version != Some(prev.version) || cp.version <= prev.version {
        return LinkVerdict::VersionGap;
    }
    if cp.tree_size < prev.tree_size {
        return LinkVerdict::SizeRegression;
    }
    match &record.consistency {
        Some(proof)
            if verify_consistency(prev.tree_size, &prev.root, cp.tree_size, &cp.root, proof) =>
        {
            LinkVerdict::Ok
        }
        _ => LinkVerdict::ProofInvalid,
    }
}

/// Verifies signatures, linkage and consistency proofs of a stored history.
///
/// An empty history is vacuously consistent.
pub fn verify_chain(
    ledger_id: &str,
    records: &[HistoryRecord],
    verifier: &impl Verifier,
) -> AuditReport {
    let mut chain = ChainVerifier::new(ledger_id, verifier);
    for r in records {
        chain.push(r);
    }
    chain.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForkError {
    #[error("records belong to different ledgers: {0} and {1}")]
    LedgerMismatch(String, String),
}

/// Finds the earliest pair of validly signed checkpoints, one from each
/// history, that claim the same version or the same tree size but describe
/// different states.
///
/// Returns `None` when one history is a consistent extension of the other.
pub fn detect_fork(
    records_a: &[HistoryRecord],
    records_b: &[HistoryRecord],
    verifier: &impl Verifier,
) -> Result<Option<ForkEvidence>, ForkError> {
    let mut ids = records_a
        .iter()
        .chain(records_b)
        .map(|r| &r.checkpoint.ledger_id);
    if let Some(first) = ids.next() {
        if let Some(other) = ids.find(|id| *id != first) {
            return Err(ForkError::LedgerMismatch(
                first.as_str().into(),
                other.as_str().into(),
            ));
        }
    }

    let signed = |records: &[HistoryRecord]| -> Vec<SignedCheckpoint> {
        records
            .iter()
            .map(|r| &r.checkpoint)
            .filter(|cp| cp.verify(verifier))
            .cloned()
            .collect()
    };
    let a = signed(records_a);
    let b = signed(records_b);

    let mut b_by_version: BTreeMap<u64, &SignedCheckpoint> = BTreeMap::new();
    let mut b_by_size: BTreeMap<u64, &SignedCheckpoint> = BTreeMap::new();
    for cp in &b {
        b_by_version.entry(cp.version).or_insert(cp);
        b_by_size.entry(cp.tree_size).or_insert(cp);
    }

    let mut best: Option<ForkEvidence> = None;
    for cp in &a {
        let candidates = [
            b_by_version
                .get(&cp.version)
                .filter(|other| !cp.same_state(other)),
            b_by_size
                .get(&cp.tree_size)
                .filter(|other| other.root != cp.root),
        ];
        for other in candidates.into_iter().flatten() {
            let version = cp.version.min(other.version);
            if best.as_ref().is_none_or(|e| version < e.version) {
                best = Some(ForkEvidence {
                    version,
                    a: cp.clone(),
                    b: (*other).clone(),
                });
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::{empty_root, leaf_hash};
    use crate::sig::KeyPair;

    fn id(s: &str) -> LedgerId {
        LedgerId::new(s).unwrap()
    }

    #[test]
    fn ledger_id_alphabet() {
        assert!(LedgerId::new("main").is_ok());
        assert!(LedgerId::new("a.b_c-1").is_ok());
        assert!(LedgerId::new("").is_err());
        assert!(LedgerId::new("a\nb").is_err());
        assert!(LedgerId::new("a/b").is_err());
        assert!(LedgerId::new("x".repeat(65)).is_err());
        let bad: Result<LedgerId, _> = serde_json::from_str("\"a b\"");
        assert!(bad.is_err());
    }

    #[test]
    fn signing_bytes_template() {
        let root = leaf_hash(b"l0");
        let bytes = checkpoint_signing_bytes(&id("main"), 3, 3, &root, None, 1_700_000_000_000);
        let expected = "eads/v1\nmain\n3\n3\nb41c19e571c01e62257677386dd8a91808b0450ca5b41d1e61faec81bd2fd3dc\n-\n1700000000000\n";
        assert_eq!(bytes, expected.as_bytes());

        let map = empty_root();
        let bytes = checkpoint_signing_bytes(&id("kv"), 0, 0, &map, Some(&map), 5);
        let expected = "eads/v1\nkv\n0\n0\ne3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855\ne3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855\n5\n";
        assert_eq!(bytes, expected.as_bytes());
    }

    #[test]
    fn genesis_checkpoint_verifies() {
        let kp = KeyPair::from_seed([1; 32]);
        let cp = make_checkpoint(&id("main"), 0, 0, empty_root(), None, 0, &kp);
        assert!(cp.verify(&kp.public()));
        let mut altered = cp.clone();
        altered.tree_size = 1;
        assert!(!altered.verify(&kp.public()));
    }

    #[test]
    fn json_shape() {
        let kp = KeyPair::from_seed([1; 32]);
        let cp = make_checkpoint(&id("main"), 0, 0, empty_root(), None, 7, &kp);
        let rec = HistoryRecord::genesis(cp);
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["prev_version"], serde_json::Value::Null);
        assert_eq!(v["consistency"], serde_json::Value::Null);
        assert_eq!(v["checkpoint"]["map_root"], serde_json::Value::Null);
        assert_eq!(v["checkpoint"]["ledger_id"], "main");
        assert_eq!(v["checkpoint"]["root"], empty_root().to_hex());
        let keys: Vec<&str> = v["checkpoint"]
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        assert_eq!(keys.len(), 7);

        let mut extra = v.clone();
        extra["entry"] = serde_json::json!("00");
        assert!(serde_json::from_value::<HistoryRecord>(extra).is_err());
    }

    #[test]
    fn empty_chain_is_vacuous() {
        let kp = KeyPair::from_seed([1; 32]);
        let r = verify_chain("main", &[], &kp.public());
        assert_eq!(r.records_checked, 0);
        assert_eq!(r.overall, Overall::Consistent);
    }

    #[test]
    fn fork_requires_same_ledger() {
        let kp = KeyPair::from_seed([1; 32]);
        let a = HistoryRecord::genesis(make_checkpoint(&id("a"), 0, 0, empty_root(), None, 0, &kp));
        let b = HistoryRecord::genesis(make_checkpoint(&id("b"), 0, 0, empty_root(), None, 0, &kp));
        assert!(matches!(
            detect_fork(core::slice::from_ref(&a), &[b], &kp.public()),
            Err(ForkError::LedgerMismatch(..))
        ));
        let same = core::slice::from_ref(&a);
        assert_eq!(detect_fork(same, same, &kp.public()), Ok(None));
    }

    #[test]
    fn verdict_names() {
        assert_eq!(
            serde_json::to_string(&LinkVerdict::ProofInvalid).unwrap(),
            "\"PROOF_INVALID\""
        );
        assert_eq!(alloc::format!("{}", LinkVerdict::VersionGap), "VERSION_GAP");
        assert_eq!(
            serde_json::to_string(&Overall::Forked).unwrap(),
            "\"FORKED\""
        );
    }
}
