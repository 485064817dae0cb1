//! Log-backed map: a sparse map whose every edit is first written to a
//! verifiable log.
//!
//! The log gives append-only history through consistency proofs, and the
//! map state at any log size can be recomputed by replaying the logged
//! operations onto an empty map.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::hash::{decode_lower_hex, Hash};
use crate::log::VerifiableLog;
use crate::smt::SparseMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EditKind {
    Put,
    Delete,
}

/// One map edit. Serialized as `{"kind":..,"key":hex,"value":hex}`, which is
/// also the exact byte string appended to the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawEditOp")]
pub struct EditOp {
    pub kind: EditKind,
    #[serde(serialize_with = "ser_hex")]
    pub key: Vec<u8>,
    #[serde(serialize_with = "ser_hex")]
    pub value: Vec<u8>,
}

fn ser_hex<S: serde::Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEditOp {
    kind: EditKind,
    key: String,
    value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOpError(&'static str);

impl fmt::Display for EditOpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

impl TryFrom<RawEditOp> for EditOp {
    type Error = EditOpError;

    fn try_from(raw: RawEditOp) -> Result<Self, Self::Error> {
        let key =
            decode_lower_hex(&raw.key).map_err(|_| EditOpError("key is not lowercase hex"))?;
        let value =
            decode_lower_hex(&raw.value).map_err(|_| EditOpError("value is not lowercase hex"))?;
        if raw.kind == EditKind::Delete && !value.is_empty() {
            return Err(EditOpError("DELETE carries a value"));
        }
        Ok(EditOp {
            kind: raw.kind,
            key,
            value,
        })
    }
}

impl EditOp {
    pub fn put(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        EditOp {
            kind: EditKind::Put,
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn delete(key: impl Into<Vec<u8>>) -> Self {
        EditOp {
            kind: EditKind::Delete,
            key: key.into(),
            value: Vec::new(),
        }
    }

    /// The bytes written to the log for this op.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("edit op serialization is infallible")
    }

    /// Inverse of [`canonical_bytes`](Self::canonical_bytes). Returns `None`
    /// for anything that is not exactly a canonical encoding.
    pub fn from_canonical(bytes: &[u8]) -> Option<Self> {
        let op: EditOp = serde_json::from_slice(bytes).ok()?;
        (op.canonical_bytes() == bytes).then_some(op)
    }

    pub fn apply_to(&self, map: &mut SparseMap) -> Hash {
        match self.kind {
            EditKind::Put => map.put(&self.key, &self.value),
            EditKind::Delete => map.delete(&self.key),
        }
    }
}

/// Log and map roots taken at the same version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedDigest {
    pub log_size: u64,
    pub log_root: Hash,
    pub map_root: Hash,
}

#[derive(Debug, Clone, Default)]
pub struct LogBackedMap {
    log: VerifiableLog,
    map: SparseMap,
}

impl LogBackedMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds from raw log entries. Entries that do not decode as edit
    /// ops stay in the log but leave the map untouched.
    pub fn from_log_entries<I, E>(entries: I) -> Self
    where
        I: IntoIterator<Item = E>,
        E: Into<Vec<u8>>,
    {
        let mut lbm = Self::new();
        for e in entries {
            lbm.append_raw(e.into());
        }
        lbm
    }

    /// Appends raw entry bytes, applying them to the map only if they are a
    /// canonical edit op.
    pub fn append_raw(&mut self, bytes: Vec<u8>) -> CombinedDigest {
        if let Some(op) = EditOp::from_canonical(&bytes) {
            op.apply_to(&mut self.map);
        }
        self.log.append(bytes);
        self.digest()
    }

    pub fn apply_edit(&mut self, op: &EditOp) -> CombinedDigest {
        self.log.append(op.canonical_bytes());
        op.apply_to(&mut self.map);
        self.digest()
    }

    pub fn digest(&self) -> CombinedDigest {
        CombinedDigest {
            log_size: self.log.len(),
            log_root: self.log.root(),
            map_root: self.map.root(),
        }
    }

    pub fn log(&self) -> &VerifiableLog {
        &self.log
    }

    pub fn map(&self) -> &SparseMap {
        &self.map
    }
}

/// Replays `ops` from an empty state and compares both roots with `claimed`.
///
/// This needs the plaintext ops, so it is an internal audit; external
/// auditors check the log's consistency proofs instead.
pub fn replay_verify(ops: &[EditOp], claimed: &CombinedDigest) -> bool {
    if ops.len() as u64 != claimed.log_size {
        return false;
    }
    let mut lbm = LogBackedMap::new();
    for op in ops {
        lbm.apply_edit(op);
    }
    lbm.digest() == *claimed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::{empty_root, leaf_hash};
    use crate::smt::default_root;

    #[test]
    fn canonical_encoding_is_fixed() {
        let op = EditOp::put(*b"k", *b"v");
        assert_eq!(
            op.canonical_bytes(),
            br#"{"kind":"PUT","key":"6b","value":"76"}"#.to_vec()
        );
        assert_eq!(
            EditOp::delete(*b"k").canonical_bytes(),
            br#"{"kind":"DELETE","key":"6b","value":""}"#.to_vec()
        );
        assert_eq!(EditOp::from_canonical(&op.canonical_bytes()), Some(op));
    }

    #[test]
    fn non_canonical_encodings_rejected() {
        assert!(EditOp::from_canonical(br#"{"key":"6b","kind":"PUT","value":"76"}"#).is_none());
        assert!(EditOp::from_canonical(br#"{"kind":"PUT","key":"6B","value":"76"}"#).is_none());
        assert!(EditOp::from_canonical(br#"{"kind":"DELETE","key":"6b","value":"76"}"#).is_none());
        assert!(EditOp::from_canonical(br#"{"kind":"PUT", "key":"6b","value":"76"}"#).is_none());
        assert!(EditOp::from_canonical(b"garbage").is_none());
    }

    #[test]
    fn first_put_couples_both_roots() {
        let op = EditOp::put(*b"k", *b"v");
        let mut lbm = LogBackedMap::new();
        let d = lbm.apply_edit(&op);
        assert_eq!(d.log_size, 1);
        assert_eq!(d.log_root, leaf_hash(&op.canonical_bytes()));
        let mut single = SparseMap::new();
        assert_eq!(d.map_root, single.put(b"k", b"v"));
    }

    #[test]
    fn delete_absent_still_logged() {
        let mut lbm = LogBackedMap::new();
        let before = lbm.apply_edit(&EditOp::put(*b"a", *b"1"));
        let after = lbm.apply_edit(&EditOp::delete(*b"zzz"));
        assert_eq!(after.log_size, 2);
        assert_eq!(after.map_root, before.map_root);
        assert_ne!(after.log_root, before.log_root);
    }

    #[test]
    fn put_delete_round_trip() {
        let mut lbm = LogBackedMap::new();
        lbm.apply_edit(&EditOp::put(*b"k", *b"v"));
        let d = lbm.apply_edit(&EditOp::delete(*b"k"));
        assert_eq!(d.log_size, 2);
        assert_eq!(d.map_root, default_root(256).unwrap());
    }

    #[test]
    fn empty_replay() {
        let d = CombinedDigest {
            log_size: 0,
            log_root: empty_root(),
            map_root: default_root(256).unwrap(),
        };
        assert!(replay_verify(&[], &d));
    }

    #[test]
    fn reordering_breaks_log_root_only() {
        let a = EditOp::put(*b"a", *b"1");
        let b = EditOp::put(*b"b", *b"2");
        let mut lbm = LogBackedMap::new();
        lbm.apply_edit(&a);
        let d = lbm.apply_edit(&b);
        assert!(replay_verify(&[a.clone(), b.clone()], &d));
        assert!(!replay_verify(&[b.clone(), a.clone()], &d));

        let mut swapped = LogBackedMap::new();
        swapped.apply_edit(&b);
        let s = swapped.apply_edit(&a);
        assert_eq!(s.map_root, d.map_root);
        assert_ne!(s.log_root, d.log_root);
    }

    #[test]
    fn rebuild_skips_undecodable_entries() {
        let ops = [EditOp::put(*b"a", *b"1"), EditOp::put(*b"b", *b"2")];
        let mut entries: Vec<Vec<u8>> = ops.iter().map(EditOp::canonical_bytes).collect();
        let honest = LogBackedMap::from_log_entries(entries.clone());
        let mut direct = LogBackedMap::new();
        for op in &ops {
            direct.apply_edit(op);
        }
        assert_eq!(honest.digest(), direct.digest());

        entries[0] = b"not an op".to_vec();
        let tampered = LogBackedMap::from_log_entries(entries);
        assert_eq!(tampered.log().len(), 2);
        assert_eq!(tampered.map().len(), 1);
    }
}
