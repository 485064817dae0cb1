//! Append-only Merkle log with inclusion and consistency proofs.
//!
//! The tree shape follows the certificate-transparency construction: a tree
//! over `n > 1` leaves splits at `k`, the largest power of two strictly
//! below `n`, into a complete left subtree of `k` leaves and a right subtree
//! of the remaining `n - k`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{empty_root, leaf_hash, node_hash, Hash};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("size {size} is beyond the log size {log_size}")]
    SizeOutOfRange { size: u64, log_size: u64 },
    #[error("leaf index {index} is not below tree size {tree_size}")]
    IndexOutOfRange { index: u64, tree_size: u64 },
    #[error("old size {old_size} exceeds new size {new_size}")]
    SizeOrder { old_size: u64, new_size: u64 },
}

/// Audit path for one leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionProof {
    pub leaf_index: u64,
    pub tree_size: u64,
    /// Siblings from the leaf level upward.
    pub path: Vec<Hash>,
}

/// Proof that the log at `old_size` is a prefix of the log at `new_size`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyProof {
    pub old_size: u64,
    pub new_size: u64,
    pub nodes: Vec<Hash>,
}

/// An append-only list of entries and the Merkle tree over them.
#[derive(Debug, Clone, Default)]
pub struct VerifiableLog {
    entries: Vec<Vec<u8>>,
    // levels[k][j] is the root of the complete subtree covering leaves
    // [j * 2^k, (j + 1) * 2^k).
    levels: Vec<Vec<Hash>>,
}

impl VerifiableLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I, E>(entries: I) -> Self
    where
        I: IntoIterator<Item = E>,
        E: Into<Vec<u8>>,
    {
        let mut log = Self::new();
        for e in entries {
            log.append(e);
        }
        log
    }

    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: u64) -> Option<&[u8]> {
        self.entries
            .get(usize::try_from(index).ok()?)
            .map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &[u8]> {
        self.entries.iter().map(Vec::as_slice)
    }

    /// Appends one entry and returns the new size and root.
    pub fn append(&mut self, entry: impl Into<Vec<u8>>) -> (u64, Hash) {
        let entry = entry.into();
        let leaf = leaf_hash(&entry);
        self.entries.push(entry);
        self.push_node(0, leaf);
        let size = self.len();
        (size, self.subtree_root(0, size))
    }

    fn push_node(&mut self, level: usize, hash: Hash) {
        if self.levels.len() == level {
            self.levels.push(Vec::new());
        }
        self.levels[level].push(hash);
        let row = &self.levels[level];
        if row.len().is_multiple_of(2) {
            let parent = node_hash(&row[row.len() - 2], &row[row.len() - 1]);
            self.push_node(level + 1, parent);
        }
    }

    pub fn root(&self) -> Hash {
        self.subtree_root(0, self.len())
    }

    /// Merkle tree hash of the first `size` entries.
    pub fn root_at(&self, size: u64) -> Result<Hash, LogError> {
        self.check_size(size)?;
        Ok(self.subtree_root(0, size))
    }

    fn check_size(&self, size: u64) -> Result<(), LogError> {
        if size > self.len() {
            return Err(LogError::SizeOutOfRange {
                size,
                log_size: self.len(),
            });
        }
        Ok(())
    }

    // Callers guarantee end <= len.
    fn subtree_root(&self, start: u64, end: u64) -> Hash {
        let n = end - start;
        if n == 0 {
            return empty_root();
        }
        if n.is_power_of_two() && start.is_multiple_of(n) {
            let level = n.trailing_zeros() as usize;
            return self.levels[level][(start >> level) as usize];
        }
        let k = split_point(n);
        node_hash(
            &self.subtree_root(start, start + k),
            &self.subtree_root(start + k, end),
        )
    }

    pub fn inclusion_proof(
        &self,
        leaf_index: u64,
        tree_size: u64,
    ) -> Result<InclusionProof, LogError> {
        self.check_size(tree_size)?;
        if leaf_index >= tree_size {
            return Err(LogError::IndexOutOfRange {
                index: leaf_index,
                tree_size,
            });
        }
        let mut path = Vec::new();
        self.audit_path(leaf_index, 0, tree_size, &mut path);
        Ok(InclusionProof {
            leaf_index,
            tree_size,
            path,
        })
    }

    // Leaf `m` within the subtree [start, end); siblings pushed deepest first.
    fn audit_path(&self, m: u64, start: u64, end: u64, out: &mut Vec<Hash>) {
        let n = end - start;
        if n <= 1 {
            return;
        }
        let k = split_point(n);
        if m < k {
            self.audit_path(m, start, start + k, out);
            out.push(self.subtree_root(start + k, end));
        } else {
            self.audit_path(m - k, start + k, end, out);
            out.push(self.subtree_root(start, start + k));
        }
    }

    pub fn consistency_proof(
        &self,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, LogError> {
        if old_size > new_size {
            return Err(LogError::SizeOrder { old_size, new_size });
        }
        self.check_size(new_size)?;
        let mut nodes = Vec::new();
        if old_size > 0 && old_size < new_size {
            self.subproof(old_size, 0, new_size, true, &mut nodes);
        }
        Ok(ConsistencyProof {
            old_size,
            new_size,
            nodes,
        })
    }

    // `complete` is true while [start, start + m) is still the whole old tree
    // seen from this node, in which case its root is known to the verifier.
    fn subproof(&self, m: u64, start: u64, end: u64, complete: bool, out: &mut Vec<Hash>) {
        let n = end - start;
        if m == n {
            if !complete {
                out.push(self.subtree_root(start, end));
            }
            return;
        }
        let k = split_point(n);
        if m <= k {
            self.subproof(m, start, start + k, complete, out);
            out.push(self.subtree_root(start + k, end));
        } else {
            self.subproof(m - k, start + k, end, false, out);
            out.push(self.subtree_root(start, start + k));
        }
    }
}

/// Largest power of two strictly below `n` (requires `n > 1`).
fn split_point(n: u64) -> u64 {
    debug_assert!(n > 1);
    1 << (63 - (n - 1).leading_zeros())
}

/// Checks an inclusion proof without access to the log.
pub fn verify_inclusion(
    leaf: &Hash,
    leaf_index: u64,
    tree_size: u64,
    proof: &InclusionProof,
    root: &Hash,
) -> bool {
    if proof.leaf_index != leaf_index || proof.tree_size != tree_size || leaf_index >= tree_size {
        return false;
    }
    let mut index = leaf_index;
    let mut last = tree_size - 1;
    let mut acc = *leaf;
    for sibling in &proof.path {
        if last == 0 {
            return false;
        }
        if index & 1 == 1 || index == last {
            acc = node_hash(sibling, &acc);
            // Skip levels where this node is a lone right edge with no sibling.
            while index & 1 == 0 && index != 0 {
                index >>= 1;
                last >>= 1;
            }
        } else {
            acc = node_hash(&acc, sibling);
        }
        index >>= 1;
        last >>= 1;
    }
    last == 0 && acc == *root
}

/// Checks that `new_root` describes an append-only extension of `old_root`.
///
/// Equal sizes require equal roots and an empty proof. An empty old log is a
/// prefix of every log, so `old_size == 0` requires only an empty proof and
/// the empty-tree root.
pub fn verify_consistency(
    old_size: u64,
    old_root: &Hash,
    new_size: u64,
    new_root: &Hash,
    proof: &ConsistencyProof,
) -> bool {
    if proof.old_size != old_size || proof.new_size != new_size || old_size > new_size {
        return false;
    }
    if old_size == new_size {
        return proof.nodes.is_empty() && old_root == new_root;
    }
    if old_size == 0 {
        return proof.nodes.is_empty() && *old_root == empty_root();
    }
    if proof.nodes.is_empty() {
        return false;
    }

    // When the old tree is a complete subtree its root is the implicit first node.
    let mut nodes: Vec<Hash> = if old_size.is_power_of_two() {
        let mut v = vec![*old_root];
        v.extend_from_slice(&proof.nodes);
        v
    } else {
        proof.nodes.clone()
    };

    let mut fn_ = old_size - 1;
    let mut sn = new_size - 1;
    while fn_ & 1 == 1 {
        fn_ >>= 1;
        sn >>= 1;
    }
    let first = nodes.remove(0);
    let mut old_acc = first;
    let mut new_acc = first;
    for c in &nodes {
        if sn == 0 {
            return false;
        }
        if fn_ & 1 == 1 || fn_ == sn {
            old_acc = node_hash(c, &old_acc);
            new_acc = node_hash(c, &new_acc);
            while fn_ & 1 == 0 && fn_ != 0 {
                fn_ >>= 1;
                sn >>= 1;
            }
        } else {
            new_acc = node_hash(&new_acc, c);
        }
        fn_ >>= 1;
        sn >>= 1;
    }
    sn == 0 && old_acc == *old_root && new_acc == *new_root
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn log_of(n: usize) -> VerifiableLog {
        VerifiableLog::from_entries((0..n).map(|i| format!("l{i}").into_bytes()))
    }

    #[test]
    fn split_point_values() {
        assert_eq!(split_point(2), 1);
        assert_eq!(split_point(3), 2);
        assert_eq!(split_point(4), 2);
        assert_eq!(split_point(5), 4);
        assert_eq!(split_point(8), 4);
        assert_eq!(split_point(9), 8);
    }

    #[test]
    fn first_two_appends() {
        let mut log = VerifiableLog::new();
        assert_eq!(log.append(*b"l0"), (1, leaf_hash(b"l0")));
        let (size, root) = log.append(*b"l1");
        assert_eq!(size, 2);
        assert_eq!(root, node_hash(&leaf_hash(b"l0"), &leaf_hash(b"l1")));
    }

    #[test]
    fn empty_and_single_roots() {
        let log = log_of(3);
        assert_eq!(log.root_at(0).unwrap(), empty_root());
        assert_eq!(log.root_at(1).unwrap(), leaf_hash(b"l0"));
        assert_eq!(
            log.root_at(4),
            Err(LogError::SizeOutOfRange {
                size: 4,
                log_size: 3
            })
        );
    }

    #[test]
    fn small_inclusion_proofs() {
        let log = log_of(2);
        assert!(log.inclusion_proof(0, 1).unwrap().path.is_empty());
        assert_eq!(
            log.inclusion_proof(0, 2).unwrap().path,
            vec![leaf_hash(b"l1")]
        );
        assert!(verify_inclusion(
            &leaf_hash(b"l0"),
            0,
            1,
            &log.inclusion_proof(0, 1).unwrap(),
            &leaf_hash(b"l0")
        ));
        assert!(matches!(
            log.inclusion_proof(2, 2),
            Err(LogError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn wrong_root_rejected() {
        let log = log_of(5);
        let p = log.inclusion_proof(3, 5).unwrap();
        assert!(verify_inclusion(&leaf_hash(b"l3"), 3, 5, &p, &log.root()));
        assert!(!verify_inclusion(
            &leaf_hash(b"l3"),
            3,
            5,
            &p,
            &log.root_at(4).unwrap()
        ));
        assert!(!verify_inclusion(&leaf_hash(b"l3"), 2, 5, &p, &log.root()));
    }

    #[test]
    fn trivial_consistency_cases() {
        let log = log_of(4);
        let same = log.consistency_proof(3, 3).unwrap();
        assert!(same.nodes.is_empty());
        let r = log.root_at(3).unwrap();
        assert!(verify_consistency(3, &r, 3, &r, &same));
        assert!(!verify_consistency(3, &r, 3, &log.root(), &same));

        let p = log.consistency_proof(1, 2).unwrap();
        assert_eq!(p.nodes, vec![leaf_hash(b"l1")]);
        assert!(verify_consistency(
            1,
            &leaf_hash(b"l0"),
            2,
            &log.root_at(2).unwrap(),
            &p
        ));

        let from_empty = log.consistency_proof(0, 4).unwrap();
        assert!(from_empty.nodes.is_empty());
        assert!(verify_consistency(
            0,
            &empty_root(),
            4,
            &log.root(),
            &from_empty
        ));

        assert_eq!(
            log.consistency_proof(3, 2),
            Err(LogError::SizeOrder {
                old_size: 3,
                new_size: 2
            })
        );
        assert!(log.consistency_proof(2, 5).is_err());
    }

    #[test]
    fn consistency_rejects_rewritten_prefix() {
        let honest = log_of(7);
        let old_root = honest.root_at(3).unwrap();
        let proof = honest.consistency_proof(3, 7).unwrap();
        assert!(verify_consistency(3, &old_root, 7, &honest.root(), &proof));

        let mut entries: Vec<Vec<u8>> = honest.entries().map(|e| e.to_vec()).collect();
        entries[1] = b"rewritten".to_vec();
        let forged = VerifiableLog::from_entries(entries);
        let forged_proof = forged.consistency_proof(3, 7).unwrap();
        assert!(!verify_consistency(3, &old_root, 7, &forged.root(), &proof));
        assert!(!verify_consistency(
            3,
            &old_root,
            7,
            &forged.root(),
            &forged_proof
        ));
    }

    #[test]
    fn mislabelled_proof_sizes_rejected() {
        let log = log_of(6);
        let mut p = log.consistency_proof(3, 6).unwrap();
        p.old_size = 2;
        assert!(!verify_consistency(
            3,
            &log.root_at(3).unwrap(),
            6,
            &log.root(),
            &p
        ));
    }
}
