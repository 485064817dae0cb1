//! Sparse Merkle tree over a 256-bit keyspace.
//!
//! A user key is placed at the leaf addressed by `SHA-256(key)`, read most
//! significant bit first from the root (0 = left, 1 = right). A bound leaf
//! holds `leaf_hash(value)`; every unbound leaf holds `leaf_hash("")`.
//! Only subtrees that differ from the all-default subtree are stored.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{leaf_hash, node_hash, sha256, Hash};

pub const TREE_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmtError {
    #[error("height {0} is outside 0..=256")]
    HeightOutOfRange(usize),
}

/// Root of an empty subtree of the given height; height 0 is a single leaf.
pub fn default_root(height: usize) -> Result<Hash, SmtError> {
    if height > TREE_DEPTH {
        return Err(SmtError::HeightOutOfRange(height));
    }
    Ok(DefaultHashes::new().at(height))
}

/// The 257 empty-subtree roots, indexed by height.
#[derive(Clone)]
pub struct DefaultHashes([Hash; TREE_DEPTH + 1]);

impl DefaultHashes {
    pub fn new() -> Self {
        let mut table = [Hash::default(); TREE_DEPTH + 1];
        table[0] = leaf_hash(&[]);
        for h in 1..=TREE_DEPTH {
            table[h] = node_hash(&table[h - 1], &table[h - 1]);
        }
        DefaultHashes(table)
    }

    pub fn at(&self, height: usize) -> Hash {
        self.0[height]
    }
}

impl Default for DefaultHashes {
    fn default() -> Self {
        Self::new()
    }
}

impl core::fmt::Debug for DefaultHashes {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_tuple("DefaultHashes")
            .field(&self.0[TREE_DEPTH])
            .finish()
    }
}

/// Inclusion or non-inclusion proof for one key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapProof {
    pub key_hash: Hash,
    pub present: bool,
    pub value_leaf: Hash,
    /// 256 siblings, the child of the root first and the leaf's sibling last.
    pub siblings: Vec<Hash>,
}

/// Key position in the tree.
pub fn key_hash(key: &[u8]) -> Hash {
    sha256(key)
}

// The first `depth` bits of `kh`, the rest zeroed.
fn prefix(kh: &Hash, depth: usize) -> Hash {
    let mut out = [0u8; 32];
    let full = depth / 8;
    out[..full].copy_from_slice(&kh.0[..full]);
    if !depth.is_multiple_of(8) {
        let mask = 0xffu8 << (8 - depth % 8);
        out[full] = kh.0[full] & mask;
    }
    Hash(out)
}

fn with_bit(mut h: Hash, i: usize, set: bool) -> Hash {
    let mask = 1u8 << (7 - i % 8);
    if set {
        h.0[i / 8] |= mask;
    } else {
        h.0[i / 8] &= !mask;
    }
    h
}

/// Key-value map authenticated by a sparse Merkle root.
///
/// An empty value is indistinguishable from an absent binding (both hash to
/// the default leaf), so storing an empty value removes the key.
#[derive(Debug, Clone)]
pub struct SparseMap {
    bindings: BTreeMap<Hash, Vec<u8>>,
    // (depth, prefix) -> hash, only for nodes that differ from the default.
    nodes: BTreeMap<(u16, Hash), Hash>,
    defaults: DefaultHashes,
}

impl Default for SparseMap {
    fn default() -> Self {
        Self::new()
    }
}

impl SparseMap {
    pub fn new() -> Self {
        SparseMap {
            bindings: BTreeMap::new(),
            nodes: BTreeMap::new(),
            defaults: DefaultHashes::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn root(&self) -> Hash {
        self.node(0, &Hash::default())
    }

    fn node(&self, depth: usize, prefix: &Hash) -> Hash {
        self.nodes
            .get(&(depth as u16, *prefix))
            .copied()
            .unwrap_or_else(|| self.defaults.at(TREE_DEPTH - depth))
    }

    fn set_node(&mut self, depth: usize, prefix: Hash, hash: Hash) {
        if hash == self.defaults.at(TREE_DEPTH - depth) {
            self.nodes.remove(&(depth as u16, prefix));
        } else {
            self.nodes.insert((depth as u16, prefix), hash);
        }
    }

    fn rehash_path(&mut self, kh: &Hash, leaf: Hash) -> Hash {
        self.set_node(TREE_DEPTH, *kh, leaf);
        for depth in (0..TREE_DEPTH).rev() {
            let parent = prefix(kh, depth);
            let left = self.node(depth + 1, &parent);
            let right = self.node(depth + 1, &with_bit(parent, depth, true));
            self.set_node(depth, parent, node_hash(&left, &right));
        }
        self.root()
    }

    pub fn put(&mut self, key: &[u8], value: &[u8]) -> Hash {
        if value.is_empty() {
            return self.delete(key);
        }
        let kh = key_hash(key);
        self.bindings.insert(kh, value.to_vec());
        self.rehash_path(&kh, leaf_hash(value))
    }

    /// Removing an absent key leaves the root unchanged.
    pub fn delete(&mut self, key: &[u8]) -> Hash {
        let kh = key_hash(key);
        if self.bindings.remove(&kh).is_none() {
            return self.root();
        }
        let empty = self.defaults.at(0);
        self.rehash_path(&kh, empty)
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.bindings.get(&key_hash(key)).map(Vec::as_slice)
    }

    pub fn get_with_proof(&self, key: &[u8]) -> (Option<&[u8]>, MapProof) {
        let kh = key_hash(key);
        let value = self.bindings.get(&kh).map(Vec::as_slice);
        let siblings = (0..TREE_DEPTH)
            .map(|depth| {
                let sib = prefix(&kh, depth + 1);
                let flipped = with_bit(sib, depth, !kh.bit(depth));
                self.node(depth + 1, &flipped)
            })
            .collect();
        let proof = MapProof {
            key_hash: kh,
            present: value.is_some(),
            value_leaf: value.map_or(self.defaults.at(0), leaf_hash),
            siblings,
        };
        (value, proof)
    }

    /// Every binding keyed by key hash. Not a proof: the caller has to trust
    /// the server for completeness.
    pub fn dump(&self) -> impl Iterator<Item = (&Hash, &[u8])> {
        self.bindings.iter().map(|(k, v)| (k, v.as_slice()))
    }
}

/// Checks a map proof for `key` claiming `claimed_value` (`None` = absent).
pub fn verify_map_proof(
    root: &Hash,
    key: &[u8],
    claimed_value: Option<&[u8]>,
    proof: &MapProof,
) -> bool {
    let claimed_value = claimed_value.filter(|v| !v.is_empty());
    if proof.siblings.len() != TREE_DEPTH || proof.key_hash != key_hash(key) {
        return false;
    }
    if proof.present != claimed_value.is_some() {
        return false;
    }
    let expected_leaf = leaf_hash(claimed_value.unwrap_or(&[]));
    if proof.value_leaf != expected_leaf {
        return false;
    }
    let mut acc = expected_leaf;
    for depth in (0..TREE_DEPTH).rev() {
        let sib = &proof.siblings[depth];
        acc = if proof.key_hash.bit(depth) {
            node_hash(sib, &acc)
        } else {
            node_hash(&acc, sib)
        };
    }
    acc == *root
}
