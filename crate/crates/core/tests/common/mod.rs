//! Reference implementations used as test oracles. They are written
//! directly against SHA-256 and share no code with the crate.

#![allow(dead_code)]

use rand::{Rng, RngCore, SeedableRng};
use sha2::{Digest, Sha256};

pub type Bytes32 = [u8; 32];

pub fn sha(parts: &[&[u8]]) -> Bytes32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn leaf(data: &[u8]) -> Bytes32 {
    sha(&[&[0u8], data])
}

pub fn node(a: &Bytes32, b: &Bytes32) -> Bytes32 {
    sha(&[&[1u8], a, b])
}

/// Recursive Merkle tree hash, split at the largest power of two below n.
pub fn mth(entries: &[Vec<u8>]) -> Bytes32 {
    match entries.len() {
        0 => sha(&[]),
        1 => leaf(&entries[0]),
        n => {
            let mut k = 1;
            while k * 2 < n {
                k *= 2;
            }
            node(&mth(&entries[..k]), &mth(&entries[k..]))
        }
    }
}

/// Sparse tree root built naively from the full set of key-hash paths.
pub fn smt_root(bindings: &[(Vec<u8>, Vec<u8>)]) -> Bytes32 {
    let mut leaves: Vec<(Bytes32, Bytes32)> = bindings
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (sha(&[k]), leaf(v)))
        .collect();
    leaves.sort();
    leaves.dedup_by(|a, b| a.0 == b.0);
    smt_subtree(&leaves, 0)
}

fn bit(h: &Bytes32, i: usize) -> bool {
    h[i / 8] & (0x80 >> (i % 8)) != 0
}

fn smt_default(height: usize) -> Bytes32 {
    let mut d = leaf(&[]);
    for _ in 0..height {
        d = node(&d, &d);
    }
    d
}

fn smt_subtree(leaves: &[(Bytes32, Bytes32)], depth: usize) -> Bytes32 {
    if leaves.is_empty() {
        return smt_default(256 - depth);
    }
    if depth == 256 {
        return leaves[0].1;
    }
    let (left, right): (Vec<_>, Vec<_>) = leaves.iter().partition(|(k, _)| !bit(k, depth));
    node(
        &smt_subtree(&left, depth + 1),
        &smt_subtree(&right, depth + 1),
    )
}

pub fn rng(seed: u64) -> rand::rngs::StdRng {
    rand::rngs::StdRng::seed_from_u64(seed)
}

pub fn random_bytes(rng: &mut impl RngCore, min: usize, max: usize) -> Vec<u8> {
    let len = rng.gen_range(min..=max);
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

pub fn random_entries(seed: u64, n: usize) -> Vec<Vec<u8>> {
    let mut r = rng(seed);
    (0..n).map(|_| random_bytes(&mut r, 16, 48)).collect()
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// True if the payload appears raw or hex-encoded.
pub fn leaks(haystack: &[u8], payload: &[u8]) -> bool {
    contains(haystack, payload) || contains(haystack, hex::encode(payload).as_bytes())
}
