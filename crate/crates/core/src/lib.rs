//! Externally auditable data structures.
//!
//! An untrusted server keeps a verifiable log (or a log-backed sparse map)
//! and publishes signed checkpoints linked by consistency proofs. Anyone
//! holding the signer's public key can then check the published history
//! for append-only growth and detect forks, without seeing any entry data.
//!
//! This crate holds the data structures, proofs and verification logic. It
//! is `no_std` and needs only `alloc`; storage, networking and the CLI live
//! in the `eads` crate.

#![no_std]

extern crate alloc;

pub mod hash;
pub mod history;
pub mod lbm;
pub mod log;
pub mod sig;
pub mod smt;

pub use hash::{empty_root, leaf_hash, node_hash, sha256, Hash};
pub use history::{
    detect_fork, make_checkpoint, verify_chain, AuditReport, ChainVerifier, ForkError,
    ForkEvidence, HistoryRecord, LedgerId, LinkResult, LinkVerdict, Overall, SignedCheckpoint,
};
pub use lbm::{replay_verify, CombinedDigest, EditKind, EditOp, LogBackedMap};
pub use log::{
    verify_consistency, verify_inclusion, ConsistencyProof, InclusionProof, LogError, VerifiableLog,
};
pub use sig::{sign, verify_signature, KeyPair, PublicKey, Signature, Signer, Verifier};
pub use smt::{default_root, verify_map_proof, MapProof, SparseMap};
