#![allow(dead_code)]

use std::path::Path;

use eads::clock::SteppingClock;
use eads::server::{LedgerKind, Server, ServerOptions};
use eads_core::{empty_root, make_checkpoint, HistoryRecord, KeyPair, LedgerId, VerifiableLog};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const T0: u64 = 1_700_000_000_000;

pub fn keypair() -> KeyPair {
    KeyPair::from_seed([42; 32])
}

pub fn options(dir: &Path, kind: LedgerKind) -> ServerOptions {
    let mut o = ServerOptions::new(dir);
    o.sync = false;
    o.ledgers = vec![(LedgerId::new("main").unwrap(), kind)];
    o
}

pub fn open(dir: &Path, kind: LedgerKind) -> Server {
    Server::open(options(dir, kind), keypair(), SteppingClock::new(T0, 1000)).unwrap()
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn payload(rng: &mut StdRng) -> Vec<u8> {
    let mut v = vec![0u8; rng.gen_range(16..=48)];
    rng.fill(&mut v[..]);
    v
}

/// Honest chain of `n` records (genesis plus n-1 one-entry versions),
/// built without the server.
pub fn chain(ledger: &str, n: u64, kp: &KeyPair) -> Vec<HistoryRecord> {
    let id = LedgerId::new(ledger).unwrap();
    let mut log = VerifiableLog::new();
    let mut out = vec![HistoryRecord::genesis(make_checkpoint(
        &id,
        0,
        0,
        empty_root(),
        None,
        T0,
        kp,
    ))];
    for v in 1..n {
        let (size, root) = log.append(format!("record {v} payload padding").into_bytes());
        out.push(HistoryRecord {
            checkpoint: make_checkpoint(&id, v, size, root, None, T0 + v, kp),
            prev_version: Some(v - 1),
            consistency: Some(log.consistency_proof(size - 1, size).unwrap()),
        });
    }
    out
}
