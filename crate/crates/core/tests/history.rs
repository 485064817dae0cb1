mod common;

use common::{leaks, random_entries};
use eads_core::history::{
    detect_fork, make_checkpoint, verify_chain, HistoryRecord, LedgerId, LinkVerdict, Overall,
};
use eads_core::log::{verify_consistency, VerifiableLog};
use eads_core::sig::KeyPair;
use eads_core::{empty_root, SignedCheckpoint};

fn ledger() -> LedgerId {
    LedgerId::new("main").unwrap()
}

fn key() -> KeyPair {
    KeyPair::from_seed([42; 32])
}

/// One checkpoint per append, genesis included; returns records and the log.
fn honest_chain(entries: &[Vec<u8>]) -> (Vec<HistoryRecord>, VerifiableLog) {
    let kp = key();
    let mut log = VerifiableLog::new();
    let mut records = vec![HistoryRecord::genesis(make_checkpoint(
        &ledger(),
        0,
        0,
        empty_root(),
        None,
        1_000,
        &kp,
    ))];
    for e in entries {
        let prev = records.last().unwrap().checkpoint.clone();
        let (size, root) = log.append(e.clone());
        let cp = make_checkpoint(&ledger(), size, size, root, None, 1_000 + size, &kp);
        records.push(HistoryRecord {
            checkpoint: cp,
            prev_version: Some(prev.version),
            consistency: Some(log.consistency_proof(prev.tree_size, size).unwrap()),
        });
    }
    (records, log)
}

#[test]
fn single_genesis_is_consistent() {
    let (records, _) = honest_chain(&[]);
    let report = verify_chain("main", &records, &key().public());
    assert_eq!(report.records_checked, 1);
    assert_eq!(report.first_record, Some(LinkVerdict::Ok));
    assert_eq!(report.overall, Overall::Consistent);
}

#[test]
fn honest_chain_of_ten_is_consistent() {
    let (records, _) = honest_chain(&random_entries(1, 10));
    let report = verify_chain("main", &records, &key().public());
    assert_eq!(report.records_checked, 11);
    assert_eq!(report.link_results.len(), 10);
    assert!(report
        .link_results
        .iter()
        .all(|l| l.verdict == LinkVerdict::Ok));
    assert_eq!(report.overall, Overall::Consistent);
}

#[test]
fn wrong_key_gives_bad_signature() {
    let (records, _) = honest_chain(&random_entries(1, 3));
    let other = KeyPair::from_seed([1; 32]);
    let report = verify_chain("main", &records, &other.public());
    assert_eq!(report.first_record, Some(LinkVerdict::BadSignature));
    assert!(report
        .link_results
        .iter()
        .all(|l| l.verdict == LinkVerdict::BadSignature));
    assert_eq!(report.overall, Overall::Inconsistent);
}

#[test]
fn rewritten_entry_breaks_the_following_link() {
    let entries = random_entries(2, 10);
    let (mut records, _) = honest_chain(&entries[..3]);
    // From version 4 on, the server's log has entry 1 rewritten.
    let mut forged_entries = entries.clone();
    forged_entries[1] = b"rewritten entry, sixteen+ bytes".to_vec();
    let forged = VerifiableLog::from_entries(forged_entries[..3].to_vec());
    let mut log = forged;
    let kp = key();
    for e in &entries[3..] {
        let prev = records.last().unwrap().checkpoint.clone();
        let (size, root) = log.append(e.clone());
        records.push(HistoryRecord {
            checkpoint: make_checkpoint(&ledger(), size, size, root, None, size, &kp),
            prev_version: Some(prev.version),
            consistency: Some(log.consistency_proof(prev.tree_size, size).unwrap()),
        });
    }
    let report = verify_chain("main", &records, &kp.public());
    assert_eq!(report.overall, Overall::Inconsistent);
    let bad: Vec<_> = report.bad_links().collect();
    assert_eq!(bad.len(), 1);
    assert_eq!((bad[0].from_version, bad[0].to_version), (Some(3), Some(4)));
    assert_eq!(bad[0].verdict, LinkVerdict::ProofInvalid);
}

#[test]
fn size_regression_and_version_gap() {
    let (records, _) = honest_chain(&random_entries(3, 6));
    let kp = key();

    let mut shrunk = records[..5].to_vec();
    let log = VerifiableLog::from_entries(random_entries(3, 2));
    shrunk.push(HistoryRecord {
        checkpoint: make_checkpoint(&ledger(), 5, 2, log.root(), None, 9, &kp),
        prev_version: Some(4),
        consistency: Some(log.consistency_proof(2, 2).unwrap()),
    });
    let report = verify_chain("main", &shrunk, &kp.public());
    assert_eq!(
        report.first_bad_link().unwrap().verdict,
        LinkVerdict::SizeRegression
    );

    let mut gapped = records.clone();
    gapped.remove(3);
    let report = verify_chain("main", &gapped, &kp.public());
    assert_eq!(
        report.first_bad_link().unwrap().verdict,
        LinkVerdict::VersionGap
    );

    let mut missing = records.clone();
    missing[2].consistency = None;
    let report = verify_chain("main", &missing, &kp.public());
    assert_eq!(
        report.first_bad_link().unwrap().verdict,
        LinkVerdict::ProofInvalid
    );
}

#[test]
fn consistent_chain_implies_every_pair_is_consistent() {
    let entries = random_entries(4, 9);
    let (records, log) = honest_chain(&entries);
    assert_eq!(
        verify_chain("main", &records, &key().public()).overall,
        Overall::Consistent
    );
    let cps: Vec<&SignedCheckpoint> = records.iter().map(|r| &r.checkpoint).collect();
    for i in 0..cps.len() {
        for j in i..cps.len() {
            let p = log
                .consistency_proof(cps[i].tree_size, cps[j].tree_size)
                .unwrap();
            assert!(verify_consistency(
                cps[i].tree_size,
                &cps[i].root,
                cps[j].tree_size,
                &cps[j].root,
                &p
            ));
        }
    }
}

#[test]
fn records_hold_no_entry_bytes() {
    let entries = random_entries(5, 40);
    let (records, _) = honest_chain(&entries);
    let blob: Vec<u8> = records
        .iter()
        .flat_map(|r| serde_json::to_vec(r).unwrap())
        .collect();
    for e in &entries {
        assert!(!leaks(&blob, e));
    }
}

#[test]
fn any_single_byte_mutation_is_caught() {
    let (records, _) = honest_chain(&random_entries(6, 5));
    let lines: Vec<Vec<u8>> = records
        .iter()
        .map(|r| serde_json::to_vec(r).unwrap())
        .collect();
    let pk = key().public();
    let mut mutations = 0;
    for (li, line) in lines.iter().enumerate() {
        for pos in 0..line.len() {
            for delta in [0x01u8, 0x20, 0x80] {
                let mut mutated = line.clone();
                mutated[pos] ^= delta;
                let decoded: Vec<Option<HistoryRecord>> = lines
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let bytes = if i == li { &mutated } else { l };
                        serde_json::from_slice(bytes).ok()
                    })
                    .collect();
                let mut chain = eads_core::ChainVerifier::new("main", &pk);
                for d in &decoded {
                    match d {
                        Some(r) => chain.push(r),
                        None => chain.push_undecodable(),
                    }
                }
                let report = chain.finish();
                assert_ne!(
                    report.overall,
                    Overall::Consistent,
                    "line {li} byte {pos} ^ {delta:#x}: {}",
                    String::from_utf8_lossy(&mutated)
                );
                mutations += 1;
            }
        }
    }
    assert!(mutations > 1000);
}

#[test]
fn fork_detection() {
    let entries = random_entries(7, 8);
    let (a, _) = honest_chain(&entries[..5]);
    let pk = key().public();
    assert_eq!(detect_fork(&a, &a, &pk), Ok(None));

    let (longer, _) = honest_chain(&entries[..7]);
    assert_eq!(detect_fork(&a, &longer, &pk), Ok(None));
    assert_eq!(detect_fork(&longer, &a, &pk), Ok(None));

    // Branch b shares versions 0..=2 and re-signs a rewritten version 3.
    let mut alt = entries.clone();
    alt[2] = b"an alternative third entry".to_vec();
    let (b, _) = honest_chain(&alt[..6]);
    assert_eq!(verify_chain("main", &b, &pk).overall, Overall::Consistent);
    let ev = detect_fork(&a, &b, &pk).unwrap().unwrap();
    assert_eq!(ev.version, 3);
    assert_eq!(ev.a.version, 3);
    assert_eq!(ev.b.version, 3);
    assert_ne!(ev.a.root, ev.b.root);
    assert!(ev.a.verify(&pk) && ev.b.verify(&pk));

    // Checkpoints with bad signatures are not evidence.
    let imposter = KeyPair::from_seed([9; 32]).public();
    assert_eq!(detect_fork(&a, &b, &imposter), Ok(None));
}

#[test]
fn fork_found_by_tree_size_when_versions_differ() {
    let entries = random_entries(8, 4);
    let (a, _) = honest_chain(&entries);
    let kp = key();
    let other = VerifiableLog::from_entries(random_entries(9, 2));
    let b = vec![HistoryRecord::genesis(make_checkpoint(
        &ledger(),
        10,
        2,
        other.root(),
        None,
        0,
        &kp,
    ))];
    let ev = detect_fork(&a, &b, &kp.public()).unwrap().unwrap();
    assert_eq!(ev.a.tree_size, 2);
    assert_eq!(ev.version, 2);
}
