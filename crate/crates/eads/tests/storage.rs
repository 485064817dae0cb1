mod common;

use eads::storage::{Journal, JournalError};
use eads_core::HistoryRecord;

#[test]
fn sequence_numbers_start_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = Journal::open(dir.path().join("j.jsonl")).unwrap();
    let c = common::chain("main", 2, &common::keypair());
    assert_eq!(j.append(c[0].clone()).unwrap(), 1);
    assert_eq!(j.append(c[1].clone()).unwrap(), 2);
}

#[test]
fn skipped_version_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = Journal::open(dir.path().join("j.jsonl")).unwrap();
    let c = common::chain("main", 4, &common::keypair());
    j.append(c[0].clone()).unwrap();
    j.append(c[1].clone()).unwrap();
    let mut skip = c[3].clone();
    skip.prev_version = Some(2);
    assert!(matches!(j.append(skip), Err(JournalError::Conflict { .. })));
    let mut second_genesis = c[0].clone();
    second_genesis.prev_version = None;
    assert!(matches!(
        j.append(second_genesis),
        Err(JournalError::Conflict { .. })
    ));
    assert_eq!(j.len(), 2);
}

#[test]
fn latest_after_five_appends() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = Journal::open(dir.path().join("j.jsonl")).unwrap();
    for r in common::chain("main", 5, &common::keypair()) {
        j.append(r).unwrap();
    }
    assert_eq!(j.latest("main").unwrap().version(), 4);
    assert!(j.latest("other").is_none());
    assert!(j.read("other", 0, 10).is_empty());
}

#[test]
fn read_range_slices_by_version() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = Journal::open(dir.path().join("j.jsonl")).unwrap();
    let c = common::chain("main", 10, &common::keypair());
    for r in &c {
        j.append(r.clone()).unwrap();
    }
    assert_eq!(j.read("main", 2, 3), c[2..=3].to_vec());
    assert_eq!(j.read("main", 0, u64::MAX), c);
}

#[test]
fn ledgers_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let kp = common::keypair();
    let a = common::chain("a", 3, &kp);
    let b = common::chain("b", 3, &kp);
    {
        let mut j = Journal::open(&path).unwrap();
        for (x, y) in a.iter().zip(&b) {
            j.append(x.clone()).unwrap();
            j.append(y.clone()).unwrap();
        }
    }
    let j = Journal::open(&path).unwrap();
    assert_eq!(j.records("a").cloned().collect::<Vec<_>>(), a);
    assert_eq!(j.records("b").cloned().collect::<Vec<_>>(), b);
    assert_eq!(j.sequence(), 6);
}

#[test]
fn lines_have_envelope_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let c = common::chain("main", 2, &common::keypair());
    let mut j = Journal::open(&path).unwrap();
    for r in &c {
        j.append(r.clone()).unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["seq"], i as u64 + 1);
        let rec: HistoryRecord = serde_json::from_value(v["record"].clone()).unwrap();
        assert_eq!(rec, c[i]);
    }
    assert!(text.ends_with('\n'));
}

#[test]
fn torn_line_then_append_continues_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let c = common::chain("main", 4, &common::keypair());
    {
        let mut j = Journal::open(&path).unwrap();
        for r in &c[..3] {
            j.append(r.clone()).unwrap();
        }
    }
    let full = std::fs::read(&path).unwrap();
    let mut torn = full.clone();
    let extra = serde_json::to_vec(&c[3]).unwrap();
    torn.extend_from_slice(&extra[..extra.len() / 2]);
    std::fs::write(&path, &torn).unwrap();

    let mut j = Journal::open(&path).unwrap();
    assert_eq!(j.len(), 3);
    assert_eq!(j.append(c[3].clone()).unwrap(), 4);
    drop(j);
    let j = Journal::open(&path).unwrap();
    assert_eq!(j.records("main").cloned().collect::<Vec<_>>(), c);
}

#[test]
fn complete_final_line_missing_newline_is_kept() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let c = common::chain("main", 2, &common::keypair());
    {
        let mut j = Journal::open(&path).unwrap();
        for r in &c {
            j.append(r.clone()).unwrap();
        }
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.pop();
    std::fs::write(&path, &bytes).unwrap();
    let j = Journal::open(&path).unwrap();
    assert_eq!(j.len(), 2);
    assert!(std::fs::read(&path).unwrap().ends_with(b"\n"));
}
