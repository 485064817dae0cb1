//! Seeded end-to-end runs: a server (honest or adversarial), a consumer
//! checking every response, and the auditor reading the journals.
//!
//! Even seeds use a log ledger, odd seeds a log-backed map. All payloads
//! are random and at least 16 bytes so the auditor's input can be scanned
//! for them.

use std::fmt;
use std::path::Path;

use eads_core::{AuditReport, EditOp, KeyPair, LedgerId, LinkVerdict};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::auditor::{self, JournalSource};
use crate::client::{verify_advance, verify_append, verify_map_query, verify_query};
use crate::clock::SteppingClock;
use crate::server::{AdversaryMode, AppendRequest, LedgerKind, Server, ServerError, ServerOptions};

pub const LEDGER: &str = "main";
const START_TIME: u64 = 1_700_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Honest,
    Rewrite,
    Fork,
    Truncate,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::Honest,
        ScenarioName::Rewrite,
        ScenarioName::Fork,
        ScenarioName::Truncate,
    ];
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioName::Honest => "honest",
            ScenarioName::Rewrite => "rewrite",
            ScenarioName::Fork => "fork",
            ScenarioName::Truncate => "truncate",
        })
    }
}

/// Audit outcome in a comparable form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Consistent,
    /// First bad link, as (from_version, to_version).
    Inconsistent {
        from: Option<u64>,
        to: Option<u64>,
    },
    Forked {
        version: u64,
    },
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |x: &Option<u64>| x.map_or("?".to_owned(), |n| n.to_string());
        match self {
            Verdict::Consistent => f.write_str("CONSISTENT"),
            Verdict::Inconsistent { from, to } => {
                write!(f, "INCONSISTENT at link {}->{}", v(from), v(to))
            }
            Verdict::Forked { version } => write!(f, "FORKED at version {version}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: ScenarioName,
    pub seed: u64,
    pub ops: usize,
    pub kind: LedgerKind,
    pub public_key: String,
    pub adversary: AdversaryMode,
    pub expected: Verdict,
    pub observed: Verdict,
    /// Responses the consumer rejected.
    pub response_failures: usize,
    pub queries_checked: usize,
    pub privacy_attested: bool,
    /// Payloads found in the bytes the auditor read.
    pub leaked_payloads: usize,
    pub bytes_audited: u64,
    pub pass: bool,
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scenario {} seed {} ({} ops, {:?} ledger)",
            self.name, self.seed, self.ops, self.kind
        )?;
        writeln!(f, "  expected: {}", self.expected)?;
        writeln!(f, "  observed: {}", self.observed)?;
        writeln!(
            f,
            "  consumer: {} rejected responses, {} queries checked",
            self.response_failures, self.queries_checked
        )?;
        writeln!(
            f,
            "  secrecy:  privacy attested {}, {} payloads found in {} audited bytes",
            self.privacy_attested, self.leaked_payloads, self.bytes_audited
        )?;
        write!(f, "  result:   {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

fn random_payload(rng: &mut StdRng) -> Vec<u8> {
    let len = rng.gen_range(16..=48);
    let mut v = vec![0u8; len];
    rng.fill(&mut v[..]);
    v
}

/// Runs one scenario with its state under `dir`, which should be empty.
pub fn run(
    name: ScenarioName,
    seed: u64,
    ops: usize,
    dir: &Path,
) -> Result<ScenarioReport, ServerError> {
    assert!(ops >= 8, "scenarios need at least 8 operations");
    let mut rng = StdRng::seed_from_u64(seed);
    let kind = if seed % 2 == 1 {
        LedgerKind::Map
    } else {
        LedgerKind::Log
    };
    let keypair = KeyPair::from_seed(rng.gen());
    let pk = keypair.public();

    let mut options = ServerOptions::new(dir);
    options.sync = false;
    options.ledgers = vec![(LedgerId::new(LEDGER).expect("valid id"), kind)];
    let journal_a = options.journal_path.clone();
    let journal_b = options.fork_journal_path();
    let mut server = Server::open(options, keypair, SteppingClock::new(START_TIME, 1000))?;

    // Version t is published after op t; the adversary acts before op `at`.
    let at = rng.gen_range(2..=ops / 2);
    let (adversary, expected) = match name {
        ScenarioName::Honest => (AdversaryMode::None, Verdict::Consistent),
        ScenarioName::Rewrite => {
            let index = rng.gen_range(0..at as u64 - 1);
            let bytes = random_payload(&mut rng);
            (
                AdversaryMode::RewriteLeaf { index, bytes },
                Verdict::Inconsistent {
                    from: Some(at as u64 - 1),
                    to: Some(at as u64),
                },
            )
        }
        ScenarioName::Truncate => (
            AdversaryMode::Truncate {
                size: rng.gen_range(0..at as u64 - 1),
            },
            Verdict::Inconsistent {
                from: Some(at as u64 - 1),
                to: Some(at as u64),
            },
        ),
        ScenarioName::Fork => {
            let version = at as u64;
            (
                AdversaryMode::ForkAfter { version },
                Verdict::Forked { version },
            )
        }
    };
    if name == ScenarioName::Fork {
        server.set_adversary(LEDGER, adversary.clone())?;
    }

    // The writer appends; the reader only queries. Under FORK_AFTER the two
    // sessions are served different branches.
    let writer_session = Some("writer");
    let reader_session = Some("reader");
    let mut writer = server.checkpoint(LEDGER, writer_session)?;
    let mut reader = server.checkpoint(LEDGER, reader_session)?;

    let mut payloads: Vec<Vec<u8>> = Vec::new();
    let mut keys: Vec<Vec<u8>> = Vec::new();
    let mut response_failures = 0;
    let mut queries_checked = 0;
    for step in 1..=ops {
        if step == at && matches!(name, ScenarioName::Rewrite | ScenarioName::Truncate) {
            if let AdversaryMode::RewriteLeaf { bytes, .. } = &adversary {
                payloads.push(bytes.clone());
            }
            server.set_adversary(LEDGER, adversary.clone())?;
        }
        let request = match kind {
            LedgerKind::Log => {
                let entry = random_payload(&mut rng);
                payloads.push(entry.clone());
                AppendRequest::Entry(entry)
            }
            LedgerKind::Map => {
                let reuse = !keys.is_empty() && rng.gen_bool(0.3);
                let key = if reuse {
                    keys[rng.gen_range(0..keys.len())].clone()
                } else {
                    let k = random_payload(&mut rng);
                    keys.push(k.clone());
                    payloads.push(k.clone());
                    k
                };
                if reuse && rng.gen_bool(0.3) {
                    AppendRequest::Op(EditOp::delete(key))
                } else {
                    let value = random_payload(&mut rng);
                    payloads.push(value.clone());
                    AppendRequest::Op(EditOp::put(key, value))
                }
            }
        };
        let resp = server.append(LEDGER, writer_session, &request)?;
        if verify_append(Some(&writer), &resp, &pk).is_err() {
            response_failures += 1;
        }
        writer = resp.checkpoint;

        if step % 10 == 0 {
            queries_checked += 1;
            let latest = server.checkpoint(LEDGER, reader_session)?;
            let advanced = server
                .consistency(LEDGER, reader_session, reader.tree_size, latest.tree_size)
                .is_ok_and(|p| verify_advance(&reader, &latest, &p, &pk).is_ok());
            reader = latest;
            let answered = match kind {
                LedgerKind::Log => {
                    let index = rng.gen_range(0..reader.tree_size.max(1));
                    server.query(LEDGER, reader_session, index).is_ok_and(|q| {
                        q.checkpoint == reader && verify_query(&q, index, &pk).is_ok()
                    })
                }
                LedgerKind::Map => {
                    let key = if rng.gen_bool(0.5) {
                        keys[rng.gen_range(0..keys.len())].clone()
                    } else {
                        random_payload(&mut rng)
                    };
                    server
                        .query_key(LEDGER, reader_session, &key)
                        .is_ok_and(|q| {
                            q.checkpoint == reader && verify_map_query(&q, &key, &pk).is_ok()
                        })
                }
            };
            if !(advanced && answered) {
                response_failures += 1;
            }
        }
    }
    drop(server);

    let audit_err = |e: auditor::AuditError| ServerError::BadInput(e.to_string());
    let source_a = JournalSource::File(journal_a);
    let fetched_a = source_a.fetch(LEDGER).map_err(audit_err)?;
    let (report_a, privacy_a, records_a) = auditor::audit_items(&fetched_a.items, LEDGER, &pk);
    let mut audited = fetched_a.bytes;
    let mut privacy_attested = privacy_a;
    let mut observed = first_bad(&report_a);
    if name == ScenarioName::Fork {
        let fetched_b = JournalSource::File(journal_b)
            .fetch(LEDGER)
            .map_err(audit_err)?;
        let (report_b, privacy_b, records_b) = auditor::audit_items(&fetched_b.items, LEDGER, &pk);
        audited.extend_from_slice(&fetched_b.bytes);
        privacy_attested &= privacy_b;
        let evidence = eads_core::detect_fork(&records_a, &records_b, &pk)
            .map_err(|e| ServerError::BadInput(e.to_string()))?;
        observed = observed
            .or(first_bad(&report_b))
            .or(evidence.map(|e| Verdict::Forked { version: e.version }));
    }
    let observed = observed.unwrap_or(Verdict::Consistent);

    let leaked_payloads = auditor::leak_scan(&audited, payloads.iter().map(Vec::as_slice));
    let consumer_ok = match name {
        ScenarioName::Honest | ScenarioName::Fork => response_failures == 0,
        ScenarioName::Rewrite | ScenarioName::Truncate => response_failures > 0,
    };
    let pass = observed == expected && consumer_ok && privacy_attested && leaked_payloads == 0;
    Ok(ScenarioReport {
        name,
        seed,
        ops,
        kind,
        public_key: pk.to_hex(),
        adversary,
        expected,
        observed,
        response_failures,
        queries_checked,
        privacy_attested,
        leaked_payloads,
        bytes_audited: audited.len() as u64,
        pass,
    })
}

fn first_bad(report: &AuditReport) -> Option<Verdict> {
    if report.first_record.is_some_and(|v| v != LinkVerdict::Ok) {
        return Some(Verdict::Inconsistent {
            from: None,
            to: None,
        });
    }
    report.first_bad_link().map(|l| Verdict::Inconsistent {
        from: l.from_version,
        to: l.to_version,
    })
}
