//! The untrusted server.
//!
//! Each ledger is a verifiable log or a log-backed map. Every edit is
//! persisted to `<data_dir>/<ledger>.entries`, and when a checkpoint is due
//! the signed record is appended to the journal before the caller gets a
//! response. Queries are answered against the last published checkpoint.
//!
//! An adversary mode can be set per ledger to exercise the auditor:
//! rewriting a stored entry, truncating the log, or forking into two
//! branches that are served to alternating sessions and published to two
//! journals.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use eads_core::{
    empty_root, make_checkpoint, ConsistencyProof, EditOp, Hash, HistoryRecord, InclusionProof,
    LedgerId, LogBackedMap, MapProof, SignedCheckpoint, Signer, VerifiableLog,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::storage::{Envelope, Journal, JournalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerKind {
    #[default]
    Log,
    Map,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum AdversaryMode {
    #[default]
    None,
    RewriteLeaf {
        index: u64,
        #[serde(with = "lower_hex")]
        bytes: Vec<u8>,
    },
    ForkAfter {
        version: u64,
    },
    Truncate {
        size: u64,
    },
}

impl AdversaryMode {
    pub fn label(&self) -> &'static str {
        match self {
            AdversaryMode::None => "NONE",
            AdversaryMode::RewriteLeaf { .. } => "REWRITE_LEAF",
            AdversaryMode::ForkAfter { .. } => "FORK_AFTER",
            AdversaryMode::Truncate { .. } => "TRUNCATE",
        }
    }
}

/// Points where a crash can be simulated during an append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Entry persisted, record not yet in the journal.
    BeforePublish,
    /// Record in the journal, response not yet sent.
    AfterPublish,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("unknown ledger {0}")]
    UnknownLedger(String),
    #[error("index {index} is outside the published tree of size {tree_size}")]
    Range { index: u64, tree_size: u64 },
    #[error("journal conflict: {0}")]
    Conflict(JournalError),
    #[error("bad request: {0}")]
    BadInput(String),
    #[error(transparent)]
    Journal(JournalError),
    #[error("storage error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(
        "persisted state of ledger {ledger} does not match its published checkpoint: {detail}"
    )]
    StateMismatch { ledger: String, detail: String },
    #[error("injected fault at {0:?}")]
    Injected(FaultPoint),
    #[error("server stopped after an injected fault")]
    Stopped,
}

impl From<JournalError> for ServerError {
    fn from(e: JournalError) -> Self {
        match e {
            JournalError::Conflict { .. } => ServerError::Conflict(e),
            other => ServerError::Journal(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ServerError + '_ {
    move |source| ServerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Body of an append request: raw bytes for a log, an edit op for a map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum AppendRequest {
    Entry(#[serde(with = "lower_hex")] Vec<u8>),
    Op(EditOp),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendResponse {
    pub checkpoint: SignedCheckpoint,
    pub consistency: ConsistencyProof,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryResponse {
    #[serde(with = "lower_hex")]
    pub entry: Vec<u8>,
    pub inclusion: InclusionProof,
    pub checkpoint: SignedCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapQueryResponse {
    #[serde(with = "lower_hex")]
    pub key: Vec<u8>,
    #[serde(with = "opt_hex")]
    pub value: Option<Vec<u8>>,
    pub proof: MapProof,
    pub checkpoint: SignedCheckpoint,
}

pub(crate) mod lower_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        eads_core::hash::decode_lower_hex(&s).map_err(serde::de::Error::custom)
    }
}

mod opt_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(b) => s.serialize_some(&hex::encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| eads_core::hash::decode_lower_hex(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Debug, Clone)]
enum Data {
    Log(VerifiableLog),
    Map(Box<LogBackedMap>),
}

impl Data {
    fn from_entries(kind: LedgerKind, entries: impl IntoIterator<Item = Vec<u8>>) -> Self {
        match kind {
            LedgerKind::Log => Data::Log(VerifiableLog::from_entries(entries)),
            LedgerKind::Map => Data::Map(Box::new(LogBackedMap::from_log_entries(entries))),
        }
    }

    fn kind(&self) -> LedgerKind {
        match self {
            Data::Log(_) => LedgerKind::Log,
            Data::Map(_) => LedgerKind::Map,
        }
    }

    fn log(&self) -> &VerifiableLog {
        match self {
            Data::Log(l) => l,
            Data::Map(m) => m.log(),
        }
    }

    fn push(&mut self, bytes: Vec<u8>) {
        match self {
            Data::Log(l) => {
                l.append(bytes);
            }
            Data::Map(m) => {
                m.append_raw(bytes);
            }
        }
    }

    fn entries(&self) -> Vec<Vec<u8>> {
        self.log().entries().map(<[u8]>::to_vec).collect()
    }

    fn map_root(&self) -> Option<Hash> {
        match self {
            Data::Log(_) => None,
            Data::Map(m) => Some(m.map().root()),
        }
    }

    /// The map as of the first `size` entries.
    fn map_at(&self, size: u64) -> Option<LogBackedMap> {
        match self {
            Data::Log(_) => None,
            Data::Map(m) if m.log().len() == size => Some(m.as_ref().clone()),
            Data::Map(m) => Some(LogBackedMap::from_log_entries(
                m.log().entries().take(size as usize).map(<[u8]>::to_vec),
            )),
        }
    }
}

#[derive(Debug, Clone)]
struct Branch {
    data: Data,
    last: SignedCheckpoint,
    pending: u64,
    journal: usize,
}

#[derive(Debug)]
struct Ledger {
    id: LedgerId,
    kind: LedgerKind,
    branches: Vec<Branch>,
    sessions: HashMap<String, usize>,
    mode: AdversaryMode,
    entries_path: PathBuf,
    entries_file: File,
}

impl Ledger {
    fn branch_index(&mut self, session: Option<&str>) -> usize {
        let Some(s) = session else { return 0 };
        let next = self.sessions.len();
        let order = *self.sessions.entry(s.to_owned()).or_insert(next);
        order % self.branches.len()
    }

    fn rewrite_entries_file(&mut self, sync: bool) -> Result<(), ServerError> {
        let tmp = self.entries_path.with_extension("entries.tmp");
        let mut text = String::new();
        for e in self.branches[0].data.log().entries() {
            text.push_str(&hex::encode(e));
            text.push('\n');
        }
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &self.entries_path).map_err(io_err(&self.entries_path))?;
        self.entries_file = open_append(&self.entries_path)?;
        if sync {
            self.entries_file
                .sync_data()
                .map_err(io_err(&self.entries_path))?;
        }
        Ok(())
    }
}

fn open_append(path: &Path) -> Result<File, ServerError> {
    OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(io_err(path))
}

/// Reads an entries file, dropping an unterminated final line.
fn read_entries(path: &Path) -> Result<Vec<Vec<u8>>, ServerError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    if complete < text.len() {
        tracing::warn!(path = %path.display(), "discarding torn final entry line");
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        f.set_len(complete as u64).map_err(io_err(path))?;
    }
    text[..complete]
        .lines()
        .enumerate()
        .map(|(i, line)| {
            eads_core::hash::decode_lower_hex(line).map_err(|_| ServerError::StateMismatch {
                ledger: path.display().to_string(),
                detail: format!("entry line {} is not hex", i + 1),
            })
        })
        .collect()
}

/// Bytes substituted for the first entry of a forked branch.
fn forked_entry(kind: LedgerKind, original: &[u8]) -> Vec<u8> {
    match (kind, EditOp::from_canonical(original)) {
        (LedgerKind::Map, Some(op)) => {
            let mut value = b"fork".to_vec();
            value.extend_from_slice(&op.value);
            EditOp::put(op.key, value).canonical_bytes()
        }
        _ => {
            let mut out = b"fork".to_vec();
            out.extend_from_slice(original);
            out
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub data_dir: PathBuf,
    pub journal_path: PathBuf,
    pub checkpoint_every_n_edits: u64,
    pub sync: bool,
    pub ledgers: Vec<(LedgerId, LedgerKind)>,
}

impl ServerOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        let data_dir = data_dir.into();
        ServerOptions {
            journal_path: data_dir.join("journal.jsonl"),
            data_dir,
            checkpoint_every_n_edits: 1,
            sync: true,
            ledgers: vec![(LedgerId::new("main").expect("valid id"), LedgerKind::Log)],
        }
    }

    pub fn from_config(cfg: &crate::config::Config) -> Self {
        ServerOptions {
            data_dir: cfg.data_dir.clone(),
            journal_path: cfg.journal_path(),
            checkpoint_every_n_edits: cfg.checkpoint_every_n_edits,
            sync: cfg.sync,
            ledgers: cfg.ledgers.iter().map(|l| (l.id.clone(), l.kind)).collect(),
        }
    }

    pub fn fork_journal_path(&self) -> PathBuf {
        let mut s = self.journal_path.as_os_str().to_owned();
        s.push(".fork");
        PathBuf::from(s)
    }
}

pub struct Server {
    signer: Box<dyn Signer + Send + Sync>,
    clock: Box<dyn Clock>,
    options: ServerOptions,
    journals: Vec<Journal>,
    ledgers: BTreeMap<String, Ledger>,
    fault: Option<FaultPoint>,
    stopped: bool,
}

impl std::fmt::Debug for Server {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Server")
            .field("options", &self.options)
            .field("ledgers", &self.ledgers.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Server {
    /// Opens or resumes all configured ledgers. A fresh ledger gets a
    /// genesis record; an existing one is rebuilt from its entries file and
    /// checked against the latest journal record.
    pub fn open(
        options: ServerOptions,
        signer: impl Signer + Send + Sync + 'static,
        clock: impl Clock + 'static,
    ) -> Result<Self, ServerError> {
        fs::create_dir_all(&options.data_dir).map_err(io_err(&options.data_dir))?;
        let mut journal = Journal::open(&options.journal_path)?;
        journal.set_sync(options.sync);
        let mut server = Server {
            signer: Box::new(signer),
            clock: Box::new(clock),
            journals: vec![journal],
            ledgers: BTreeMap::new(),
            fault: None,
            stopped: false,
            options,
        };
        for (id, kind) in server.options.ledgers.clone() {
            let ledger = server.open_ledger(id, kind)?;
            server.ledgers.insert(ledger.id.as_str().to_owned(), ledger);
        }
        Ok(server)
    }

    fn open_ledger(&mut self, id: LedgerId, kind: LedgerKind) -> Result<Ledger, ServerError> {
        let entries_path = self.options.data_dir.join(format!("{id}.entries"));
        let entries = read_entries(&entries_path)?;
        let data = Data::from_entries(kind, entries);
        let mismatch = |detail: String| ServerError::StateMismatch {
            ledger: id.as_str().to_owned(),
            detail,
        };

        let (last, pending) = match self.journals[0].latest(id.as_str()).cloned() {
            None => {
                if !data.log().is_empty() {
                    return Err(mismatch("entries exist but nothing was published".into()));
                }
                let map_root = data.map_root();
                let cp = make_checkpoint(
                    &id,
                    0,
                    0,
                    empty_root(),
                    map_root,
                    self.clock.now_millis(),
                    &self.signer.as_ref(),
                );
                self.journals[0].append(HistoryRecord::genesis(cp.clone()))?;
                (cp, 0)
            }
            Some(rec) => {
                let cp = rec.checkpoint;
                let root = data.log().root_at(cp.tree_size).map_err(|_| {
                    mismatch(format!(
                        "{} entries on disk, {} published",
                        data.log().len(),
                        cp.tree_size
                    ))
                })?;
                let map_root = data.map_at(cp.tree_size).map(|m| m.map().root());
                if root != cp.root || map_root != cp.map_root {
                    return Err(mismatch(
                        "recomputed root differs from the published root".into(),
                    ));
                }
                let pending = data.log().len() - cp.tree_size;
                (cp, pending)
            }
        };

        Ok(Ledger {
            entries_file: open_append(&entries_path)?,
            entries_path,
            id,
            kind,
            branches: vec![Branch {
                data,
                last,
                pending,
                journal: 0,
            }],
            sessions: HashMap::new(),
            mode: AdversaryMode::None,
        })
    }

    pub fn options(&self) -> &ServerOptions {
        &self.options
    }

    /// Arms a one-shot simulated crash for the next append that publishes.
    pub fn inject_fault(&mut self, point: Option<FaultPoint>) {
        self.fault = point;
    }

    fn ledger_mut(&mut self, id: &str) -> Result<&mut Ledger, ServerError> {
        if self.stopped {
            return Err(ServerError::Stopped);
        }
        self.ledgers
            .get_mut(id)
            .ok_or_else(|| ServerError::UnknownLedger(id.to_owned()))
    }

    pub fn ledger_kind(&self, id: &str) -> Option<LedgerKind> {
        self.ledgers.get(id).map(|l| l.kind)
    }

    pub fn append(
        &mut self,
        ledger_id: &str,
        session: Option<&str>,
        request: &AppendRequest,
    ) -> Result<AppendResponse, ServerError> {
        let sync = self.options.sync;
        let ledger = self.ledger_mut(ledger_id)?;
        let bytes = match (ledger.kind, request) {
            (LedgerKind::Log, AppendRequest::Entry(b)) => b.clone(),
            (LedgerKind::Map, AppendRequest::Op(op)) => op.canonical_bytes(),
            (LedgerKind::Log, AppendRequest::Op(_)) => {
                return Err(ServerError::BadInput(
                    "log ledgers take {\"entry\": hex}".into(),
                ))
            }
            (LedgerKind::Map, AppendRequest::Entry(_)) => {
                return Err(ServerError::BadInput(
                    "map ledgers take {\"op\": edit}".into(),
                ))
            }
        };

        let mut line = hex::encode(&bytes);
        line.push('\n');
        ledger
            .entries_file
            .write_all(line.as_bytes())
            .and_then(|_| {
                if sync {
                    ledger.entries_file.sync_data()
                } else {
                    Ok(())
                }
            })
            .map_err(io_err(&ledger.entries_path))?;
        for b in &mut ledger.branches {
            b.data.push(bytes.clone());
            b.pending += 1;
        }

        let target = ledger.branch_index(session);
        let mut proofs = Vec::new();
        for i in 0..self.ledgers[ledger_id].branches.len() {
            match self.publish_if_due(ledger_id, i) {
                Ok(p) => proofs.push(p),
                Err(e) => {
                    if i == 0 && matches!(e, ServerError::Conflict(_) | ServerError::Journal(_)) {
                        self.roll_back_last(ledger_id)?;
                    }
                    return Err(e);
                }
            }
        }
        self.maybe_fork(ledger_id)?;

        let ledger = &self.ledgers[ledger_id];
        let branch = &ledger.branches[target.min(ledger.branches.len() - 1)];
        let consistency = proofs
            .get(target)
            .cloned()
            .flatten()
            .unwrap_or(ConsistencyProof {
                old_size: branch.last.tree_size,
                new_size: branch.last.tree_size,
                nodes: Vec::new(),
            });
        Ok(AppendResponse {
            checkpoint: branch.last.clone(),
            consistency,
        })
    }

    fn roll_back_last(&mut self, ledger_id: &str) -> Result<(), ServerError> {
        let sync = self.options.sync;
        let ledger = self.ledger_mut(ledger_id)?;
        for b in &mut ledger.branches {
            let mut entries = b.data.entries();
            entries.pop();
            b.data = Data::from_entries(ledger.kind, entries);
            b.pending = b.pending.saturating_sub(1);
        }
        ledger.rewrite_entries_file(sync)
    }

    /// Publishes a checkpoint for branch `i` if the cadence says so.
    fn publish_if_due(
        &mut self,
        ledger_id: &str,
        i: usize,
    ) -> Result<Option<ConsistencyProof>, ServerError> {
        let cadence = self.options.checkpoint_every_n_edits;
        let ledger = self
            .ledgers
            .get_mut(ledger_id)
            .expect("ledger checked by caller");
        let branch = &mut ledger.branches[i];
        if branch.pending < cadence {
            return Ok(None);
        }
        let timestamp = self.clock.now_millis();
        let version = branch.last.version + branch.pending;
        let journal = &mut self.journals[branch.journal];
        let proof = publish(
            &ledger.id,
            branch,
            version,
            timestamp,
            self.signer.as_ref(),
            journal,
            &mut self.fault,
        );
        if let Err(ServerError::Injected(_)) = proof {
            self.stopped = true;
        }
        proof.map(Some)
    }

    /// Builds the second branch once a FORK_AFTER target version has been
    /// published on the first.
    fn maybe_fork(&mut self, ledger_id: &str) -> Result<(), ServerError> {
        let ledger = &self.ledgers[ledger_id];
        let AdversaryMode::ForkAfter { version: v } = ledger.mode else {
            return Ok(());
        };
        if ledger.branches.len() > 1 || ledger.branches[0].last.version < v || v == 0 {
            return Ok(());
        }
        let history: Vec<HistoryRecord> = self.journals[0].records(ledger_id).cloned().collect();
        let Some(base) = history.iter().rev().find(|r| r.version() < v).cloned() else {
            return Ok(());
        };
        let fork_at = base.checkpoint.tree_size;

        if self.journals.len() == 1 {
            let mut j = Journal::open(self.options.fork_journal_path())?;
            j.set_sync(self.options.sync);
            self.journals.push(j);
        }
        if self.journals[1].latest(ledger_id).is_some() {
            return Err(ServerError::BadInput(format!(
                "fork journal already holds ledger {ledger_id}"
            )));
        }

        let ledger = &self.ledgers[ledger_id];
        let mut entries = ledger.branches[0].data.entries();
        let Some(first) = entries.get_mut(fork_at as usize) else {
            return Ok(());
        };
        *first = forked_entry(ledger.kind, first);

        for rec in history.iter().filter(|r| r.version() < v) {
            self.journals[1].append(rec.clone())?;
        }
        let mut branch = Branch {
            data: Data::from_entries(ledger.kind, entries[..fork_at as usize].iter().cloned()),
            last: base.checkpoint.clone(),
            pending: 0,
            journal: 1,
        };
        let mut next = fork_at as usize;
        let mut no_fault = None;
        for rec in history.iter().filter(|r| r.version() >= v) {
            while (branch.data.log().len()) < rec.checkpoint.tree_size {
                branch.data.push(entries[next].clone());
                next += 1;
            }
            publish(
                &ledger.id,
                &mut branch,
                rec.version(),
                rec.checkpoint.timestamp,
                self.signer.as_ref(),
                &mut self.journals[1],
                &mut no_fault,
            )?;
        }
        for e in &entries[next..] {
            branch.data.push(e.clone());
            branch.pending += 1;
        }
        tracing::info!(ledger = ledger_id, version = v, "fork branch created");
        self.ledger_mut(ledger_id)?.branches.push(branch);
        Ok(())
    }

    pub fn set_adversary(
        &mut self,
        ledger_id: &str,
        mode: AdversaryMode,
    ) -> Result<(), ServerError> {
        let sync = self.options.sync;
        let ledger = self.ledger_mut(ledger_id)?;
        tracing::warn!(
            ledger = ledger_id,
            mode = mode.label(),
            "adversary mode set"
        );
        match &mode {
            AdversaryMode::None => {
                ledger.branches.truncate(1);
            }
            AdversaryMode::RewriteLeaf { index, bytes } => {
                let main = &mut ledger.branches[0];
                let mut entries = main.data.entries();
                let size = entries.len() as u64;
                let slot = entries.get_mut(*index as usize).ok_or(ServerError::Range {
                    index: *index,
                    tree_size: size,
                })?;
                *slot = bytes.clone();
                main.data = Data::from_entries(ledger.kind, entries);
                ledger.rewrite_entries_file(sync)?;
            }
            AdversaryMode::Truncate { size } => {
                let main = &mut ledger.branches[0];
                let entries = main.data.entries();
                let keep = (*size as usize).min(entries.len());
                main.data = Data::from_entries(ledger.kind, entries.into_iter().take(keep));
                main.pending = (keep as u64).saturating_sub(main.last.tree_size);
                ledger.rewrite_entries_file(sync)?;
            }
            AdversaryMode::ForkAfter { version } => {
                if *version == 0 {
                    return Err(ServerError::BadInput(
                        "FORK_AFTER needs a version of at least 1".into(),
                    ));
                }
            }
        }
        ledger.mode = mode;
        self.maybe_fork(ledger_id)
    }

    pub fn adversary(&self, ledger_id: &str) -> Option<&AdversaryMode> {
        self.ledgers.get(ledger_id).map(|l| &l.mode)
    }

    fn branch(&mut self, ledger_id: &str, session: Option<&str>) -> Result<&Branch, ServerError> {
        let ledger = self.ledger_mut(ledger_id)?;
        let i = ledger.branch_index(session);
        Ok(&ledger.branches[i])
    }

    pub fn checkpoint(
        &mut self,
        ledger_id: &str,
        session: Option<&str>,
    ) -> Result<SignedCheckpoint, ServerError> {
        Ok(self.branch(ledger_id, session)?.last.clone())
    }

    pub fn query(
        &mut self,
        ledger_id: &str,
        session: Option<&str>,
        index: u64,
    ) -> Result<QueryResponse, ServerError> {
        let branch = self.branch(ledger_id, session)?;
        let checkpoint = branch.last.clone();
        let range = ServerError::Range {
            index,
            tree_size: checkpoint.tree_size,
        };
        if index >= checkpoint.tree_size {
            return Err(range);
        }
        let log = branch.data.log();
        let (Some(entry), Ok(inclusion)) = (
            log.entry(index),
            log.inclusion_proof(index, checkpoint.tree_size),
        ) else {
            return Err(range);
        };
        Ok(QueryResponse {
            entry: entry.to_vec(),
            inclusion,
            checkpoint,
        })
    }

    pub fn query_key(
        &mut self,
        ledger_id: &str,
        session: Option<&str>,
        key: &[u8],
    ) -> Result<MapQueryResponse, ServerError> {
        let branch = self.branch(ledger_id, session)?;
        if branch.data.kind() != LedgerKind::Map {
            return Err(ServerError::BadInput(format!(
                "ledger {ledger_id} is not a map"
            )));
        }
        let checkpoint = branch.last.clone();
        let map = branch
            .data
            .map_at(checkpoint.tree_size)
            .expect("map ledger");
        let (value, proof) = map.map().get_with_proof(key);
        Ok(MapQueryResponse {
            key: key.to_vec(),
            value: value.map(<[u8]>::to_vec),
            proof,
            checkpoint,
        })
    }

    /// Proof between two sizes up to the session's published tree size.
    pub fn consistency(
        &mut self,
        ledger_id: &str,
        session: Option<&str>,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, ServerError> {
        let branch = self.branch(ledger_id, session)?;
        let published = branch.last.tree_size;
        if old_size > new_size || new_size > published {
            return Err(ServerError::Range {
                index: new_size.max(old_size),
                tree_size: published,
            });
        }
        branch
            .data
            .log()
            .consistency_proof(old_size, new_size)
            .map_err(|_| ServerError::Range {
                index: new_size,
                tree_size: published,
            })
    }

    /// The journal this session is shown for the ledger.
    pub fn journal(
        &mut self,
        ledger_id: &str,
        session: Option<&str>,
    ) -> Result<Vec<Envelope>, ServerError> {
        let j = self.branch(ledger_id, session)?.journal;
        Ok(self.journals[j].envelopes(ledger_id).cloned().collect())
    }

    pub fn journal_latest(
        &mut self,
        ledger_id: &str,
        session: Option<&str>,
    ) -> Result<Option<Envelope>, ServerError> {
        let j = self.branch(ledger_id, session)?.journal;
        Ok(self.journals[j].latest_envelope(ledger_id).cloned())
    }
}

/// Signs and journals the branch's current state as `version`.
fn publish(
    id: &LedgerId,
    branch: &mut Branch,
    version: u64,
    timestamp: u64,
    signer: &dyn Signer,
    journal: &mut Journal,
    fault: &mut Option<FaultPoint>,
) -> Result<ConsistencyProof, ServerError> {
    let log = branch.data.log();
    let new_size = log.len();
    let old_size = branch.last.tree_size.min(new_size);
    let proof = log
        .consistency_proof(old_size, new_size)
        .expect("sizes are within the log");
    let cp = make_checkpoint(
        id,
        version,
        new_size,
        log.root(),
        branch.data.map_root(),
        timestamp,
        &signer,
    );
    let record = HistoryRecord {
        checkpoint: cp.clone(),
        prev_version: Some(branch.last.version),
        consistency: Some(proof.clone()),
    };
    if *fault == Some(FaultPoint::BeforePublish) {
        return Err(ServerError::Injected(fault.take().expect("checked")));
    }
    journal.append(record)?;
    if *fault == Some(FaultPoint::AfterPublish) {
        return Err(ServerError::Injected(fault.take().expect("checked")));
    }
    branch.last = cp;
    branch.pending = 0;
    Ok(proof)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SteppingClock;
    use eads_core::KeyPair;

    fn server(dir: &Path, kind: LedgerKind) -> Server {
        let mut opts = ServerOptions::new(dir);
        opts.ledgers = vec![(LedgerId::new("main").unwrap(), kind)];
        opts.sync = false;
        Server::open(
            opts,
            KeyPair::from_seed([1; 32]),
            SteppingClock::new(1000, 1),
        )
        .unwrap()
    }

    #[test]
    fn adversary_mode_json() {
        let m: AdversaryMode =
            serde_json::from_str(r#"{"mode":"REWRITE_LEAF","index":1,"bytes":"78"}"#).unwrap();
        assert_eq!(
            m,
            AdversaryMode::RewriteLeaf {
                index: 1,
                bytes: b"x".to_vec()
            }
        );
        assert_eq!(
            serde_json::to_string(&AdversaryMode::ForkAfter { version: 3 }).unwrap(),
            r#"{"mode":"FORK_AFTER","version":3}"#
        );
        assert!(serde_json::from_str::<AdversaryMode>(
            r#"{"mode":"FORK_AFTER","version":1,"x":1}"#
        )
        .is_err());
    }

    #[test]
    fn append_request_json() {
        let r: AppendRequest = serde_json::from_str(r#"{"entry":"6869"}"#).unwrap();
        assert_eq!(r, AppendRequest::Entry(b"hi".to_vec()));
        let r: AppendRequest =
            serde_json::from_str(r#"{"op":{"kind":"PUT","key":"6b","value":"76"}}"#).unwrap();
        assert_eq!(r, AppendRequest::Op(EditOp::put(*b"k", *b"v")));
    }

    #[test]
    fn kind_mismatch_is_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = server(dir.path(), LedgerKind::Log);
        let err = s.append("main", None, &AppendRequest::Op(EditOp::put(*b"k", *b"v")));
        assert!(matches!(err, Err(ServerError::BadInput(_))));
        assert!(matches!(
            s.query_key("main", None, b"k"),
            Err(ServerError::BadInput(_))
        ));
        assert!(matches!(
            s.checkpoint("nope", None),
            Err(ServerError::UnknownLedger(_))
        ));
    }

    #[test]
    fn forked_entry_stays_canonical_for_maps() {
        let op = EditOp::put(*b"k", *b"v");
        let forked = forked_entry(LedgerKind::Map, &op.canonical_bytes());
        assert_eq!(
            EditOp::from_canonical(&forked),
            Some(EditOp::put(*b"k", *b"forkv"))
        );
        assert_eq!(forked_entry(LedgerKind::Log, b"x"), b"forkx".to_vec());
    }

    #[test]
    fn sessions_alternate_in_order_of_appearance() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = server(dir.path(), LedgerKind::Log);
        for i in 0..3u8 {
            s.append("main", None, &AppendRequest::Entry(vec![i; 16]))
                .unwrap();
        }
        s.set_adversary("main", AdversaryMode::ForkAfter { version: 2 })
            .unwrap();
        let a = s.checkpoint("main", Some("alice")).unwrap();
        let b = s.checkpoint("main", Some("bob")).unwrap();
        let c = s.checkpoint("main", Some("carol")).unwrap();
        assert_eq!((a.version, b.version), (3, 3));
        assert!(!a.same_state(&b));
        assert_eq!(a, c);
        assert_eq!(s.checkpoint("main", None).unwrap(), a);
    }
}
