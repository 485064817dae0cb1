//! Consumer side: an HTTP client for the server plus the checks a user runs
//! on every response.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use eads_core::{
    leaf_hash, verify_consistency, verify_inclusion, verify_map_proof, ConsistencyProof,
    HistoryRecord, PublicKey, SignedCheckpoint,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::server::{
    AdversaryMode, AppendRequest, AppendResponse, MapQueryResponse, QueryResponse,
};
use crate::storage::Envelope;

pub const SESSION_HEADER: &str = "x-eads-session";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("checkpoint signature does not verify")]
    BadSignature,
    #[error("checkpoint is for ledger {got}, expected {expected}")]
    LedgerMismatch { expected: String, got: String },
    #[error("version went back from {prev} to {got}")]
    VersionRegression { prev: u64, got: u64 },
    #[error("version {version} was already seen with a different state")]
    ConflictingVersion { version: u64 },
    #[error("consistency proof from size {old_size} to {new_size} does not verify")]
    Consistency { old_size: u64, new_size: u64 },
    #[error("inclusion proof for index {index} does not verify")]
    Inclusion { index: u64 },
    #[error("map proof does not verify")]
    MapProof,
    #[error("split view: server checkpoint {server} differs from trusted storage {journal}")]
    SplitView { server: String, journal: String },
}

fn check_signature(cp: &SignedCheckpoint, pk: &PublicKey) -> Result<(), VerifyError> {
    if cp.verify(pk) {
        Ok(())
    } else {
        Err(VerifyError::BadSignature)
    }
}

/// Short digest description used in messages.
pub fn describe(cp: &SignedCheckpoint) -> String {
    let map = cp
        .map_root
        .map_or(String::new(), |m| format!(" map_root={m}"));
    format!(
        "v{} size={} root={}{}",
        cp.version, cp.tree_size, cp.root, map
    )
}

/// Checks an append response against the previously trusted checkpoint.
/// Without one only the signature and proof shape are checked.
pub fn verify_append(
    prev: Option<&SignedCheckpoint>,
    resp: &AppendResponse,
    pk: &PublicKey,
) -> Result<(), VerifyError> {
    let cp = &resp.checkpoint;
    check_signature(cp, pk)?;
    let proof = &resp.consistency;
    let bad_proof = VerifyError::Consistency {
        old_size: proof.old_size,
        new_size: proof.new_size,
    };
    if proof.new_size != cp.tree_size {
        return Err(bad_proof);
    }
    let Some(prev) = prev else { return Ok(()) };
    if prev.ledger_id != cp.ledger_id {
        return Err(VerifyError::LedgerMismatch {
            expected: prev.ledger_id.to_string(),
            got: cp.ledger_id.to_string(),
        });
    }
    if cp.version < prev.version {
        return Err(VerifyError::VersionRegression {
            prev: prev.version,
            got: cp.version,
        });
    }
    if cp.version == prev.version && !cp.same_state(prev) {
        return Err(VerifyError::ConflictingVersion {
            version: cp.version,
        });
    }
    if proof.old_size != prev.tree_size
        || !verify_consistency(prev.tree_size, &prev.root, cp.tree_size, &cp.root, proof)
    {
        return Err(bad_proof);
    }
    Ok(())
}

/// Checks that `next` extends `prev` using a proof fetched separately.
pub fn verify_advance(
    prev: &SignedCheckpoint,
    next: &SignedCheckpoint,
    proof: &ConsistencyProof,
    pk: &PublicKey,
) -> Result<(), VerifyError> {
    verify_append(
        Some(prev),
        &AppendResponse {
            checkpoint: next.clone(),
            consistency: proof.clone(),
        },
        pk,
    )
}

pub fn verify_query(resp: &QueryResponse, index: u64, pk: &PublicKey) -> Result<(), VerifyError> {
    let cp = &resp.checkpoint;
    check_signature(cp, pk)?;
    if verify_inclusion(
        &leaf_hash(&resp.entry),
        index,
        cp.tree_size,
        &resp.inclusion,
        &cp.root,
    ) {
        Ok(())
    } else {
        Err(VerifyError::Inclusion { index })
    }
}

pub fn verify_map_query(
    resp: &MapQueryResponse,
    key: &[u8],
    pk: &PublicKey,
) -> Result<(), VerifyError> {
    let cp = &resp.checkpoint;
    check_signature(cp, pk)?;
    let ok = resp.key == key
        && cp
            .map_root
            .is_some_and(|root| verify_map_proof(&root, key, resp.value.as_deref(), &resp.proof));
    if ok {
        Ok(())
    } else {
        Err(VerifyError::MapProof)
    }
}

/// The checkpoint the server answered with must be the latest one in
/// trusted storage.
pub fn cross_check(
    server: &SignedCheckpoint,
    journal_latest: Option<&HistoryRecord>,
) -> Result<(), VerifyError> {
    match journal_latest {
        Some(rec) if rec.checkpoint == *server => Ok(()),
        other => Err(VerifyError::SplitView {
            server: describe(server),
            journal: other.map_or_else(|| "nothing".into(), |r| describe(&r.checkpoint)),
        }),
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] ureq::Error),
    #[error("server returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("cannot decode server response: {0}")]
    Decode(String),
}

/// Blocking HTTP client for one server.
#[derive(Debug, Clone)]
pub struct Client {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
    session: Option<String>,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Client {
            agent,
            base: base.into().trim_end_matches('/').to_owned(),
            token: None,
            session: None,
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_session(mut self, session: Option<String>) -> Self {
        self.session = session;
        self
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn finish<T: DeserializeOwned>(
        resp: ureq::http::Response<ureq::Body>,
    ) -> Result<T, ClientError> {
        let status = resp.status().as_u16();
        let body = resp.into_body().read_to_string()?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Status { status, body });
        }
        serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get<T: DeserializeOwned>(&self, path: &str, session: bool) -> Result<T, ClientError> {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let (true, Some(s)) = (session, &self.session) {
            req = req.header(SESSION_HEADER, s);
        }
        Self::finish(req.call()?)
    }

    fn post<T: DeserializeOwned>(
        &self,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T, ClientError> {
        let mut req = self.agent.post(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        if let Some(s) = &self.session {
            req = req.header(SESSION_HEADER, s);
        }
        Self::finish(req.send_json(body)?)
    }

    pub fn append(
        &self,
        ledger: &str,
        request: &AppendRequest,
    ) -> Result<AppendResponse, ClientError> {
        self.post(&format!("/ledgers/{ledger}/entries"), request)
    }

    pub fn query(&self, ledger: &str, index: u64) -> Result<QueryResponse, ClientError> {
        self.get(&format!("/ledgers/{ledger}/entries/{index}"), true)
    }

    pub fn query_key(&self, ledger: &str, key: &[u8]) -> Result<MapQueryResponse, ClientError> {
        self.get(
            &format!("/ledgers/{ledger}/keys/{}", hex::encode(key)),
            true,
        )
    }

    pub fn checkpoint(&self, ledger: &str) -> Result<SignedCheckpoint, ClientError> {
        self.get(&format!("/ledgers/{ledger}/checkpoint"), true)
    }

    pub fn consistency(
        &self,
        ledger: &str,
        old_size: u64,
        new_size: u64,
    ) -> Result<ConsistencyProof, ClientError> {
        self.get(
            &format!("/ledgers/{ledger}/consistency/{old_size}/{new_size}"),
            true,
        )
    }

    /// Journal reads carry the session header only when `session` is set.
    pub fn journal(&self, ledger: &str, session: bool) -> Result<Vec<Envelope>, ClientError> {
        self.get(&format!("/journal/{ledger}"), session)
    }

    pub fn journal_latest(
        &self,
        ledger: &str,
        session: bool,
    ) -> Result<Option<Envelope>, ClientError> {
        self.get(&format!("/journal/{ledger}/latest"), session)
    }

    pub fn set_adversary(
        &self,
        ledger: &str,
        mode: &AdversaryMode,
    ) -> Result<serde_json::Value, ClientError> {
        self.post(
            "/admin/adversary",
            &crate::http::AdminRequest {
                ledger: ledger.to_owned(),
                mode: mode.clone(),
            },
        )
    }
}

/// Last verified checkpoint per ledger, one JSON file each.
#[derive(Debug, Clone)]
pub struct CheckpointCache {
    dir: PathBuf,
}

impl CheckpointCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CheckpointCache { dir: dir.into() }
    }

    fn path(&self, ledger: &str) -> PathBuf {
        self.dir.join(format!("{ledger}.json"))
    }

    pub fn load(&self, ledger: &str) -> io::Result<Option<SignedCheckpoint>> {
        match fs::read(self.path(ledger)) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn store(&self, cp: &SignedCheckpoint) -> io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path(cp.ledger_id.as_str());
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(cp)?)?;
        fs::rename(tmp, path)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
