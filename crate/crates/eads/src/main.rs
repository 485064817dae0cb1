use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eads_core::{EditOp, HistoryRecord, Overall, PublicKey, SignedCheckpoint};
use serde::Serialize;

use eads::auditor::{self, AuditOutcome, CrossOutcome, Item, JournalSource};
use eads::client::{self, CheckpointCache, Client, VerifyError};
use eads::clock::SystemClock;
use eads::config::Config;
use eads::http::{self, AppState};
use eads::keys;
use eads::scenario::{self, ScenarioName};
use eads::server::{AppendRequest, Server, ServerOptions};
use eads::storage::Envelope;

#[derive(Parser)]
#[command(name = "eads", version, about = "Externally auditable data structures")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "EADS_CONFIG")]
    config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the server.
    Serve,
    /// Append entries and verify each returned consistency proof.
    Append(AppendArgs),
    /// Fetch an entry or map value and verify it against trusted storage.
    Query(QueryArgs),
    /// Fetch and verify the latest checkpoint.
    Checkpoint(ServerArgs),
    /// Verify a ledger's published history.
    Audit(AuditCmd),
    /// Run a seeded end-to-end scenario.
    Scenario(ScenarioArgs),
    /// Generate a signing key and its public key file.
    Keygen {
        /// Secret key path; the public key goes to `<out>.pub`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ServerArgs {
    #[arg(long, default_value = "main")]
    ledger: String,
    /// Server base URL (default: from the config's listen address).
    #[arg(long)]
    server: Option<String>,
    /// Session id sent as the `x-eads-session` header.
    #[arg(long)]
    session: Option<String>,
    /// Server public key file (default: `<key_file>.pub` from the config).
    #[arg(long)]
    pubkey: Option<PathBuf>,
    /// Directory holding the last verified checkpoint per ledger.
    #[arg(long, default_value = ".eads-client")]
    cache_dir: PathBuf,
}

#[derive(Args)]
struct AppendArgs {
    #[command(flatten)]
    target: ServerArgs,
    /// Bearer token (default: from the config).
    #[arg(long, env = "EADS_TOKEN")]
    token: Option<String>,
    /// Log entry as hex.
    #[arg(long, group = "input")]
    entry: Option<String>,
    /// Log entry as UTF-8 text.
    #[arg(long, group = "input")]
    text: Option<String>,
    /// Map edit as JSON, e.g. `{"kind":"PUT","key":"6b","value":"76"}`.
    #[arg(long, group = "input")]
    op: Option<String>,
    /// JSON Lines file of `{"entry":hex}`, `{"op":{..}}` or bare edit ops.
    #[arg(long, group = "input")]
    op_file: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    target: ServerArgs,
    #[arg(long, group = "what")]
    index: Option<u64>,
    /// Map key as hex.
    #[arg(long, group = "what")]
    key: Option<String>,
    /// Map key as UTF-8 text.
    #[arg(long, group = "what")]
    key_text: Option<String>,
    /// Trusted storage to cross-check against: a journal file or URL
    /// (default: the server's journal endpoint, without a session).
    #[arg(long)]
    journal: Option<String>,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct AuditCmd {
    #[command(subcommand)]
    cross: Option<AuditSub>,
    #[command(flatten)]
    args: AuditArgs,
}

#[derive(Subcommand)]
enum AuditSub {
    /// Compare two journals of the same ledger for a fork.
    Cross {
        #[arg(long)]
        journal_a: String,
        #[arg(long)]
        journal_b: String,
        #[arg(long, default_value = "main")]
        ledger: String,
        #[arg(long)]
        pubkey: PathBuf,
    },
}

#[derive(Args)]
struct AuditArgs {
    /// Journal file or URL.
    #[arg(long)]
    journal: Option<String>,
    #[arg(long, default_value = "main")]
    ledger: String,
    /// Public key file (hex), obtained out of band.
    #[arg(long)]
    pubkey: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_enum)]
    name: ScenarioName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    ops: usize,
    /// Directory for the run's files (default: a fresh temporary directory,
    /// removed afterwards).
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

/// Exit statuses: 0 success, 1 operational error, 2 verification failure or
/// inconsistent history, 3 fork.
enum Failure {
    Error(String),
    Verify(String),
}

type CmdResult = Result<ExitCode, Failure>;

fn err(e: impl std::fmt::Display) -> Failure {
    Failure::Error(e.to_string())
}

fn verify_failed(e: VerifyError) -> Failure {
    Failure::Verify(format!("verification failed: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| default_level.into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match &cli.command {
        Command::Serve => cmd_serve(&cli),
        Command::Append(a) => cmd_append(&cli, a),
        Command::Query(q) => cmd_query(&cli, q),
        Command::Checkpoint(s) => cmd_checkpoint(&cli, s),
        Command::Audit(a) => cmd_audit(&cli, a),
        Command::Scenario(s) => cmd_scenario(&cli, s),
        Command::Keygen { out } => cmd_keygen(&cli, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    Config::load(cli.config.as_deref()).map_err(err)
}

fn print<T: Serialize>(cli: &Cli, value: &T, human: impl FnOnce() -> String) {
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(value).expect("serializable")
        );
    } else {
        println!("{}", human());
    }
}

fn cmd_serve(cli: &Cli) -> CmdResult {
    let cfg = load_config(cli)?;
    let key_file = cfg.key_file();
    let keypair = if key_file.exists() {
        keys::load_keypair(&key_file).map_err(err)?
    } else {
        tracing::info!(path = %key_file.display(), "generating signing key");
        keys::keygen(&key_file).map_err(err)?
    };
    tracing::info!(public_key = %keypair.public().to_hex(), "checkpoint signing key");
    let server =
        Server::open(ServerOptions::from_config(&cfg), keypair, SystemClock).map_err(err)?;
    let state = AppState::new(server, &cfg.token, cfg.admin_enabled);
    let runtime = tokio::runtime::Runtime::new().map_err(err)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.listen)
            .await
            .map_err(err)?;
        tracing::info!(addr = %listener.local_addr().map_err(err)?, "listening");
        http::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(err)
    })?;
    Ok(ExitCode::SUCCESS)
}

struct Target {
    client: Client,
    ledger: String,
    pk: PublicKey,
    cache: CheckpointCache,
}

fn target(cfg: &Config, args: &ServerArgs, token: Option<String>) -> Result<Target, Failure> {
    let pubkey = args
        .pubkey
        .clone()
        .unwrap_or_else(|| keys::public_path(&cfg.key_file()));
    let pk = keys::load_public_key(&pubkey).map_err(err)?;
    let mut client = Client::new(args.server.clone().unwrap_or_else(|| cfg.server_url()))
        .with_session(args.session.clone());
    if let Some(t) = token {
        client = client.with_token(t);
    }
    Ok(Target {
        client,
        ledger: args.ledger.clone(),
        pk,
        cache: CheckpointCache::new(&args.cache_dir),
    })
}

impl Target {
    /// Last verified checkpoint, or the server's current one on first use.
    fn trusted(&self) -> Result<SignedCheckpoint, Failure> {
        if let Some(cp) = self.cache.load(&self.ledger).map_err(err)? {
            return Ok(cp);
        }
        let cp = self.client.checkpoint(&self.ledger).map_err(err)?;
        if !cp.verify(&self.pk) {
            return Err(verify_failed(VerifyError::BadSignature));
        }
        Ok(cp)
    }

    /// Verifies that `next` extends the trusted checkpoint and caches it.
    fn advance(&self, trusted: &SignedCheckpoint, next: &SignedCheckpoint) -> Result<(), Failure> {
        if next == trusted {
            return Ok(());
        }
        let proof = self
            .client
            .consistency(&self.ledger, trusted.tree_size, next.tree_size)
            .map_err(err)?;
        client::verify_advance(trusted, next, &proof, &self.pk).map_err(verify_failed)?;
        self.cache.store(next).map_err(err)
    }
}

fn read_requests(args: &AppendArgs) -> Result<Vec<AppendRequest>, Failure> {
    if let Some(h) = &args.entry {
        let bytes = hex::decode(h).map_err(|_| err("--entry must be hex"))?;
        return Ok(vec![AppendRequest::Entry(bytes)]);
    }
    if let Some(t) = &args.text {
        return Ok(vec![AppendRequest::Entry(t.as_bytes().to_vec())]);
    }
    let parse_line = |line: &str| -> Result<AppendRequest, Failure> {
        serde_json::from_str::<AppendRequest>(line)
            .or_else(|_| serde_json::from_str::<EditOp>(line).map(AppendRequest::Op))
            .map_err(|e| err(format!("cannot parse {line:?}: {e}")))
    };
    if let Some(op) = &args.op {
        return Ok(vec![parse_line(op)?]);
    }
    if let Some(path) = &args.op_file {
        let text = std::fs::read_to_string(path).map_err(err)?;
        return text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(parse_line)
            .collect();
    }
    Err(err("one of --entry, --text, --op or --op-file is required"))
}

fn cmd_append(cli: &Cli, args: &AppendArgs) -> CmdResult {
    let cfg = load_config(cli)?;
    let requests = read_requests(args)?;
    let t = target(
        &cfg,
        &args.target,
        Some(args.token.clone().unwrap_or_else(|| cfg.token.clone())),
    )?;
    let mut trusted = t.trusted()?;
    let mut accepted = Vec::new();
    for req in &requests {
        let resp = t.client.append(&t.ledger, req).map_err(err)?;
        let checked = if resp.consistency.old_size == trusted.tree_size {
            client::verify_append(Some(&trusted), &resp, &t.pk).map_err(verify_failed)
        } else {
            client::verify_append(None, &resp, &t.pk)
                .map_err(verify_failed)
                .and_then(|_| t.advance(&trusted, &resp.checkpoint))
        };
        if let Err(e) = checked {
            for cp in &accepted {
                print_checkpoint(cli, cp, "verified");
            }
            return Err(e);
        }
        t.cache.store(&resp.checkpoint).map_err(err)?;
        trusted = resp.checkpoint.clone();
        accepted.push(resp.checkpoint);
    }
    for cp in &accepted {
        print_checkpoint(cli, cp, "verified");
    }
    Ok(ExitCode::SUCCESS)
}

fn print_checkpoint(cli: &Cli, cp: &SignedCheckpoint, label: &str) {
    print(cli, cp, || {
        format!("{label} {} {}", cp.ledger_id, client::describe(cp))
    });
}

/// Latest record for `ledger` in a journal read directly from trusted storage.
fn latest_from(source: &JournalSource, ledger: &str) -> Result<Option<HistoryRecord>, Failure> {
    let fetched = source.fetch(ledger).map_err(err)?;
    Ok(fetched
        .items
        .iter()
        .filter_map(|i| match i {
            Item::Value(v) => serde_json::from_value::<Envelope>(v.clone())
                .ok()
                .map(|e| e.record),
            Item::Undecodable => None,
        })
        .rfind(|r| r.checkpoint.ledger_id.as_str() == ledger))
}

#[derive(Serialize)]
struct QueryOutput<'a> {
    verified: bool,
    index: Option<u64>,
    #[serde(with = "hex::serde")]
    key: Vec<u8>,
    value: Option<String>,
    checkpoint: &'a SignedCheckpoint,
}

fn cmd_query(cli: &Cli, args: &QueryArgs) -> CmdResult {
    let cfg = load_config(cli)?;
    let t = target(&cfg, &args.target, None)?;
    let trusted = t.cache.load(&t.ledger).map_err(err)?;
    let key = match (&args.key, &args.key_text) {
        (Some(h), _) => Some(hex::decode(h).map_err(|_| err("--key must be hex"))?),
        (None, Some(s)) => Some(s.as_bytes().to_vec()),
        _ => None,
    };
    let (checkpoint, out_value) = match (args.index, key.clone()) {
        (Some(index), _) => {
            let resp = t.client.query(&t.ledger, index).map_err(err)?;
            client::verify_query(&resp, index, &t.pk).map_err(verify_failed)?;
            (resp.checkpoint, Some(hex::encode(&resp.entry)))
        }
        (None, Some(key)) => {
            let resp = t.client.query_key(&t.ledger, &key).map_err(err)?;
            client::verify_map_query(&resp, &key, &t.pk).map_err(verify_failed)?;
            (resp.checkpoint, resp.value.map(hex::encode))
        }
        (None, None) => return Err(err("one of --index, --key or --key-text is required")),
    };

    let journal_latest = match &args.journal {
        Some(src) => latest_from(&JournalSource::parse(src), &t.ledger)?,
        None => t
            .client
            .journal_latest(&t.ledger, false)
            .map_err(err)?
            .map(|e| e.record),
    };
    client::cross_check(&checkpoint, journal_latest.as_ref()).map_err(verify_failed)?;
    if let Some(prev) = &trusted {
        t.advance(prev, &checkpoint)?;
    }

    let out = QueryOutput {
        verified: true,
        index: args.index,
        key: key.unwrap_or_default(),
        value: out_value,
        checkpoint: &checkpoint,
    };
    print(cli, &out, || {
        let what = match args.index {
            Some(i) => format!("entry {i}"),
            None => format!("key {}", hex::encode(&out.key)),
        };
        let value = out.value.as_deref().unwrap_or("(absent)");
        format!(
            "{what} = {value}\nverified against {}",
            client::describe(&checkpoint)
        )
    });
    Ok(ExitCode::SUCCESS)
}

fn cmd_checkpoint(cli: &Cli, args: &ServerArgs) -> CmdResult {
    let cfg = load_config(cli)?;
    let t = target(&cfg, args, None)?;
    let cp = t.client.checkpoint(&t.ledger).map_err(err)?;
    if !cp.verify(&t.pk) {
        return Err(verify_failed(VerifyError::BadSignature));
    }
    if let Some(prev) = t.cache.load(&t.ledger).map_err(err)? {
        t.advance(&prev, &cp)?;
    }
    print_checkpoint(cli, &cp, "checkpoint");
    Ok(ExitCode::SUCCESS)
}

fn overall_code(o: Overall) -> ExitCode {
    match o {
        Overall::Consistent => ExitCode::SUCCESS,
        Overall::Inconsistent => ExitCode::from(2),
        Overall::Forked => ExitCode::from(3),
    }
}

fn audit_table(o: &AuditOutcome) -> String {
    let r = &o.report;
    let mut s = format!(
        "ledger {}: {} records, {} links, {} bytes read\n",
        r.ledger_id,
        r.records_checked,
        r.link_results.len(),
        o.bytes_read
    );
    if let Some(v) = r.first_record {
        s.push_str(&format!("  first record   {v}\n"));
    }
    let ver = |v: Option<u64>| v.map_or("?".to_owned(), |n| n.to_string());
    for l in &r.link_results {
        s.push_str(&format!(
            "  {:>6} -> {:<6} {}\n",
            ver(l.from_version),
            ver(l.to_version),
            l.verdict
        ));
    }
    s.push_str(&format!(
        "privacy attested: {}\noverall: {}",
        if o.privacy_attested { "yes" } else { "NO" },
        overall_label(o.overall())
    ));
    s
}

fn overall_label(o: Overall) -> &'static str {
    match o {
        Overall::Consistent => "CONSISTENT",
        Overall::Inconsistent => "INCONSISTENT",
        Overall::Forked => "FORKED",
    }
}

fn pubkey_for_audit(path: Option<&Path>, cfg: &Config) -> Result<PublicKey, Failure> {
    let path = path.map_or_else(|| keys::public_path(&cfg.key_file()), Path::to_path_buf);
    keys::load_public_key(&path).map_err(err)
}

fn cmd_audit(cli: &Cli, cmd: &AuditCmd) -> CmdResult {
    let cfg = load_config(cli)?;
    if let Some(AuditSub::Cross {
        journal_a,
        journal_b,
        ledger,
        pubkey,
    }) = &cmd.cross
    {
        let pk = keys::load_public_key(pubkey).map_err(err)?;
        let out: CrossOutcome = auditor::audit_cross(
            &JournalSource::parse(journal_a),
            &JournalSource::parse(journal_b),
            ledger,
            &pk,
        )
        .map_err(err)?;
        print(cli, &out, || {
            let mut s = format!(
                "journal A\n{}\njournal B\n{}\n",
                audit_table(&out.a),
                audit_table(&out.b)
            );
            match &out.fork_evidence {
                Some(e) => s.push_str(&format!(
                    "FORK at version {}\n  A: {}\n  B: {}\noverall: FORKED",
                    e.version,
                    client::describe(&e.a),
                    client::describe(&e.b)
                )),
                None => s.push_str(&format!(
                    "no fork found\noverall: {}",
                    overall_label(out.overall)
                )),
            }
            s
        });
        return Ok(overall_code(out.overall));
    }

    let args = &cmd.args;
    let journal = args
        .journal
        .clone()
        .unwrap_or_else(|| cfg.journal_path().display().to_string());
    let pk = pubkey_for_audit(args.pubkey.as_deref(), &cfg)?;
    let out = auditor::audit(&JournalSource::parse(&journal), &args.ledger, &pk).map_err(err)?;
    print(cli, &out, || audit_table(&out));
    Ok(overall_code(out.overall()))
}

fn cmd_scenario(cli: &Cli, args: &ScenarioArgs) -> CmdResult {
    let (dir, cleanup) = match &args.work_dir {
        Some(d) => (d.clone(), false),
        None => (
            std::env::temp_dir().join(format!(
                "eads-scenario-{}-{}-{}",
                args.name,
                args.seed,
                std::process::id()
            )),
            true,
        ),
    };
    if dir.exists() && std::fs::read_dir(&dir).map_err(err)?.next().is_some() {
        return Err(err(format!("work dir {} is not empty", dir.display())));
    }
    let report = scenario::run(args.name, args.seed, args.ops, &dir);
    if cleanup {
        let _ = std::fs::remove_dir_all(&dir);
    }
    let report = report.map_err(err)?;
    print(cli, &report, || report.to_string());
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_keygen(cli: &Cli, out: &Path) -> CmdResult {
    let kp = keys::keygen(out).map_err(err)?;
    let pub_path = keys::public_path(out);
    print(
        cli,
        &serde_json::json!({ "secret": out, "public": pub_path, "public_key": kp.public().to_hex() }),
        || {
            format!(
                "wrote {} and {}\npublic key {}",
                out.display(),
                pub_path.display(),
                kp.public().to_hex()
            )
        },
    );
    Ok(ExitCode::SUCCESS)
}
