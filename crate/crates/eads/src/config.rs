//! Server configuration: a TOML file with `EADS_*` environment overrides.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "eads-data"
//! token = "change-me"
//! checkpoint_every_n_edits = 1
//!
//! [[ledgers]]
//! id = "main"
//! kind = "log"
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use eads_core::LedgerId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::server::LedgerKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerConfig {
    pub id: LedgerId,
    #[serde(default)]
    pub kind: LedgerKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/journal.jsonl`.
    pub journal_path: Option<PathBuf>,
    pub token: String,
    pub checkpoint_every_n_edits: u64,
    /// Defaults to `<data_dir>/server.key`; generated on first start.
    pub key_file: Option<PathBuf>,
    pub admin_enabled: bool,
    /// fsync the journal on every append.
    pub sync: bool,
    pub ledgers: Vec<LedgerConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("eads-data"),
            journal_path: None,
            token: "change-me".into(),
            checkpoint_every_n_edits: 1,
            key_file: None,
            admin_enabled: false,
            sync: true,
            ledgers: vec![LedgerConfig {
                id: LedgerId::new("main").expect("valid id"),
                kind: LedgerKind::Log,
            }],
        }
    }
}

impl Config {
    /// Reads `path` (or the defaults when `None`), applies the process
    /// environment and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Config::default(),
        };
        let cfg = base.with_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Applies `EADS_<FIELD>` overrides for the scalar fields.
    pub fn with_env(mut self, get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, v: String) -> Result<T, ConfigError> {
            v.parse()
                .map_err(|_| ConfigError::Invalid(format!("{key}={v:?} cannot be parsed")))
        }
        if let Some(v) = get("EADS_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("EADS_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("EADS_JOURNAL_PATH") {
            self.journal_path = Some(v.into());
        }
        if let Some(v) = get("EADS_TOKEN") {
            self.token = v;
        }
        if let Some(v) = get("EADS_CHECKPOINT_EVERY_N_EDITS") {
            self.checkpoint_every_n_edits = parse("EADS_CHECKPOINT_EVERY_N_EDITS", v)?;
        }
        if let Some(v) = get("EADS_KEY_FILE") {
            self.key_file = Some(v.into());
        }
        if let Some(v) = get("EADS_ADMIN_ENABLED") {
            self.admin_enabled = parse("EADS_ADMIN_ENABLED", v)?;
        }
        if let Some(v) = get("EADS_SYNC") {
            self.sync = parse("EADS_SYNC", v)?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen.parse::<SocketAddr>().map_err(|_| {
            ConfigError::Invalid(format!("listen address {:?} is not host:port", self.listen))
        })?;
        if self.token.is_empty() {
            return Err(ConfigError::Invalid("token must not be empty".into()));
        }
        if self.checkpoint_every_n_edits == 0 {
            return Err(ConfigError::Invalid(
                "checkpoint_every_n_edits must be at least 1".into(),
            ));
        }
        if self.ledgers.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one ledger is required".into(),
            ));
        }
        let mut ids: Vec<&str> = self.ledgers.iter().map(|l| l.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("duplicate ledger id".into()));
        }
        Ok(())
    }

    pub fn journal_path(&self) -> PathBuf {
        self.journal_path
            .clone()
            .unwrap_or_else(|| self.data_dir.join("journal.jsonl"))
    }

    pub fn key_file(&self) -> PathBuf {
        self.key_file
            .clone()
            .unwrap_or_else(|| self.data_dir.join("server.key"))
    }

    pub fn server_url(&self) -> String {
        format!("http://{}", self.listen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.journal_path(), PathBuf::from("eads-data/journal.jsonl"));
        assert_eq!(cfg.ledgers[0].id.as_str(), "main");
    }

    #[test]
    fn parses_toml() {
        let cfg = Config::from_toml(
            r#"
            listen = "0.0.0.0:9000"
            token = "t"
            checkpoint_every_n_edits = 4
            [[ledgers]]
            id = "dir"
            kind = "map"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.checkpoint_every_n_edits, 4);
        assert_eq!(cfg.ledgers[0].kind, LedgerKind::Map);
        assert!(cfg.sync);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Config::from_toml("nonsense = 1"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            Config::from_toml("[[ledgers]]\nid = \"bad id\""),
            Err(ConfigError::Parse(_))
        ));
        let cfg = Config {
            checkpoint_every_n_edits: 0,
            ..Config::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = Config {
            listen: "nowhere".into(),
            ..Config::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_overrides() {
        let cfg = Config::default()
            .with_env(|k| match k {
                "EADS_TOKEN" => Some("secret".into()),
                "EADS_CHECKPOINT_EVERY_N_EDITS" => Some("3".into()),
                "EADS_ADMIN_ENABLED" => Some("true".into()),
                _ => None,
            })
            .unwrap();
        assert_eq!(cfg.token, "secret");
        assert_eq!(cfg.checkpoint_every_n_edits, 3);
        assert!(cfg.admin_enabled);
        assert!(Config::default()
            .with_env(|k| (k == "EADS_SYNC").then(|| "maybe".into()))
            .is_err());
    }
}
