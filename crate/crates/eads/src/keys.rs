//! Key files. The secret file holds the 32-byte Ed25519 seed as lowercase
//! hex; the public file (`<path>.pub`) holds the verification key.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use eads_core::{KeyPair, PublicKey};
use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("cannot access key file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("key file {0} does not hold 64 lowercase hex characters")]
    Format(PathBuf),
}

pub fn public_path(secret: &Path) -> PathBuf {
    let mut s = secret.as_os_str().to_owned();
    s.push(".pub");
    PathBuf::from(s)
}

/// Generates a fresh key pair and writes both files.
pub fn keygen(path: &Path) -> Result<KeyPair, KeyError> {
    let mut seed = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut seed);
    let kp = KeyPair::from_seed(seed);
    write_keypair(path, &kp)?;
    Ok(kp)
}

pub fn write_keypair(path: &Path, kp: &KeyPair) -> Result<(), KeyError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| KeyError::Io { path: p, source }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_secret(path, &format!("{}\n", hex::encode(kp.seed()))).map_err(io_err(path))?;
    let pub_path = public_path(path);
    fs::write(&pub_path, format!("{}\n", kp.public().to_hex())).map_err(io_err(&pub_path))
}

#[cfg(unix)]
fn write_secret(path: &Path, contents: &str) -> io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.write_all(contents.as_bytes())
}

#[cfg(not(unix))]
fn write_secret(path: &Path, contents: &str) -> io::Result<()> {
    fs::write(path, contents)
}

fn read_hex32(path: &Path) -> Result<[u8; 32], KeyError> {
    let text = fs::read_to_string(path).map_err(|source| KeyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    PublicKey::from_hex(text.trim())
        .map(|k| k.0)
        .map_err(|_| KeyError::Format(path.to_path_buf()))
}

pub fn load_keypair(path: &Path) -> Result<KeyPair, KeyError> {
    read_hex32(path).map(KeyPair::from_seed)
}

pub fn load_public_key(path: &Path) -> Result<PublicKey, KeyError> {
    read_hex32(path).map(PublicKey)
}
