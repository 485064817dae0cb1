//! Checkpoint signatures.
//!
//! Signing and verification sit behind the [`Signer`] and [`Verifier`]
//! traits; [`KeyPair`] and [`PublicKey`] provide Ed25519.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use ed25519_dalek::{Signer as _, SigningKey, VerifyingKey};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::hash::{decode_lower_hex, decode_lower_hex_into, HexError};

/// Opaque signature bytes. Ed25519 signatures are 64 bytes, but the length
/// is not fixed here so other schemes can be plugged in.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl Signature {
    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        decode_lower_hex(s).map(Signature)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct SigVisitor;

        impl Visitor<'_> for SigVisitor {
            type Value = Signature;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("lowercase hex signature")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Signature, E> {
                Signature::from_hex(v).map_err(E::custom)
            }
        }

        deserializer.deserialize_str(SigVisitor)
    }
}

pub trait Signer {
    fn sign(&self, message: &[u8]) -> Signature;
}

pub trait Verifier {
    /// Never panics; malformed keys or signatures verify as `false`.
    fn verify(&self, message: &[u8], signature: &Signature) -> bool;
}

impl<T: Signer + ?Sized> Signer for &T {
    fn sign(&self, message: &[u8]) -> Signature {
        (**self).sign(message)
    }
}

impl<T: Verifier + ?Sized> Verifier for &T {
    fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        (**self).verify(message, signature)
    }
}

/// An Ed25519 verification key as raw bytes.
///
/// The bytes are not validated as a curve point until verification, so a
/// malformed key read from disk results in failed verification rather than
/// an error at load time.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        let mut out = [0u8; 32];
        decode_lower_hex_into(s, &mut out)?;
        Ok(PublicKey(out))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl Verifier for PublicKey {
    fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        verify_signature(self, message, signature)
    }
}

/// Ed25519 signing key plus its public half.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public())
            .finish_non_exhaustive()
    }
}

impl Signer for KeyPair {
    fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes().to_vec())
    }
}

pub fn sign(secret: &KeyPair, message: &[u8]) -> Signature {
    secret.sign(message)
}

/// Strict Ed25519 verification (rejects small-order keys and non-canonical
/// scalars, so signatures are not malleable).
pub fn verify_signature(public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let Ok(bytes) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&bytes);
    key.verify_strict(message, &sig).is_ok()
}
