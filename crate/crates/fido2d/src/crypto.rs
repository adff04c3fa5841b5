//! Signature and nonce primitives.
//!
//! This is the concrete stand-in for the symbolic "perfect cryptography"
//! assumption: signatures are unforgeable without the secret key, and fresh
//! nonces never repeat within a run. Everything is deterministic given a
//! seed so whole simulation runs replay bit-exactly.

use std::collections::BTreeSet;
use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

/// Byte length of every challenge, link nonce and key seed.
pub const NONCE_LEN: usize = 32;

/// Signature algorithm recorded in run metadata.
pub const SIGNATURE_ALGORITHM: &str = "ed25519";

/// Deterministic random source driving a simulation run.
pub type SimRng = rand_chacha::ChaCha20Rng;

/// Seed a run-level random source from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derive an independent stream for a numbered sub-run (used by exploration
/// workers so results do not depend on thread interleaving).
pub fn rng_for_run(seed: u64, run_index: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(run_index.wrapping_add(1));
    rng
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("seed must be exactly {NONCE_LEN} bytes, got {0}")]
    BadSeedLength(usize),
    #[error("nonce registry collision: the random source is broken")]
    NonceCollision,
}

/// Verification key bytes. Adversarial inputs may have any length;
/// [`verify`] simply returns `false` for anything malformed.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub Vec<u8>);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(4);
        write!(
            f,
            "PublicKey({}.., {}B)",
            hex::encode(&self.0[..n]),
            self.0.len()
        )
    }
}

/// Signature bytes. Like [`PublicKey`], tolerant of garbage.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature(pub Vec<u8>);

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.len().min(4);
        write!(
            f,
            "Signature({}.., {}B)",
            hex::encode(&self.0[..n]),
            self.0.len()
        )
    }
}

/// Opaque signing key material. Never inspected outside [`sign`];
/// leaks to the adversary only through an explicit device compromise.
#[derive(Clone)]
pub struct SecretKey(ed25519_dalek::SigningKey);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(<redacted>)")
    }
}

impl PartialEq for SecretKey {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bytes() == other.0.to_bytes()
    }
}
impl Eq for SecretKey {}

/// A device credential: signing key plus its verification key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

/// Fixed-length random value used for challenges and link nonces.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn from_hex(text: &str) -> Option<Nonce> {
        let bytes = hex::decode(text).ok()?;
        let arr: [u8; NONCE_LEN] = bytes.try_into().ok()?;
        Some(Nonce(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({}..)", hex::encode(&self.0[..4]))
    }
}

/// Deterministically derive a key pair from a 32-byte seed.
/// Same seed, same keys; distinct seeds, distinct public keys.
pub fn keygen(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: &[u8; NONCE_LEN] = seed
        .try_into()
        .map_err(|_| CryptoError::BadSeedLength(seed.len()))?;
    let signing = ed25519_dalek::SigningKey::from_bytes(seed);
    let public = PublicKey(signing.verifying_key().to_bytes().to_vec());
    Ok(KeyPair {
        secret: SecretKey(signing),
        public,
    })
}

/// Convenience: draw a fresh key pair from the run's random source.
pub fn keygen_from_rng(rng: &mut SimRng) -> KeyPair {
    let mut seed = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut seed);
    keygen(&seed).expect("seed is the declared length")
}

/// Sign a message. Total over byte strings, including the empty one.
pub fn sign(secret: &SecretKey, message: &[u8]) -> Signature {
    Signature(secret.0.sign(message).to_bytes().to_vec())
}

/// Check a signature. Total and non-throwing: adversarial bytes are
/// expected input, not an error, so malformed keys or signatures are
/// simply rejected.
pub fn verify(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key_bytes) = <[u8; 32]>::try_from(public.0.as_slice()) else {
        return false;
    };
    let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&key_bytes) else {
        return false;
    };
    let Ok(sig_bytes) = <[u8; 64]>::try_from(signature.0.as_slice()) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig_bytes);
    key.verify(message, &sig).is_ok()
}

/// Tracks every nonce drawn in a run; a collision means the random source
/// discipline is broken and the run must abort.
#[derive(Debug, Default, Clone)]
pub struct NonceRegistry {
    seen: BTreeSet<Nonce>,
}

impl NonceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn contains(&self, nonce: &Nonce) -> bool {
        self.seen.contains(nonce)
    }
}

/// Draw a fresh nonce and register it as unique within the run.
pub fn fresh_nonce(rng: &mut SimRng, registry: &mut NonceRegistry) -> Result<Nonce, CryptoError> {
    let mut value = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut value);
    let nonce = Nonce(value);
    if !registry.seen.insert(nonce) {
        return Err(CryptoError::NonceCollision);
    }
    Ok(nonce)
}
