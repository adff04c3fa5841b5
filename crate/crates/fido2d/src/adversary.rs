//! Dolev-Yao network and attacker.
//!
//! Every message sent over the network enters the adversary's knowledge.
//! Non-authentic messages (device to server) are fully attacker-controlled:
//! they can be modified, dropped, injected and replayed with forged origins.
//! Authentic messages (server to device) can be read, delayed, dropped and
//! replayed verbatim, but origin attribution and content cannot be forged.
//!
//! Derivability is operational rather than a symbolic closure: the
//! adversary composes messages from observed parts and signs with leaked
//! keys; composing a signature under a key it does not hold is refused.
//! With real signatures underneath, the Dolev-Yao restriction — no forgery
//! without the key — is the theorem, not the mechanism.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::crypto::{sign, Nonce, SecretKey};
use crate::devices::Role;
use crate::messages::{signed_payload, Assertion, AuthenticatorData, Message};

/// Network addresses. Device endpoints are scoped to the account they
/// serve, mirroring one device pair per account.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Endpoint {
    Server(String),
    DeviceB { username: String, server_id: String },
    DeviceA { username: String, server_id: String },
    Phisher(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Server(id) => write!(f, "server:{id}"),
            Endpoint::DeviceB {
                username,
                server_id,
            } => write!(f, "device-b:{username}@{server_id}"),
            Endpoint::DeviceA {
                username,
                server_id,
            } => write!(f, "device-a:{username}@{server_id}"),
            Endpoint::Phisher(id) => write!(f, "phisher:{id}"),
        }
    }
}

impl Endpoint {
    pub fn parse(text: &str) -> Option<Endpoint> {
        let (kind, rest) = text.split_once(':')?;
        match kind {
            "server" => Some(Endpoint::Server(rest.to_string())),
            "phisher" => Some(Endpoint::Phisher(rest.to_string())),
            "device-b" | "device-a" => {
                let (username, server_id) = rest.split_once('@')?;
                if username.is_empty() || server_id.is_empty() {
                    return None;
                }
                let (username, server_id) = (username.to_string(), server_id.to_string());
                Some(if kind == "device-b" {
                    Endpoint::DeviceB {
                        username,
                        server_id,
                    }
                } else {
                    Endpoint::DeviceA {
                        username,
                        server_id,
                    }
                })
            }
            _ => None,
        }
    }
}

/// One message in flight. `authentic` marks the unilateral authentic
/// channel from an honest server to a device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    pub origin: Endpoint,
    pub dest: Endpoint,
    pub authentic: bool,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetworkError {
    #[error("no in-flight message at index {0}")]
    NoSuchMessage(usize),
    #[error("authentic channel: message content cannot be altered")]
    AuthenticChannel,
}

/// Ordered multiset of in-flight messages. Delivery order is chosen by the
/// scheduler, which is what models the attacker's control of timing.
#[derive(Debug, Default, Clone)]
pub struct Network {
    in_flight: Vec<InFlight>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight.is_empty()
    }

    pub fn push(&mut self, msg: InFlight) {
        self.in_flight.push(msg);
    }

    pub fn get(&self, index: usize) -> Result<&InFlight, NetworkError> {
        self.in_flight
            .get(index)
            .ok_or(NetworkError::NoSuchMessage(index))
    }

    pub fn take(&mut self, index: usize) -> Result<InFlight, NetworkError> {
        if index >= self.in_flight.len() {
            return Err(NetworkError::NoSuchMessage(index));
        }
        Ok(self.in_flight.remove(index))
    }

    /// Replace the bytes of a non-authentic in-flight message.
    pub fn modify(&mut self, index: usize, bytes: Vec<u8>) -> Result<(), NetworkError> {
        let msg = self
            .in_flight
            .get_mut(index)
            .ok_or(NetworkError::NoSuchMessage(index))?;
        if msg.authentic {
            return Err(NetworkError::AuthenticChannel);
        }
        msg.bytes = bytes;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &InFlight> {
        self.in_flight.iter()
    }
}

/// Byte-patch descriptors for `modify` steps in scenario files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Patch {
    /// Decode, replace the transaction data field, re-encode.
    SetData(String),
    /// Decode, replace the username field, re-encode.
    SetUsername(String),
    /// Flip one bit of the raw bytes.
    FlipByte(usize),
    /// Truncate the raw bytes.
    Truncate(usize),
    /// Replace the raw bytes entirely.
    SetBytes(Vec<u8>),
}

impl fmt::Display for Patch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Patch::SetData(s) => write!(f, "set-data:{}", crate::harness::quote(s)),
            Patch::SetUsername(s) => write!(f, "set-username:{}", crate::harness::quote(s)),
            Patch::FlipByte(n) => write!(f, "flip-byte:{n}"),
            Patch::Truncate(n) => write!(f, "truncate:{n}"),
            Patch::SetBytes(b) => write!(f, "set-bytes:{}", hex::encode(b)),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("secret key for {0} device {1:?} is not in the adversary's knowledge")]
    KeyNotKnown(String, Role),
    #[error("observed message {0} does not exist")]
    NoSuchObservation(usize),
    #[error("observed message {0} carries no challenge")]
    NoChallenge(usize),
    #[error("patch not applicable: {0}")]
    PatchFailed(&'static str),
}

/// A message the adversary has seen on the network, with its decoded form
/// when the bytes are well-formed.
#[derive(Debug, Clone)]
pub struct Observed {
    pub origin: Endpoint,
    pub dest: Endpoint,
    pub authentic: bool,
    pub bytes: Vec<u8>,
    pub decoded: Option<Message>,
}

/// Attacker state: observed traffic, leaked device keys and the counters it
/// uses when forging assertions.
#[derive(Debug, Default, Clone)]
pub struct Adversary {
    observed: Vec<Observed>,
    knowledge: BTreeSet<Vec<u8>>,
    leaked_keys: BTreeMap<(String, String, Role), SecretKey>,
    /// Highest counter the adversary has used per leaked credential, so
    /// consecutive forgeries keep increasing.
    shadow_counters: BTreeMap<(String, String, Role), u32>,
    /// Public identities leaked during registration.
    known_public: BTreeSet<Vec<u8>>,
}

impl Adversary {
    pub fn new() -> Self {
        Self::default()
    }

    /// The attacker obtains knowledge of every message sent over the
    /// network, authentic channels included: authenticity is not secrecy.
    pub fn observe(&mut self, msg: &InFlight) -> usize {
        self.knowledge.insert(msg.bytes.clone());
        self.observed.push(Observed {
            origin: msg.origin.clone(),
            dest: msg.dest.clone(),
            authentic: msg.authentic,
            bytes: msg.bytes.clone(),
            decoded: Message::decode(&msg.bytes).ok(),
        });
        self.observed.len() - 1
    }

    pub fn observed(&self) -> &[Observed] {
        &self.observed
    }

    pub fn knowledge_len(&self) -> usize {
        self.knowledge.len()
    }

    pub fn knows_bytes(&self, bytes: &[u8]) -> bool {
        self.knowledge.contains(bytes)
    }

    /// Record a public identity leaked at registration time.
    pub fn learn_public(&mut self, bytes: &[u8]) {
        self.known_public.insert(bytes.to_vec());
        self.knowledge.insert(bytes.to_vec());
    }

    /// Record bytes the adversary composed itself (patched messages).
    pub fn note_composed(&mut self, bytes: &[u8]) {
        self.knowledge.insert(bytes.to_vec());
    }

    /// Receive a compromised device's secret key.
    pub fn leak_key(
        &mut self,
        username: &str,
        server_id: &str,
        role: Role,
        secret: SecretKey,
        counter: u32,
    ) {
        let key = (username.to_string(), server_id.to_string(), role);
        self.shadow_counters.insert(key.clone(), counter);
        self.leaked_keys.insert(key, secret);
    }

    pub fn has_key(&self, username: &str, server_id: &str, role: Role) -> bool {
        self.leaked_keys
            .contains_key(&(username.to_string(), server_id.to_string(), role))
    }

    pub fn leaked_key_ids(&self) -> Vec<(String, String, Role)> {
        self.leaked_keys.keys().cloned().collect()
    }

    /// Extract the challenge of an observed message, if it carries one.
    pub fn challenge_from_observed(&self, index: usize) -> Result<Nonce, AdversaryError> {
        let obs = self
            .observed
            .get(index)
            .ok_or(AdversaryError::NoSuchObservation(index))?;
        let challenge = match &obs.decoded {
            Some(Message::RegistrationOptions(o)) => Some(o.challenge),
            Some(Message::TransactionOptions(o)) => Some(o.challenge),
            Some(Message::TransactionChallenge { options, .. }) => Some(options.challenge),
            Some(Message::TransactionConfirm { options, .. }) => Some(options.challenge),
            Some(Message::AssertionResponse { challenge, .. }) => Some(*challenge),
            Some(Message::LinkNonce(n)) => Some(n.value),
            Some(Message::LinkRequest { nonce }) => Some(*nonce),
            _ => None,
        };
        challenge.ok_or(AdversaryError::NoChallenge(index))
    }

    /// Indices of observed messages that carry a challenge value.
    pub fn observed_challenge_indices(&self) -> Vec<usize> {
        (0..self.observed.len())
            .filter(|i| self.challenge_from_observed(*i).is_ok())
            .collect()
    }

    /// Next counter to use when forging with a leaked credential: strictly
    /// above both the live device counter and any previous forgery.
    pub fn next_counter(&mut self, username: &str, server_id: &str, role: Role, live: u32) -> u32 {
        let key = (username.to_string(), server_id.to_string(), role);
        let shadow = self.shadow_counters.get(&key).copied().unwrap_or(0);
        let next = shadow.max(live) + 1;
        self.shadow_counters.insert(key, next);
        next
    }

    /// Forge an assertion with a leaked key. Refused when the key is not in
    /// the adversary's knowledge: signatures under unleaked keys cannot be
    /// derived.
    #[allow(clippy::too_many_arguments)]
    pub fn compose_assertion(
        &self,
        username: &str,
        server_id: &str,
        role: Role,
        challenge: &Nonce,
        counter: u32,
        user_verified: bool,
        extension_data: Option<String>,
    ) -> Result<Assertion, AdversaryError> {
        let secret = self
            .leaked_keys
            .get(&(username.to_string(), server_id.to_string(), role))
            .ok_or_else(|| AdversaryError::KeyNotKnown(format!("{username}@{server_id}"), role))?;
        let auth_data = AuthenticatorData {
            server_id: server_id.to_string(),
            counter,
            user_verified,
            extension_data,
        };
        let signature = sign(secret, &signed_payload(&auth_data, challenge));
        Ok(Assertion {
            auth_data,
            signature,
        })
    }

    /// Apply a byte-patch to non-authentic message bytes.
    pub fn patch_bytes(&self, bytes: &[u8], patch: &Patch) -> Result<Vec<u8>, AdversaryError> {
        match patch {
            Patch::SetBytes(b) => Ok(b.clone()),
            Patch::Truncate(n) => Ok(bytes[..(*n).min(bytes.len())].to_vec()),
            Patch::FlipByte(offset) => {
                if *offset >= bytes.len() {
                    return Err(AdversaryError::PatchFailed("flip offset out of range"));
                }
                let mut out = bytes.to_vec();
                out[*offset] ^= 0x01;
                Ok(out)
            }
            Patch::SetData(data) => {
                let msg = Message::decode(bytes)
                    .map_err(|_| AdversaryError::PatchFailed("bytes do not decode"))?;
                let patched = match msg {
                    Message::TransactionRequest { username, .. } => Message::TransactionRequest {
                        username,
                        data: data.clone(),
                    },
                    Message::TransactionChallenge {
                        username, options, ..
                    } => Message::TransactionChallenge {
                        username,
                        data: data.clone(),
                        options,
                    },
                    _ => return Err(AdversaryError::PatchFailed("message has no data field")),
                };
                patched
                    .encode()
                    .map_err(|_| AdversaryError::PatchFailed("patched message malformed"))
            }
            Patch::SetUsername(name) => {
                let msg = Message::decode(bytes)
                    .map_err(|_| AdversaryError::PatchFailed("bytes do not decode"))?;
                let patched = match msg {
                    Message::TransactionRequest { data, .. } => Message::TransactionRequest {
                        username: name.clone(),
                        data,
                    },
                    Message::AssertionResponse {
                        challenge,
                        assertion,
                        ..
                    } => Message::AssertionResponse {
                        username: name.clone(),
                        challenge,
                        assertion,
                    },
                    _ => return Err(AdversaryError::PatchFailed("message has no username field")),
                };
                patched
                    .encode()
                    .map_err(|_| AdversaryError::PatchFailed("patched message malformed"))
            }
        }
    }
}
