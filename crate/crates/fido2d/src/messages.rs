//! Canonical binary encoding of every protocol message.
//!
//! Signatures must bind to unambiguous byte strings and the adversary must
//! be able to splice real bytes, so the wire format is fixed-order binary
//! rather than textual: one leading type tag byte per message kind, 4-byte
//! big-endian length prefixes on every variable-length field, one byte for
//! booleans and option flags (only 0x00/0x01 accepted). `encode` is
//! injective over well-formed messages and `decode` is its exact inverse;
//! anything outside the image yields a malformed error carrying the
//! offending offset, never a crash.
//!
//! The full field tables are documented in `docs/wire-format.md`.

use std::fmt;

use thiserror::Error;

use crate::crypto::{Nonce, PublicKey, Signature, NONCE_LEN};

/// Registration ceremony options sent by the server.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistrationOptions {
    pub challenge: Nonce,
    pub server_id: String,
    pub username: String,
}

/// Transaction ceremony options. `transaction_data` is present only in
/// options destined for the additional device A, which must display it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransactionOptions {
    pub challenge: Nonce,
    pub server_id: String,
    pub transaction_data: Option<String>,
}

/// The data covered by a device signature, alongside the challenge.
/// `extension_data` carries the transaction text signed by device A;
/// device B assertions omit it entirely.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthenticatorData {
    pub server_id: String,
    pub counter: u32,
    pub user_verified: bool,
    pub extension_data: Option<String>,
}

/// A device's signed response: authenticator data plus a signature over
/// `encode(auth_data) || challenge`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assertion {
    pub auth_data: AuthenticatorData,
    pub signature: Signature,
}

/// Single-use nonce linking the two registration ceremonies of an account.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkNonce {
    pub value: Nonce,
    pub username: String,
}

/// Every message that can appear on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    RegistrationOptions(RegistrationOptions),
    TransactionOptions(TransactionOptions),
    AuthenticatorData(AuthenticatorData),
    Assertion(Assertion),
    LinkNonce(LinkNonce),
    /// Device B asks to register a new account.
    RegisterRequest {
        username: String,
    },
    /// Device B submits its new credential and attestation.
    RegisterFinish {
        username: String,
        public_key: PublicKey,
        attestation: Assertion,
    },
    /// Device A asks for the account bound to a link nonce.
    LinkRequest {
        nonce: Nonce,
    },
    /// Device A submits its credential, attested over the link nonce.
    LinkFinish {
        nonce: Nonce,
        public_key: PublicKey,
        attestation: Assertion,
    },
    /// Device B starts a transaction with data `data`.
    TransactionRequest {
        username: String,
        data: String,
    },
    /// Server response to a transaction request. Echoes the request's
    /// username and data so the requesting device can pair the challenge
    /// with the transaction it actually initiated.
    TransactionChallenge {
        username: String,
        data: String,
        options: TransactionOptions,
    },
    /// Server push to device A carrying the second challenge and the
    /// transaction text to display.
    TransactionConfirm {
        username: String,
        options: TransactionOptions,
    },
    /// A device's signed answer to a challenge. The challenge is echoed so
    /// the server can route the assertion to the right pending ceremony.
    AssertionResponse {
        username: String,
        challenge: Nonce,
        assertion: Assertion,
    },
    /// Server status line for the demo transport.
    Status {
        ok: bool,
        detail: String,
    },
}

mod tag {
    pub const REGISTRATION_OPTIONS: u8 = 0x01;
    pub const TRANSACTION_OPTIONS: u8 = 0x02;
    pub const AUTHENTICATOR_DATA: u8 = 0x03;
    pub const ASSERTION: u8 = 0x04;
    pub const LINK_NONCE: u8 = 0x05;
    pub const REGISTER_REQUEST: u8 = 0x10;
    pub const REGISTER_FINISH: u8 = 0x11;
    pub const LINK_REQUEST: u8 = 0x12;
    pub const LINK_FINISH: u8 = 0x13;
    pub const TRANSACTION_REQUEST: u8 = 0x14;
    pub const TRANSACTION_CHALLENGE: u8 = 0x15;
    pub const TRANSACTION_CONFIRM: u8 = 0x16;
    pub const ASSERTION_RESPONSE: u8 = 0x17;
    pub const STATUS: u8 = 0x18;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("message violates invariant: {0}")]
    InvariantViolation(&'static str),
}

/// Why a byte string failed to decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    UnexpectedEnd,
    UnknownTag(u8),
    BadBool(u8),
    BadOptionFlag(u8),
    InvalidUtf8,
    TrailingBytes,
    EmptyField(&'static str),
}

impl fmt::Display for DecodeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            DecodeErrorKind::UnknownTag(t) => write!(f, "unknown type tag {t:#04x}"),
            DecodeErrorKind::BadBool(b) => write!(f, "invalid boolean byte {b:#04x}"),
            DecodeErrorKind::BadOptionFlag(b) => write!(f, "invalid option flag {b:#04x}"),
            DecodeErrorKind::InvalidUtf8 => write!(f, "string is not valid UTF-8"),
            DecodeErrorKind::TrailingBytes => write!(f, "trailing bytes after message"),
            DecodeErrorKind::EmptyField(name) => write!(f, "field {name} must be non-empty"),
        }
    }
}

/// Malformed input, with the offset where parsing failed.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed message at offset {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(tag: u8) -> Self {
        Writer { buf: vec![tag] }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    fn nonce(&mut self, n: &Nonce) {
        self.buf.extend_from_slice(n.as_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    fn string(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    fn opt_string(&mut self, s: &Option<String>) {
        match s {
            None => self.u8(0),
            Some(s) => {
                self.u8(1);
                self.string(s);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn fail(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError {
            offset: self.pos,
            kind,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(DecodeErrorKind::UnexpectedEnd));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn bool(&mut self) -> Result<bool, DecodeError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(DecodeError {
                offset: at,
                kind: DecodeErrorKind::BadBool(b),
            }),
        }
    }

    fn nonce(&mut self) -> Result<Nonce, DecodeError> {
        let b = self.take(NONCE_LEN)?;
        Ok(Nonce(b.try_into().expect("fixed length")))
    }

    fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn string(&mut self) -> Result<String, DecodeError> {
        let at = self.pos;
        let raw = self.bytes()?;
        String::from_utf8(raw).map_err(|_| DecodeError {
            offset: at,
            kind: DecodeErrorKind::InvalidUtf8,
        })
    }

    fn opt_string(&mut self) -> Result<Option<String>, DecodeError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.string()?)),
            b => Err(DecodeError {
                offset: at,
                kind: DecodeErrorKind::BadOptionFlag(b),
            }),
        }
    }

    fn finish(&self) -> Result<(), DecodeError> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(DecodeErrorKind::TrailingBytes));
        }
        Ok(())
    }
}

fn require_nonempty(value: &str, name: &'static str) -> Result<(), EncodeError> {
    if value.is_empty() {
        return Err(EncodeError::InvariantViolation(name));
    }
    Ok(())
}

fn enc_auth_data(w: &mut Writer, ad: &AuthenticatorData) {
    w.string(&ad.server_id);
    w.u32(ad.counter);
    w.bool(ad.user_verified);
    w.opt_string(&ad.extension_data);
}

fn enc_assertion(w: &mut Writer, a: &Assertion) {
    enc_auth_data(w, &a.auth_data);
    w.bytes(a.signature.as_bytes());
}

fn enc_tx_options(w: &mut Writer, o: &TransactionOptions) {
    w.nonce(&o.challenge);
    w.string(&o.server_id);
    w.opt_string(&o.transaction_data);
}

fn dec_auth_data(r: &mut Reader<'_>) -> Result<AuthenticatorData, DecodeError> {
    let at = r.pos;
    let server_id = r.string()?;
    if server_id.is_empty() {
        return Err(DecodeError {
            offset: at,
            kind: DecodeErrorKind::EmptyField("server_id"),
        });
    }
    Ok(AuthenticatorData {
        server_id,
        counter: r.u32()?,
        user_verified: r.bool()?,
        extension_data: r.opt_string()?,
    })
}

fn dec_assertion(r: &mut Reader<'_>) -> Result<Assertion, DecodeError> {
    Ok(Assertion {
        auth_data: dec_auth_data(r)?,
        signature: Signature(r.bytes()?),
    })
}

fn dec_tx_options(r: &mut Reader<'_>) -> Result<TransactionOptions, DecodeError> {
    let challenge = r.nonce()?;
    let at = r.pos;
    let server_id = r.string()?;
    if server_id.is_empty() {
        return Err(DecodeError {
            offset: at,
            kind: DecodeErrorKind::EmptyField("server_id"),
        });
    }
    Ok(TransactionOptions {
        challenge,
        server_id,
        transaction_data: r.opt_string()?,
    })
}

fn dec_nonempty_string(r: &mut Reader<'_>, name: &'static str) -> Result<String, DecodeError> {
    let at = r.pos;
    let s = r.string()?;
    if s.is_empty() {
        return Err(DecodeError {
            offset: at,
            kind: DecodeErrorKind::EmptyField(name),
        });
    }
    Ok(s)
}

impl Message {
    /// Canonical encoding. Refuses messages that violate their type
    /// invariants so that only well-formed messages have an image.
    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut w;
        match self {
            Message::RegistrationOptions(o) => {
                require_nonempty(&o.server_id, "server_id")?;
                require_nonempty(&o.username, "username")?;
                w = Writer::new(tag::REGISTRATION_OPTIONS);
                w.nonce(&o.challenge);
                w.string(&o.server_id);
                w.string(&o.username);
            }
            Message::TransactionOptions(o) => {
                require_nonempty(&o.server_id, "server_id")?;
                w = Writer::new(tag::TRANSACTION_OPTIONS);
                enc_tx_options(&mut w, o);
            }
            Message::AuthenticatorData(ad) => {
                require_nonempty(&ad.server_id, "server_id")?;
                w = Writer::new(tag::AUTHENTICATOR_DATA);
                enc_auth_data(&mut w, ad);
            }
            Message::Assertion(a) => {
                require_nonempty(&a.auth_data.server_id, "server_id")?;
                w = Writer::new(tag::ASSERTION);
                enc_assertion(&mut w, a);
            }
            Message::LinkNonce(n) => {
                require_nonempty(&n.username, "username")?;
                w = Writer::new(tag::LINK_NONCE);
                w.nonce(&n.value);
                w.string(&n.username);
            }
            Message::RegisterRequest { username } => {
                require_nonempty(username, "username")?;
                w = Writer::new(tag::REGISTER_REQUEST);
                w.string(username);
            }
            Message::RegisterFinish {
                username,
                public_key,
                attestation,
            } => {
                require_nonempty(username, "username")?;
                require_nonempty(&attestation.auth_data.server_id, "server_id")?;
                w = Writer::new(tag::REGISTER_FINISH);
                w.string(username);
                w.bytes(public_key.as_bytes());
                enc_assertion(&mut w, attestation);
            }
            Message::LinkRequest { nonce } => {
                w = Writer::new(tag::LINK_REQUEST);
                w.nonce(nonce);
            }
            Message::LinkFinish {
                nonce,
                public_key,
                attestation,
            } => {
                require_nonempty(&attestation.auth_data.server_id, "server_id")?;
                w = Writer::new(tag::LINK_FINISH);
                w.nonce(nonce);
                w.bytes(public_key.as_bytes());
                enc_assertion(&mut w, attestation);
            }
            Message::TransactionRequest { username, data } => {
                require_nonempty(username, "username")?;
                w = Writer::new(tag::TRANSACTION_REQUEST);
                w.string(username);
                w.string(data);
            }
            Message::TransactionChallenge {
                username,
                data,
                options,
            } => {
                require_nonempty(username, "username")?;
                require_nonempty(&options.server_id, "server_id")?;
                w = Writer::new(tag::TRANSACTION_CHALLENGE);
                w.string(username);
                w.string(data);
                enc_tx_options(&mut w, options);
            }
            Message::TransactionConfirm { username, options } => {
                require_nonempty(username, "username")?;
                require_nonempty(&options.server_id, "server_id")?;
                w = Writer::new(tag::TRANSACTION_CONFIRM);
                w.string(username);
                enc_tx_options(&mut w, options);
            }
            Message::AssertionResponse {
                username,
                challenge,
                assertion,
            } => {
                require_nonempty(username, "username")?;
                require_nonempty(&assertion.auth_data.server_id, "server_id")?;
                w = Writer::new(tag::ASSERTION_RESPONSE);
                w.string(username);
                w.nonce(challenge);
                enc_assertion(&mut w, assertion);
            }
            Message::Status { ok, detail } => {
                w = Writer::new(tag::STATUS);
                w.bool(*ok);
                w.string(detail);
            }
        }
        Ok(w.buf)
    }

    /// Exact inverse of [`Message::encode`] on its image. Adversarial bytes
    /// outside the image yield a [`DecodeError`], never a panic.
    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader::new(bytes);
        let tag_byte = r.u8()?;
        let msg = match tag_byte {
            tag::REGISTRATION_OPTIONS => Message::RegistrationOptions(RegistrationOptions {
                challenge: r.nonce()?,
                server_id: dec_nonempty_string(&mut r, "server_id")?,
                username: dec_nonempty_string(&mut r, "username")?,
            }),
            tag::TRANSACTION_OPTIONS => Message::TransactionOptions(dec_tx_options(&mut r)?),
            tag::AUTHENTICATOR_DATA => Message::AuthenticatorData(dec_auth_data(&mut r)?),
            tag::ASSERTION => Message::Assertion(dec_assertion(&mut r)?),
            tag::LINK_NONCE => Message::LinkNonce(LinkNonce {
                value: r.nonce()?,
                username: dec_nonempty_string(&mut r, "username")?,
            }),
            tag::REGISTER_REQUEST => Message::RegisterRequest {
                username: dec_nonempty_string(&mut r, "username")?,
            },
            tag::REGISTER_FINISH => Message::RegisterFinish {
                username: dec_nonempty_string(&mut r, "username")?,
                public_key: PublicKey(r.bytes()?),
                attestation: dec_assertion(&mut r)?,
            },
            tag::LINK_REQUEST => Message::LinkRequest { nonce: r.nonce()? },
            tag::LINK_FINISH => Message::LinkFinish {
                nonce: r.nonce()?,
                public_key: PublicKey(r.bytes()?),
                attestation: dec_assertion(&mut r)?,
            },
            tag::TRANSACTION_REQUEST => Message::TransactionRequest {
                username: dec_nonempty_string(&mut r, "username")?,
                data: r.string()?,
            },
            tag::TRANSACTION_CHALLENGE => Message::TransactionChallenge {
                username: dec_nonempty_string(&mut r, "username")?,
                data: r.string()?,
                options: dec_tx_options(&mut r)?,
            },
            tag::TRANSACTION_CONFIRM => Message::TransactionConfirm {
                username: dec_nonempty_string(&mut r, "username")?,
                options: dec_tx_options(&mut r)?,
            },
            tag::ASSERTION_RESPONSE => Message::AssertionResponse {
                username: dec_nonempty_string(&mut r, "username")?,
                challenge: r.nonce()?,
                assertion: dec_assertion(&mut r)?,
            },
            tag::STATUS => Message::Status {
                ok: r.bool()?,
                detail: r.string()?,
            },
            other => {
                return Err(DecodeError {
                    offset: 0,
                    kind: DecodeErrorKind::UnknownTag(other),
                })
            }
        };
        r.finish()?;
        Ok(msg)
    }

    /// Short name used in logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::RegistrationOptions(_) => "registration-options",
            Message::TransactionOptions(_) => "transaction-options",
            Message::AuthenticatorData(_) => "authenticator-data",
            Message::Assertion(_) => "assertion",
            Message::LinkNonce(_) => "link-nonce",
            Message::RegisterRequest { .. } => "register-request",
            Message::RegisterFinish { .. } => "register-finish",
            Message::LinkRequest { .. } => "link-request",
            Message::LinkFinish { .. } => "link-finish",
            Message::TransactionRequest { .. } => "transaction-request",
            Message::TransactionChallenge { .. } => "transaction-challenge",
            Message::TransactionConfirm { .. } => "transaction-confirm",
            Message::AssertionResponse { .. } => "assertion-response",
            Message::Status { .. } => "status",
        }
    }
}

/// The byte string a device signs for a given authenticator data and
/// challenge: the tagged canonical encoding of the authenticator data with
/// the challenge appended. Appending the challenge (rather than embedding
/// it) keeps authenticator data replay-inert without the server's
/// challenge table.
pub fn signed_payload(auth_data: &AuthenticatorData, challenge: &Nonce) -> Vec<u8> {
    let mut payload = Message::AuthenticatorData(auth_data.clone())
        .encode()
        .expect("authenticator data from protocol code is well-formed");
    payload.extend_from_slice(challenge.as_bytes());
    payload
}
