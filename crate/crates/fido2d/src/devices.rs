//! Device agents and the user decision model.
//!
//! Device B is the browser machine: it creates the first credential and
//! signs transaction challenges blind to the transaction data. Device A is
//! the additional device: it links via the nonce hand-off, displays the
//! transaction text, and signs it together with the second challenge once
//! the user confirms. Compromise leaks the signing key to the adversary;
//! the agent itself keeps operating honestly, the attacker's extra power is
//! the key.

use thiserror::Error;

use crate::crypto::{keygen_from_rng, sign, Nonce, SecretKey, SimRng};
use crate::messages::{
    signed_payload, Assertion, AuthenticatorData, RegistrationOptions, TransactionOptions,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("user declined")]
    UserDeclined,
    #[error("device holds no credential")]
    NoCredential,
    #[error("device already holds a credential")]
    AlreadyRegistered,
    #[error("link text is not a valid nonce: {0}")]
    LinkInputError(&'static str),
    #[error("device B options must not carry transaction data")]
    UnexpectedTransactionData,
    #[error("device A options must carry transaction data")]
    MissingTransactionData,
    #[error("wrong device role for this operation")]
    WrongRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    /// The machine running the browser; holds the first credential.
    B,
    /// The additional device with the confirmation display.
    A,
}

/// How the user treats the text shown on device A.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserMode {
    /// The user verifies the displayed details against what she initiated.
    Compare,
    /// The user confirms anything once she has initiated some transaction.
    NoCompare,
}

/// What the user believes she initiated: at which server and with what text.
/// A phished initiation records the phisher as its origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Intent {
    pub server_id: String,
    pub data: String,
}

/// The user decision model. A single pending intent slot: set when the user
/// initiates a transaction, cleared when she confirms one.
#[derive(Debug, Clone)]
pub struct UserModel {
    pub mode: UserMode,
    pub intent: Option<Intent>,
}

impl UserModel {
    pub fn new(mode: UserMode) -> Self {
        UserModel { mode, intent: None }
    }

    pub fn set_intent(&mut self, server_id: &str, data: &str) {
        self.intent = Some(Intent {
            server_id: server_id.to_string(),
            data: data.to_string(),
        });
    }

    /// Decide whether to confirm what device A displays. Compare mode
    /// demands the displayed server and text equal the initiated ones
    /// exactly; NoCompare only demands that some transaction was initiated.
    /// Confirmation consumes the intent.
    pub fn confirm(&mut self, displayed_server: &str, displayed_data: &str) -> bool {
        let confirmed = match (self.mode, &self.intent) {
            (_, None) => false,
            (UserMode::NoCompare, Some(_)) => true,
            (UserMode::Compare, Some(intent)) => {
                intent.server_id == displayed_server && intent.data == displayed_data
            }
        };
        if confirmed {
            self.intent = None;
        }
        confirmed
    }
}

/// Everything the adversary gains from compromising a device. The secret is
/// absent when the device had not yet created a credential.
#[derive(Debug, Clone)]
pub struct CompromiseLeak {
    pub secret: Option<SecretKey>,
    pub counter: u32,
}

/// One device agent. Counter increments on every assertion produced;
/// compromise is monotone.
#[derive(Debug, Clone)]
pub struct Device {
    pub role: Role,
    credential: Option<crate::crypto::KeyPair>,
    counter: u32,
    compromised: bool,
    /// Transaction texts device A signed after user confirmation.
    confirmed_log: Vec<String>,
}

impl Device {
    pub fn new(role: Role) -> Self {
        Device {
            role,
            credential: None,
            counter: 0,
            compromised: false,
            confirmed_log: Vec::new(),
        }
    }

    pub fn counter(&self) -> u32 {
        self.counter
    }

    pub fn is_compromised(&self) -> bool {
        self.compromised
    }

    pub fn public_key(&self) -> Option<&crate::crypto::PublicKey> {
        self.credential.as_ref().map(|kp| &kp.public)
    }

    pub fn confirmed_log(&self) -> &[String] {
        &self.confirmed_log
    }

    fn assert_over(
        &mut self,
        challenge: &Nonce,
        server_id: &str,
        extension: Option<String>,
    ) -> Assertion {
        let credential = self.credential.as_ref().expect("caller checked credential");
        self.counter += 1;
        let auth_data = AuthenticatorData {
            server_id: server_id.to_string(),
            counter: self.counter,
            user_verified: true,
            extension_data: extension,
        };
        let signature = sign(&credential.secret, &signed_payload(&auth_data, challenge));
        Assertion {
            auth_data,
            signature,
        }
    }

    /// Device B registration: create a fresh credential and attest over the
    /// server's challenge. Declines produce no key material at all.
    pub fn create_credential(
        &mut self,
        opt: &RegistrationOptions,
        consent: bool,
        rng: &mut SimRng,
    ) -> Result<(crate::crypto::PublicKey, Assertion), DeviceError> {
        if self.role != Role::B {
            return Err(DeviceError::WrongRole);
        }
        if !consent {
            return Err(DeviceError::UserDeclined);
        }
        if self.credential.is_some() {
            return Err(DeviceError::AlreadyRegistered);
        }
        let kp = keygen_from_rng(rng);
        self.credential = Some(kp);
        let public = self.credential.as_ref().unwrap().public.clone();
        let attestation = self.assert_over(&opt.challenge, &opt.server_id, None);
        Ok((public, attestation))
    }

    /// Device B signs a transaction challenge. The options must not carry
    /// transaction data: B never displays it in-protocol. The signature
    /// binds whatever server identity the options name, which is why a
    /// phishing relay ends up with an assertion the honest server rejects.
    pub fn sign_challenge(
        &mut self,
        opt: &TransactionOptions,
        consent: bool,
    ) -> Result<Assertion, DeviceError> {
        if self.role != Role::B {
            return Err(DeviceError::WrongRole);
        }
        if opt.transaction_data.is_some() {
            return Err(DeviceError::UnexpectedTransactionData);
        }
        if self.credential.is_none() {
            return Err(DeviceError::NoCredential);
        }
        if !consent {
            return Err(DeviceError::UserDeclined);
        }
        Ok(self.assert_over(&opt.challenge, &opt.server_id, None))
    }

    /// Device A registration via the nonce hand-off. The link text is the
    /// nonce rendered in hex (the QR code of the local B->A transfer); the
    /// nonce itself doubles as the attestation challenge.
    pub fn link(
        &mut self,
        link_text: &str,
        server_id: &str,
        consent: bool,
        rng: &mut SimRng,
    ) -> Result<(crate::crypto::PublicKey, Assertion, Nonce), DeviceError> {
        if self.role != Role::A {
            return Err(DeviceError::WrongRole);
        }
        let nonce = Nonce::from_hex(link_text)
            .ok_or(DeviceError::LinkInputError("expected 64 hex characters"))?;
        if !consent {
            return Err(DeviceError::UserDeclined);
        }
        if self.credential.is_some() {
            return Err(DeviceError::AlreadyRegistered);
        }
        let kp = keygen_from_rng(rng);
        self.credential = Some(kp);
        let public = self.credential.as_ref().unwrap().public.clone();
        let attestation = self.assert_over(&nonce, server_id, None);
        Ok((public, attestation, nonce))
    }

    /// Device A displays the transaction text and asks the user model.
    /// On confirmation the assertion signs the displayed text as extension
    /// data together with the challenge; on decline nothing is signed.
    pub fn confirm_transaction(
        &mut self,
        opt: &TransactionOptions,
        user: &mut UserModel,
    ) -> Result<Assertion, DeviceError> {
        if self.role != Role::A {
            return Err(DeviceError::WrongRole);
        }
        if self.credential.is_none() {
            return Err(DeviceError::NoCredential);
        }
        let displayed = opt
            .transaction_data
            .as_deref()
            .ok_or(DeviceError::MissingTransactionData)?;
        if !user.confirm(&opt.server_id, displayed) {
            return Err(DeviceError::UserDeclined);
        }
        self.confirmed_log.push(displayed.to_string());
        Ok(self.assert_over(&opt.challenge, &opt.server_id, Some(displayed.to_string())))
    }

    /// Leak the device's key material to the adversary. Compromise is
    /// recorded even before a credential exists, but then nothing leaks:
    /// devices are not compromised during registration.
    pub fn compromise(&mut self) -> CompromiseLeak {
        self.compromised = true;
        CompromiseLeak {
            secret: self.credential.as_ref().map(|kp| kp.secret.clone()),
            counter: self.counter,
        }
    }
}
