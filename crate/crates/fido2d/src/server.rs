//! Relying-party state machine.
//!
//! Registration links two credentials to an account via a single-use nonce;
//! a transaction is accepted only when device B signed its challenge and
//! device A signed the second challenge together with exactly the stored
//! transaction data. Every verification failure aborts the pending
//! transaction instead of allowing a retry, and no challenge value is ever
//! accepted twice.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{fresh_nonce, verify, Nonce, NonceRegistry, PublicKey, SimRng};
use crate::messages::{
    signed_payload, Assertion, LinkNonce, RegistrationOptions, TransactionOptions,
};

/// Steps a pending transaction may sit unanswered before it is aborted.
pub const DEFAULT_PENDING_EXPIRY_STEPS: u64 = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServerError {
    #[error("registration refused: account {0} is already active")]
    RegistrationRefused(String),
    #[error("registration failed: {0}")]
    RegistrationFailed(&'static str),
    #[error("link failed: {0}")]
    LinkFailed(&'static str),
    #[error("transaction refused: account {0} is not active")]
    TransactionRefused(String),
    #[error("no live pending transaction for this challenge")]
    UnknownChallenge,
    #[error("transaction aborted: {0}")]
    TransactionAborted(&'static str),
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("nonce registry collision")]
    NonceExhausted,
}

/// Server-side record of one account.
#[derive(Debug, Clone)]
pub struct Account {
    pub username: String,
    pub pub_b: Option<PublicKey>,
    pub pub_a: Option<PublicKey>,
    pub link_nonce: Option<Nonce>,
    pub counter_b: u32,
    pub counter_a: u32,
}

impl Account {
    fn new(username: &str) -> Self {
        Account {
            username: username.to_string(),
            pub_b: None,
            pub_a: None,
            link_nonce: None,
            counter_b: 0,
            counter_a: 0,
        }
    }

    /// An account takes part in transactions only once both keys are linked.
    pub fn is_active(&self) -> bool {
        self.pub_b.is_some() && self.pub_a.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxState {
    AwaitingB,
    AwaitingA,
    Complete,
    Aborted,
}

impl TxState {
    fn name(self) -> &'static str {
        match self {
            TxState::AwaitingB => "awaiting-b",
            TxState::AwaitingA => "awaiting-a",
            TxState::Complete => "complete",
            TxState::Aborted => "aborted",
        }
    }
}

/// Server-side binding of transaction data to its two challenges.
#[derive(Debug, Clone)]
pub struct PendingTransaction {
    pub username: String,
    pub data: String,
    pub challenge_b: Nonce,
    pub challenge_a: Option<Nonce>,
    pub state: TxState,
    pub created_step: u64,
    b_verified: bool,
    a_verified: bool,
}

impl PendingTransaction {
    /// Transitions are only AwaitingB -> AwaitingA -> Complete, or -> Aborted.
    fn advance(&mut self, next: TxState) {
        let ok = matches!(
            (self.state, next),
            (TxState::AwaitingB, TxState::AwaitingA)
                | (TxState::AwaitingA, TxState::Complete)
                | (TxState::AwaitingB, TxState::Aborted)
                | (TxState::AwaitingA, TxState::Aborted)
        );
        assert!(
            ok,
            "illegal transition {} -> {}",
            self.state.name(),
            next.name()
        );
        self.state = next;
    }
}

/// Events the driving harness stamps with step numbers and appends to the
/// run trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    Registered { username: String },
    TransactionComplete { username: String, data: String },
}

/// What a verified assertion led to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssertionOutcome {
    /// Device B's ceremony succeeded; these options (carrying the
    /// transaction data) go to device A.
    AwaitingSecondDevice(TransactionOptions),
    /// Device A's ceremony succeeded; the transaction with this data is
    /// accepted.
    Completed(String),
}

/// One relying party. In-memory only; driven by a single scheduler.
#[derive(Debug, Clone)]
pub struct Server {
    server_id: String,
    accounts: BTreeMap<String, Account>,
    /// Outstanding registration challenge per username. A repeated
    /// begin_registration replaces (invalidates) the previous challenge.
    reg_challenges: BTreeMap<String, Nonce>,
    /// Outstanding link nonces, mapped to the username they were issued for.
    link_nonces: BTreeMap<Nonce, String>,
    pendings: Vec<PendingTransaction>,
    /// Every challenge that was ever consumed by a finish operation.
    consumed: BTreeSet<Nonce>,
    /// Every challenge that passed verification; inserting a duplicate
    /// violates the single-use invariant and panics.
    accepted: BTreeSet<Nonce>,
    events: Vec<ServerEvent>,
    pending_expiry_steps: u64,
}

impl Server {
    pub fn new(server_id: &str) -> Self {
        Server {
            server_id: server_id.to_string(),
            accounts: BTreeMap::new(),
            reg_challenges: BTreeMap::new(),
            link_nonces: BTreeMap::new(),
            pendings: Vec::new(),
            consumed: BTreeSet::new(),
            accepted: BTreeSet::new(),
            events: Vec::new(),
            pending_expiry_steps: DEFAULT_PENDING_EXPIRY_STEPS,
        }
    }

    pub fn with_pending_expiry(server_id: &str, steps: u64) -> Self {
        let mut s = Server::new(server_id);
        s.pending_expiry_steps = steps;
        s
    }

    pub fn server_id(&self) -> &str {
        &self.server_id
    }

    pub fn account(&self, username: &str) -> Option<&Account> {
        self.accounts.get(username)
    }

    pub fn pendings(&self) -> &[PendingTransaction] {
        &self.pendings
    }

    /// Drain events produced since the last call.
    pub fn take_events(&mut self) -> Vec<ServerEvent> {
        std::mem::take(&mut self.events)
    }

    fn consume(&mut self, challenge: Nonce) {
        self.consumed.insert(challenge);
    }

    fn mark_accepted(&mut self, challenge: Nonce) {
        assert!(
            self.accepted.insert(challenge),
            "challenge single-use invariant violated"
        );
    }

    /// Start registration for a username that is not yet active.
    pub fn begin_registration(
        &mut self,
        username: &str,
        rng: &mut SimRng,
        nonces: &mut NonceRegistry,
    ) -> Result<RegistrationOptions, ServerError> {
        if username.is_empty() {
            return Err(ServerError::RegistrationFailed("empty username"));
        }
        if self.accounts.get(username).is_some_and(Account::is_active) {
            return Err(ServerError::RegistrationRefused(username.to_string()));
        }
        let challenge = fresh_nonce(rng, nonces).map_err(|_| ServerError::NonceExhausted)?;
        // A fresh ceremony: any previous partial registration state for this
        // username is invalidated along with its challenge.
        if let Some(old) = self.reg_challenges.insert(username.to_string(), challenge) {
            self.consume(old);
        }
        if let Some(account) = self.accounts.get_mut(username) {
            if let Some(n) = account.link_nonce.take() {
                self.link_nonces.remove(&n);
            }
            account.pub_b = None;
            account.pub_a = None;
        }
        Ok(RegistrationOptions {
            challenge,
            server_id: self.server_id.clone(),
            username: username.to_string(),
        })
    }

    /// Store device B's credential if the attestation verifies over the
    /// outstanding challenge, then issue the link nonce for device A.
    /// The challenge is consumed whether or not verification succeeds.
    pub fn finish_registration_b(
        &mut self,
        username: &str,
        credential: &PublicKey,
        attestation: &Assertion,
        rng: &mut SimRng,
        nonces: &mut NonceRegistry,
    ) -> Result<LinkNonce, ServerError> {
        let Some(challenge) = self.reg_challenges.remove(username) else {
            return Err(ServerError::RegistrationFailed("no outstanding challenge"));
        };
        self.consume(challenge);
        self.check_assertion_shape(attestation)
            .map_err(ServerError::RegistrationFailed)?;
        if !verify(
            credential,
            &signed_payload(&attestation.auth_data, &challenge),
            &attestation.signature,
        ) {
            return Err(ServerError::RegistrationFailed("bad signature"));
        }
        self.mark_accepted(challenge);
        let link = fresh_nonce(rng, nonces).map_err(|_| ServerError::NonceExhausted)?;
        let account = self
            .accounts
            .entry(username.to_string())
            .or_insert_with(|| Account::new(username));
        account.pub_b = Some(credential.clone());
        account.counter_b = attestation.auth_data.counter;
        account.link_nonce = Some(link);
        self.link_nonces.insert(link, username.to_string());
        Ok(LinkNonce {
            value: link,
            username: username.to_string(),
        })
    }

    /// Registration options for an outstanding link nonce: the nonce itself
    /// doubles as the challenge of device A's ceremony.
    pub fn link_options(&self, link_nonce: &Nonce) -> Option<RegistrationOptions> {
        let username = self.link_nonces.get(link_nonce)?;
        Some(RegistrationOptions {
            challenge: *link_nonce,
            server_id: self.server_id.clone(),
            username: username.clone(),
        })
    }

    /// Link device A's credential to the account bound to the nonce. The
    /// attestation is verified over the link nonce itself, which doubles as
    /// the FIDO2 challenge of the second ceremony. An unknown or consumed
    /// nonce fails without consuming anything; a bad attestation consumes
    /// the nonce.
    pub fn finish_registration_a(
        &mut self,
        link_nonce: &Nonce,
        credential: &PublicKey,
        attestation: &Assertion,
    ) -> Result<String, ServerError> {
        let Some(username) = self.link_nonces.remove(link_nonce) else {
            return Err(ServerError::LinkFailed("unknown or consumed nonce"));
        };
        self.consume(*link_nonce);
        let account = self
            .accounts
            .get_mut(&username)
            .ok_or_else(|| ServerError::UnknownAccount(username.clone()))?;
        account.link_nonce = None;
        self.check_assertion_shape(attestation)
            .map_err(ServerError::LinkFailed)?;
        if !verify(
            credential,
            &signed_payload(&attestation.auth_data, link_nonce),
            &attestation.signature,
        ) {
            return Err(ServerError::LinkFailed("bad attestation"));
        }
        self.mark_accepted(*link_nonce);
        let account = self.accounts.get_mut(&username).expect("checked above");
        account.pub_a = Some(credential.clone());
        account.counter_a = attestation.auth_data.counter;
        self.events.push(ServerEvent::Registered {
            username: username.clone(),
        });
        Ok(username)
    }

    /// Open a pending transaction and issue the challenge for device B.
    /// The returned options deliberately omit the transaction data.
    pub fn begin_transaction(
        &mut self,
        username: &str,
        data: &str,
        now: u64,
        rng: &mut SimRng,
        nonces: &mut NonceRegistry,
    ) -> Result<TransactionOptions, ServerError> {
        if !self.accounts.get(username).is_some_and(Account::is_active) {
            return Err(ServerError::TransactionRefused(username.to_string()));
        }
        let challenge = fresh_nonce(rng, nonces).map_err(|_| ServerError::NonceExhausted)?;
        self.pendings.push(PendingTransaction {
            username: username.to_string(),
            data: data.to_string(),
            challenge_b: challenge,
            challenge_a: None,
            state: TxState::AwaitingB,
            created_step: now,
            b_verified: false,
            a_verified: false,
        });
        Ok(TransactionOptions {
            challenge,
            server_id: self.server_id.clone(),
            transaction_data: None,
        })
    }

    fn check_assertion_shape(&self, assertion: &Assertion) -> Result<(), &'static str> {
        if assertion.auth_data.server_id != self.server_id {
            return Err("wrong server id");
        }
        if !assertion.auth_data.user_verified {
            return Err("user not verified");
        }
        if assertion.auth_data.extension_data.is_some() {
            return Err("unexpected extension data");
        }
        Ok(())
    }

    fn pending_index(&self, challenge: &Nonce, state: TxState) -> Option<usize> {
        self.pendings.iter().position(|p| {
            p.state == state
                && match state {
                    TxState::AwaitingB => p.challenge_b == *challenge,
                    TxState::AwaitingA => p.challenge_a.as_ref() == Some(challenge),
                    _ => false,
                }
        })
    }

    /// Verify device B's assertion over its challenge. On success the
    /// pending transaction advances and the options for device A (carrying
    /// the transaction data) are returned. On any failure the transaction
    /// aborts and the challenge stays consumed.
    pub fn finish_transaction_b(
        &mut self,
        username: &str,
        challenge: &Nonce,
        assertion: &Assertion,
        rng: &mut SimRng,
        nonces: &mut NonceRegistry,
    ) -> Result<TransactionOptions, ServerError> {
        let Some(idx) = self.pending_index(challenge, TxState::AwaitingB) else {
            return Err(ServerError::UnknownChallenge);
        };
        self.consume(*challenge);
        let fail = |server: &mut Server, idx: usize, reason: &'static str| {
            server.pendings[idx].advance(TxState::Aborted);
            Err(ServerError::TransactionAborted(reason))
        };
        if self.pendings[idx].username != username {
            return fail(self, idx, "username mismatch");
        }
        if assertion.auth_data.server_id != self.server_id {
            return fail(self, idx, "wrong server id");
        }
        if !assertion.auth_data.user_verified {
            return fail(self, idx, "user not verified");
        }
        if assertion.auth_data.extension_data.is_some() {
            return fail(self, idx, "unexpected extension data");
        }
        let account = match self.accounts.get(username) {
            Some(a) if a.is_active() => a,
            _ => return fail(self, idx, "account not active"),
        };
        let pub_b = account.pub_b.clone().expect("active account has pub_b");
        if !verify(
            &pub_b,
            &signed_payload(&assertion.auth_data, challenge),
            &assertion.signature,
        ) {
            return fail(self, idx, "bad signature");
        }
        if assertion.auth_data.counter <= account.counter_b {
            // Signature counter did not advance: clone detection fires.
            return fail(self, idx, "counter not increased");
        }
        self.mark_accepted(*challenge);
        let challenge_a = fresh_nonce(rng, nonces).map_err(|_| ServerError::NonceExhausted)?;
        self.accounts.get_mut(username).expect("checked").counter_b = assertion.auth_data.counter;
        let pending = &mut self.pendings[idx];
        pending.b_verified = true;
        pending.challenge_a = Some(challenge_a);
        pending.advance(TxState::AwaitingA);
        let data = pending.data.clone();
        Ok(TransactionOptions {
            challenge: challenge_a,
            server_id: self.server_id.clone(),
            transaction_data: Some(data),
        })
    }

    /// Verify device A's assertion over the second challenge, requiring the
    /// signed extension data to equal the stored transaction data exactly.
    /// This check is the transaction-manipulation defense. Success completes
    /// the transaction and emits the completion event.
    pub fn finish_transaction_a(
        &mut self,
        username: &str,
        challenge: &Nonce,
        assertion: &Assertion,
    ) -> Result<String, ServerError> {
        let Some(idx) = self.pending_index(challenge, TxState::AwaitingA) else {
            return Err(ServerError::UnknownChallenge);
        };
        self.consume(*challenge);
        let fail = |server: &mut Server, idx: usize, reason: &'static str| {
            server.pendings[idx].advance(TxState::Aborted);
            Err(ServerError::TransactionAborted(reason))
        };
        if self.pendings[idx].username != username {
            return fail(self, idx, "username mismatch");
        }
        if assertion.auth_data.server_id != self.server_id {
            return fail(self, idx, "wrong server id");
        }
        if !assertion.auth_data.user_verified {
            return fail(self, idx, "user not verified");
        }
        if assertion.auth_data.extension_data.as_deref() != Some(self.pendings[idx].data.as_str()) {
            return fail(self, idx, "transaction data mismatch");
        }
        let account = match self.accounts.get(username) {
            Some(a) if a.is_active() => a,
            _ => return fail(self, idx, "account not active"),
        };
        let pub_a = account.pub_a.clone().expect("active account has pub_a");
        if !verify(
            &pub_a,
            &signed_payload(&assertion.auth_data, challenge),
            &assertion.signature,
        ) {
            return fail(self, idx, "bad signature");
        }
        if assertion.auth_data.counter <= account.counter_a {
            return fail(self, idx, "counter not increased");
        }
        self.mark_accepted(*challenge);
        self.accounts.get_mut(username).expect("checked").counter_a = assertion.auth_data.counter;
        let pending = &mut self.pendings[idx];
        pending.a_verified = true;
        pending.advance(TxState::Complete);
        assert!(
            pending.b_verified && pending.a_verified,
            "completion requires both ceremony proofs"
        );
        let data = pending.data.clone();
        self.events.push(ServerEvent::TransactionComplete {
            username: username.to_string(),
            data: data.clone(),
        });
        Ok(data)
    }

    /// Route an incoming assertion to the ceremony its challenge belongs
    /// to. A challenge that matches no live pending (consumed, expired or
    /// never issued) is rejected without touching any state.
    pub fn handle_assertion(
        &mut self,
        username: &str,
        challenge: &Nonce,
        assertion: &Assertion,
        rng: &mut SimRng,
        nonces: &mut NonceRegistry,
    ) -> Result<AssertionOutcome, ServerError> {
        if self.pending_index(challenge, TxState::AwaitingB).is_some() {
            let options = self.finish_transaction_b(username, challenge, assertion, rng, nonces)?;
            return Ok(AssertionOutcome::AwaitingSecondDevice(options));
        }
        if self.pending_index(challenge, TxState::AwaitingA).is_some() {
            let data = self.finish_transaction_a(username, challenge, assertion)?;
            return Ok(AssertionOutcome::Completed(data));
        }
        Err(ServerError::UnknownChallenge)
    }

    /// Abort pendings that outlived the step budget.
    pub fn expire_pendings(&mut self, now: u64) -> usize {
        let budget = self.pending_expiry_steps;
        let mut expired = 0;
        for p in &mut self.pendings {
            if matches!(p.state, TxState::AwaitingB | TxState::AwaitingA)
                && now.saturating_sub(p.created_step) > budget
            {
                p.advance(TxState::Aborted);
                expired += 1;
            }
        }
        expired
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen_from_rng, rng_from_seed, sign, KeyPair};
    use crate::messages::AuthenticatorData;

    struct Fixture {
        server: Server,
        rng: SimRng,
        nonces: NonceRegistry,
    }

    impl Fixture {
        fn new() -> Self {
            Fixture {
                server: Server::new("bank.example"),
                rng: rng_from_seed(42),
                nonces: NonceRegistry::new(),
            }
        }

        fn attestation(&self, kp: &KeyPair, challenge: &Nonce, counter: u32) -> Assertion {
            let auth_data = AuthenticatorData {
                server_id: "bank.example".into(),
                counter,
                user_verified: true,
                extension_data: None,
            };
            let sig = sign(&kp.secret, &signed_payload(&auth_data, challenge));
            Assertion {
                auth_data,
                signature: sig,
            }
        }

        fn register(&mut self, username: &str) -> (KeyPair, KeyPair) {
            let opt = self
                .server
                .begin_registration(username, &mut self.rng, &mut self.nonces)
                .unwrap();
            let kp_b = keygen_from_rng(&mut self.rng);
            let att = self.attestation(&kp_b, &opt.challenge, 1);
            let link = self
                .server
                .finish_registration_b(
                    username,
                    &kp_b.public,
                    &att,
                    &mut self.rng,
                    &mut self.nonces,
                )
                .unwrap();
            let kp_a = keygen_from_rng(&mut self.rng);
            let att_a = self.attestation(&kp_a, &link.value, 1);
            self.server
                .finish_registration_a(&link.value, &kp_a.public, &att_a)
                .unwrap();
            (kp_b, kp_a)
        }

        fn tx_assertion(
            &self,
            kp: &KeyPair,
            challenge: &Nonce,
            counter: u32,
            extension: Option<&str>,
        ) -> Assertion {
            let auth_data = AuthenticatorData {
                server_id: "bank.example".into(),
                counter,
                user_verified: true,
                extension_data: extension.map(str::to_string),
            };
            let sig = sign(&kp.secret, &signed_payload(&auth_data, challenge));
            Assertion {
                auth_data,
                signature: sig,
            }
        }
    }

    #[test]
    fn honest_registration_activates_account() {
        let mut fx = Fixture::new();
        fx.register("alice");
        assert!(fx.server.account("alice").unwrap().is_active());
        assert_eq!(
            fx.server.take_events(),
            vec![ServerEvent::Registered {
                username: "alice".into()
            }]
        );
    }

    #[test]
    fn begin_registration_on_active_account_refused() {
        let mut fx = Fixture::new();
        fx.register("alice");
        let err = fx
            .server
            .begin_registration("alice", &mut fx.rng, &mut fx.nonces)
            .unwrap_err();
        assert_eq!(err, ServerError::RegistrationRefused("alice".into()));
    }

    #[test]
    fn second_begin_invalidates_first_challenge() {
        let mut fx = Fixture::new();
        let opt1 = fx
            .server
            .begin_registration("alice", &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let opt2 = fx
            .server
            .begin_registration("alice", &mut fx.rng, &mut fx.nonces)
            .unwrap();
        assert_ne!(opt1.challenge, opt2.challenge);
        let kp = keygen_from_rng(&mut fx.rng);
        // Attestation over the stale first challenge must fail even though
        // its signature is valid for those bytes.
        let att = fx.attestation(&kp, &opt1.challenge, 1);
        let err = fx
            .server
            .finish_registration_b("alice", &kp.public, &att, &mut fx.rng, &mut fx.nonces)
            .unwrap_err();
        assert_eq!(err, ServerError::RegistrationFailed("bad signature"));
    }

    #[test]
    fn replayed_attestation_rejected() {
        let mut fx = Fixture::new();
        let opt = fx
            .server
            .begin_registration("alice", &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let kp = keygen_from_rng(&mut fx.rng);
        let att = fx.attestation(&kp, &opt.challenge, 1);
        fx.server
            .finish_registration_b("alice", &kp.public, &att, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let err = fx
            .server
            .finish_registration_b("alice", &kp.public, &att, &mut fx.rng, &mut fx.nonces)
            .unwrap_err();
        assert_eq!(
            err,
            ServerError::RegistrationFailed("no outstanding challenge")
        );
    }

    #[test]
    fn unverified_user_flag_rejected() {
        let mut fx = Fixture::new();
        let opt = fx
            .server
            .begin_registration("alice", &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let kp = keygen_from_rng(&mut fx.rng);
        let mut att = fx.attestation(&kp, &opt.challenge, 1);
        att.auth_data.user_verified = false;
        att.signature = sign(&kp.secret, &signed_payload(&att.auth_data, &opt.challenge));
        let err = fx
            .server
            .finish_registration_b("alice", &kp.public, &att, &mut fx.rng, &mut fx.nonces)
            .unwrap_err();
        assert_eq!(err, ServerError::RegistrationFailed("user not verified"));
    }

    #[test]
    fn link_nonce_single_use() {
        let mut fx = Fixture::new();
        let opt = fx
            .server
            .begin_registration("alice", &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let kp_b = keygen_from_rng(&mut fx.rng);
        let att = fx.attestation(&kp_b, &opt.challenge, 1);
        let link = fx
            .server
            .finish_registration_b("alice", &kp_b.public, &att, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        assert_eq!(link.username, "alice");
        let kp_a = keygen_from_rng(&mut fx.rng);
        let att_a = fx.attestation(&kp_a, &link.value, 1);
        fx.server
            .finish_registration_a(&link.value, &kp_a.public, &att_a)
            .unwrap();
        let err = fx
            .server
            .finish_registration_a(&link.value, &kp_a.public, &att_a)
            .unwrap_err();
        assert_eq!(err, ServerError::LinkFailed("unknown or consumed nonce"));
    }

    #[test]
    fn link_nonce_binds_to_its_own_account() {
        let mut fx = Fixture::new();
        // Two partial registrations: alice and bob both have outstanding links.
        let opt_alice = fx
            .server
            .begin_registration("alice", &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let kp_alice = keygen_from_rng(&mut fx.rng);
        let att = fx.attestation(&kp_alice, &opt_alice.challenge, 1);
        let _link_alice = fx
            .server
            .finish_registration_b("alice", &kp_alice.public, &att, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let opt_bob = fx
            .server
            .begin_registration("bob", &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let kp_bob = keygen_from_rng(&mut fx.rng);
        let att_bob = fx.attestation(&kp_bob, &opt_bob.challenge, 1);
        let link_bob = fx
            .server
            .finish_registration_b("bob", &kp_bob.public, &att_bob, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        // A key presented with bob's nonce lands on bob's account, never alice's.
        let kp_a = keygen_from_rng(&mut fx.rng);
        let att_a = fx.attestation(&kp_a, &link_bob.value, 1);
        let who = fx
            .server
            .finish_registration_a(&link_bob.value, &kp_a.public, &att_a)
            .unwrap();
        assert_eq!(who, "bob");
        assert!(fx.server.account("bob").unwrap().is_active());
        assert!(!fx.server.account("alice").unwrap().is_active());
    }

    #[test]
    fn bad_link_attestation_consumes_nonce() {
        let mut fx = Fixture::new();
        let opt = fx
            .server
            .begin_registration("alice", &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let kp_b = keygen_from_rng(&mut fx.rng);
        let att = fx.attestation(&kp_b, &opt.challenge, 1);
        let link = fx
            .server
            .finish_registration_b("alice", &kp_b.public, &att, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let kp_a = keygen_from_rng(&mut fx.rng);
        let wrong = fx.attestation(&kp_a, &Nonce([0u8; 32]), 1);
        let err = fx
            .server
            .finish_registration_a(&link.value, &kp_a.public, &wrong)
            .unwrap_err();
        assert_eq!(err, ServerError::LinkFailed("bad attestation"));
        // The nonce is gone: retry with a correct attestation now fails.
        let good = fx.attestation(&kp_a, &link.value, 1);
        let err = fx
            .server
            .finish_registration_a(&link.value, &kp_a.public, &good)
            .unwrap_err();
        assert_eq!(err, ServerError::LinkFailed("unknown or consumed nonce"));
    }

    #[test]
    fn transaction_refused_for_inactive_account() {
        let mut fx = Fixture::new();
        let err = fx
            .server
            .begin_transaction("alice", "pay", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap_err();
        assert_eq!(err, ServerError::TransactionRefused("alice".into()));
    }

    #[test]
    fn concurrent_transactions_have_distinct_challenges() {
        let mut fx = Fixture::new();
        fx.register("alice");
        let o1 = fx
            .server
            .begin_transaction("alice", "pay 1", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let o2 = fx
            .server
            .begin_transaction("alice", "pay 2", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        assert_ne!(o1.challenge, o2.challenge);
        assert_eq!(fx.server.pendings().len(), 2);
        assert!(o1.transaction_data.is_none() && o2.transaction_data.is_none());
    }

    #[test]
    fn honest_transaction_completes() {
        let mut fx = Fixture::new();
        let (kp_b, kp_a) = fx.register("alice");
        let opt = fx
            .server
            .begin_transaction("alice", "pay 10 to bob", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let a_b = fx.tx_assertion(&kp_b, &opt.challenge, 2, None);
        let opt_a = fx
            .server
            .finish_transaction_b("alice", &opt.challenge, &a_b, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        assert_eq!(opt_a.transaction_data.as_deref(), Some("pay 10 to bob"));
        let a_a = fx.tx_assertion(&kp_a, &opt_a.challenge, 2, Some("pay 10 to bob"));
        let data = fx
            .server
            .finish_transaction_a("alice", &opt_a.challenge, &a_a)
            .unwrap();
        assert_eq!(data, "pay 10 to bob");
        assert_eq!(
            fx.server.take_events(),
            vec![
                ServerEvent::Registered {
                    username: "alice".into()
                },
                ServerEvent::TransactionComplete {
                    username: "alice".into(),
                    data: "pay 10 to bob".into()
                }
            ]
        );
    }

    #[test]
    fn wrong_key_assertion_aborts() {
        let mut fx = Fixture::new();
        let (_kp_b, kp_a) = fx.register("alice");
        let opt = fx
            .server
            .begin_transaction("alice", "pay", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        // Signed with the device A key instead of B.
        let bad = fx.tx_assertion(&kp_a, &opt.challenge, 2, None);
        let err = fx
            .server
            .finish_transaction_b("alice", &opt.challenge, &bad, &mut fx.rng, &mut fx.nonces)
            .unwrap_err();
        assert_eq!(err, ServerError::TransactionAborted("bad signature"));
        assert_eq!(fx.server.pendings()[0].state, TxState::Aborted);
    }

    #[test]
    fn stagnant_counter_aborts_clone_detection() {
        let mut fx = Fixture::new();
        let (kp_b, _) = fx.register("alice");
        let opt = fx
            .server
            .begin_transaction("alice", "pay", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        // Counter stays at the registration value: cloned credential.
        let bad = fx.tx_assertion(&kp_b, &opt.challenge, 1, None);
        let err = fx
            .server
            .finish_transaction_b("alice", &opt.challenge, &bad, &mut fx.rng, &mut fx.nonces)
            .unwrap_err();
        assert_eq!(
            err,
            ServerError::TransactionAborted("counter not increased")
        );
    }

    #[test]
    fn manipulated_extension_data_aborts() {
        let mut fx = Fixture::new();
        let (kp_b, kp_a) = fx.register("alice");
        let opt = fx
            .server
            .begin_transaction("alice", "pay 10 to bob", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let a_b = fx.tx_assertion(&kp_b, &opt.challenge, 2, None);
        let opt_a = fx
            .server
            .finish_transaction_b("alice", &opt.challenge, &a_b, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let forged = fx.tx_assertion(&kp_a, &opt_a.challenge, 2, Some("pay 1000 to eve"));
        let err = fx
            .server
            .finish_transaction_a("alice", &opt_a.challenge, &forged)
            .unwrap_err();
        assert_eq!(
            err,
            ServerError::TransactionAborted("transaction data mismatch")
        );
        assert_eq!(fx.server.pendings()[0].state, TxState::Aborted);
    }

    #[test]
    fn replayed_device_a_assertion_rejected_on_fresh_pending() {
        let mut fx = Fixture::new();
        let (kp_b, kp_a) = fx.register("alice");
        // First full transaction.
        let opt = fx
            .server
            .begin_transaction("alice", "pay", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let a_b = fx.tx_assertion(&kp_b, &opt.challenge, 2, None);
        let opt_a = fx
            .server
            .finish_transaction_b("alice", &opt.challenge, &a_b, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let a_a = fx.tx_assertion(&kp_a, &opt_a.challenge, 2, Some("pay"));
        fx.server
            .finish_transaction_a("alice", &opt_a.challenge, &a_a)
            .unwrap();
        // Replay against the same (consumed) challenge.
        let err = fx
            .server
            .finish_transaction_a("alice", &opt_a.challenge, &a_a)
            .unwrap_err();
        assert_eq!(err, ServerError::UnknownChallenge);
        // Second transaction gets a fresh second challenge; the captured
        // assertion binds the old one and cannot complete it.
        let opt2 = fx
            .server
            .begin_transaction("alice", "pay", 10, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let a_b2 = fx.tx_assertion(&kp_b, &opt2.challenge, 3, None);
        let opt_a2 = fx
            .server
            .finish_transaction_b("alice", &opt2.challenge, &a_b2, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let err = fx
            .server
            .finish_transaction_a("alice", &opt_a2.challenge, &a_a)
            .unwrap_err();
        assert_eq!(err, ServerError::TransactionAborted("bad signature"));
    }

    #[test]
    fn aborted_pending_never_completes() {
        let mut fx = Fixture::new();
        let (kp_b, kp_a) = fx.register("alice");
        let opt = fx
            .server
            .begin_transaction("alice", "pay", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let a_b = fx.tx_assertion(&kp_b, &opt.challenge, 2, None);
        let opt_a = fx
            .server
            .finish_transaction_b("alice", &opt.challenge, &a_b, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        let forged = fx.tx_assertion(&kp_a, &opt_a.challenge, 2, Some("other"));
        let _ = fx
            .server
            .finish_transaction_a("alice", &opt_a.challenge, &forged)
            .unwrap_err();
        // The challenge of the aborted pending is dead: the honest assertion
        // now hits no live pending.
        let honest = fx.tx_assertion(&kp_a, &opt_a.challenge, 3, Some("pay"));
        let err = fx
            .server
            .finish_transaction_a("alice", &opt_a.challenge, &honest)
            .unwrap_err();
        assert_eq!(err, ServerError::UnknownChallenge);
    }

    #[test]
    fn assertion_for_another_username_aborts() {
        let mut fx = Fixture::new();
        let (kp_b, _) = fx.register("alice");
        fx.register("bob");
        let opt = fx
            .server
            .begin_transaction("alice", "pay", 0, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        // Signature and challenge are alice's, but the envelope names bob.
        let a_b = fx.tx_assertion(&kp_b, &opt.challenge, 2, None);
        let err = fx
            .server
            .finish_transaction_b("bob", &opt.challenge, &a_b, &mut fx.rng, &mut fx.nonces)
            .unwrap_err();
        assert_eq!(err, ServerError::TransactionAborted("username mismatch"));
        assert_eq!(fx.server.pendings()[0].state, TxState::Aborted);
    }

    #[test]
    fn pendings_expire_after_step_budget() {
        let mut fx = Fixture::new();
        fx.register("alice");
        fx.server
            .begin_transaction("alice", "pay", 5, &mut fx.rng, &mut fx.nonces)
            .unwrap();
        assert_eq!(fx.server.expire_pendings(100), 0);
        assert_eq!(fx.server.expire_pendings(106), 1);
        assert_eq!(fx.server.pendings()[0].state, TxState::Aborted);
    }
}
