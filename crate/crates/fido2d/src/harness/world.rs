//! Deterministic execution of schedules against servers, devices, the
//! network and the adversary.
//!
//! Each applied action is one step. Honest agents react to deliveries:
//! device B signs a challenge only when the response provably answers a
//! transaction it initiated itself (the response must arrive authentically
//! from the named origin and echo the initiated username and data, which is
//! what the request/response pairing of the underlying transport provides),
//! and device A confirms only what its user model accepts. Registration
//! runs as an atomic trusted ceremony — devices are not compromised during
//! registration — after which account identities and public keys leak to
//! the adversary.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::adversary::{Adversary, Endpoint, InFlight, Network, NetworkError};
use crate::crypto::{rng_from_seed, NonceRegistry, SimRng, SIGNATURE_ALGORITHM};
use crate::devices::{Device, Role, UserModel};
use crate::messages::Message;
use crate::server::{AssertionOutcome, Server, ServerEvent};

use super::schedule::{Action, Bounds, ChallengeSource, CounterSource, Schedule};
use super::trace::{Label, TraceEvent};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("action {index}: unknown {kind} {name:?}")]
    UnknownEntity {
        index: usize,
        kind: &'static str,
        name: String,
    },
    #[error("action {index}: {reason}")]
    Invalid { index: usize, reason: String },
}

/// Why an action had no (or only a logged) effect. Applying actions never
/// crashes the run: refusals are part of the modeled behavior.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActionError {
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("adversary: {0}")]
    Adversary(#[from] crate::adversary::AdversaryError),
    #[error("server: {0}")]
    Server(#[from] crate::server::ServerError),
    #[error("device: {0}")]
    Device(#[from] crate::devices::DeviceError),
    #[error("no such server {0:?}")]
    NoSuchServer(String),
    #[error("no such account {0:?} at {1:?}")]
    NoSuchParty(String, String),
    #[error("duplicate server {0:?}")]
    DuplicateServer(String),
    #[error("account limit reached")]
    AccountLimit,
    #[error("transaction limit reached")]
    TransactionLimit,
    #[error("phisher id {0:?} is a registered honest server")]
    PhisherIsHonest(String),
    #[error("phisher {0:?} has no outstanding lure for this user")]
    NoPhishedRequest(String),
    #[error("{0}")]
    Other(String),
}

/// The result of executing a schedule: the event trace and the full
/// structured log (byte-identical across runs with the same schedule).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceEvent>,
    pub log: String,
    pub steps_executed: u64,
}

/// Per-account agents: the two devices and the user model, plus the
/// transaction contexts device B currently has open.
#[derive(Debug, Clone)]
pub struct Party {
    pub device_b: Device,
    pub device_a: Device,
    pub user: UserModel,
    /// Open transaction contexts on B: (origin server identity, data).
    /// One-shot: signing a challenge consumes its context.
    b_contexts: Vec<(String, String)>,
}

impl Party {
    fn new(mode: crate::devices::UserMode) -> Self {
        Party {
            device_b: Device::new(Role::B),
            device_a: Device::new(Role::A),
            user: UserModel::new(mode),
            b_contexts: Vec::new(),
        }
    }
}

/// The whole simulated world, advanced one action at a time.
pub struct World {
    seed: u64,
    pub step: u64,
    rng: SimRng,
    nonces: NonceRegistry,
    servers: BTreeMap<String, Server>,
    parties: BTreeMap<(String, String), Party>,
    phishers: BTreeSet<String>,
    network: Network,
    adversary: Adversary,
    trace: Vec<TraceEvent>,
    log: Vec<String>,
    bounds: Bounds,
    transactions_initiated: u64,
}

impl World {
    pub fn new(seed: u64, bounds: Bounds) -> Self {
        let mut world = World {
            seed,
            step: 0,
            rng: rng_from_seed(seed),
            nonces: NonceRegistry::new(),
            servers: BTreeMap::new(),
            parties: BTreeMap::new(),
            phishers: BTreeSet::new(),
            network: Network::new(),
            adversary: Adversary::new(),
            trace: Vec::new(),
            log: Vec::new(),
            bounds,
            transactions_initiated: 0,
        };
        world.log.push(format!(
            "# run algorithm={SIGNATURE_ALGORITHM} seed={seed} max-steps={} max-accounts={} max-transactions={} pending-expiry={}",
            bounds.max_steps, bounds.max_accounts, bounds.max_transactions, bounds.pending_expiry_steps
        ));
        world
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn log_text(&self) -> String {
        self.log.join("\n")
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn adversary(&self) -> &Adversary {
        &self.adversary
    }

    pub fn server(&self, server_id: &str) -> Option<&Server> {
        self.servers.get(server_id)
    }

    pub fn party(&self, username: &str, server_id: &str) -> Option<&Party> {
        self.parties
            .get(&(username.to_string(), server_id.to_string()))
    }

    pub fn server_ids(&self) -> Vec<String> {
        self.servers.keys().cloned().collect()
    }

    pub fn party_ids(&self) -> Vec<(String, String)> {
        self.parties.keys().cloned().collect()
    }

    pub fn phisher_ids(&self) -> Vec<String> {
        self.phishers.iter().cloned().collect()
    }

    pub fn transactions_initiated(&self) -> u64 {
        self.transactions_initiated
    }

    fn logln(&mut self, text: String) {
        self.log.push(format!("[{}] {}", self.step, text));
    }

    fn emit(&mut self, label: Label, initiator: &str, server: &str, transaction: &str) {
        let event = TraceEvent::new(self.step, label, initiator, server, transaction);
        self.log
            .push(format!("[{}] event {}", self.step, event.to_json_line()));
        self.trace.push(event);
    }

    /// Send a message: the adversary observes every send.
    fn send(&mut self, msg: InFlight) {
        let observed = self.adversary.observe(&msg);
        let kind = self.adversary.observed()[observed]
            .decoded
            .as_ref()
            .map(|m| m.kind())
            .unwrap_or("raw-bytes");
        self.logln(format!(
            "send {} -> {} authentic={} kind={}",
            msg.origin, msg.dest, msg.authentic, kind,
        ));
        self.network.push(msg);
    }

    fn drain_server_events(&mut self, server_id: &str) {
        let events = match self.servers.get_mut(server_id) {
            Some(s) => s.take_events(),
            None => return,
        };
        for ev in events {
            match ev {
                ServerEvent::Registered { username } => {
                    self.emit(Label::Registered, &username, server_id, "");
                }
                ServerEvent::TransactionComplete { username, data } => {
                    self.emit(Label::TransactionComplete, &username, server_id, &data);
                }
            }
        }
    }

    /// Execute one action. Errors are reported and logged but leave the
    /// world consistent; the schedule simply moves on. The one exception is
    /// a nonce registry collision, which signals broken random-source
    /// discipline and aborts the run.
    pub fn apply(&mut self, action: &Action) -> Result<(), ActionError> {
        self.step += 1;
        self.logln(format!("action {}", action.format_line()));
        let result = self.dispatch(action);
        if let Err(e) = &result {
            assert!(
                !matches!(
                    e,
                    ActionError::Server(crate::server::ServerError::NonceExhausted)
                ),
                "nonce registry collision: the run's random source is broken"
            );
            self.logln(format!("refused: {e}"));
        }
        // Pending transactions age by scheduler steps.
        let now = self.step;
        let expiry: Vec<(String, usize)> = self
            .servers
            .iter_mut()
            .map(|(id, s)| (id.clone(), s.expire_pendings(now)))
            .filter(|(_, n)| *n > 0)
            .collect();
        for (id, n) in expiry {
            self.logln(format!("server {id}: {n} pending transaction(s) expired"));
        }
        result
    }

    fn dispatch(&mut self, action: &Action) -> Result<(), ActionError> {
        match action {
            Action::NewServer { server_id } => self.new_server(server_id),
            Action::Register {
                username,
                server_id,
                mode,
            } => self.register(username, server_id, *mode),
            Action::InitTransaction {
                username,
                server_id,
                data,
            } => self.init_transaction(username, server_id, data),
            Action::Deliver { index } => self.deliver(*index),
            Action::Observe => {
                // Every send is observed as it happens, so the in-flight
                // bytes are already knowledge; this probe just confirms it.
                let in_flight_known = self
                    .network
                    .iter()
                    .filter(|m| self.adversary.knows_bytes(&m.bytes))
                    .count();
                debug_assert_eq!(in_flight_known, self.network.len());
                self.logln(format!(
                    "observe: {} in-flight message(s) known, knowledge size {}",
                    in_flight_known,
                    self.adversary.knowledge_len()
                ));
                Ok(())
            }
            Action::Drop { index } => {
                let msg = self.network.take(*index)?;
                self.logln(format!("dropped {} -> {}", msg.origin, msg.dest));
                Ok(())
            }
            Action::Replay { observed, dest } => self.replay(*observed, dest.clone()),
            Action::Modify { index, patch } => {
                let msg = self.network.get(*index)?.clone();
                if msg.authentic {
                    return Err(NetworkError::AuthenticChannel.into());
                }
                let bytes = self.adversary.patch_bytes(&msg.bytes, patch)?;
                self.adversary.note_composed(&bytes);
                self.network.modify(*index, bytes)?;
                self.logln(format!("modified in-flight message {index} ({patch})"));
                Ok(())
            }
            Action::InjectRequest {
                username,
                server_id,
                data,
            } => {
                let bytes = Message::TransactionRequest {
                    username: username.clone(),
                    data: data.clone(),
                }
                .encode()
                .map_err(|e| ActionError::Other(e.to_string()))?;
                self.send(InFlight {
                    origin: Endpoint::DeviceB {
                        username: username.clone(),
                        server_id: server_id.clone(),
                    },
                    dest: Endpoint::Server(server_id.clone()),
                    authentic: false,
                    bytes,
                });
                Ok(())
            }
            Action::InjectAssertion {
                username,
                server_id,
                device,
                challenge,
                counter,
                user_verified,
                data,
            } => self.inject_assertion(
                username,
                server_id,
                *device,
                challenge,
                *counter,
                *user_verified,
                data.clone(),
            ),
            Action::InjectBytes {
                origin,
                dest,
                bytes,
            } => {
                // Raw injection is always non-authentic: authenticity cannot
                // be minted, only honest servers produce it.
                self.send(InFlight {
                    origin: origin.clone(),
                    dest: dest.clone(),
                    authentic: false,
                    bytes: bytes.clone(),
                });
                Ok(())
            }
            Action::Compromise {
                username,
                server_id,
                device,
            } => self.compromise(username, server_id, *device),
            Action::Phish {
                username,
                server_id,
                phisher,
                data,
            } => self.phish(username, server_id, phisher, data),
            Action::PhisherRespond {
                username,
                server_id,
                phisher,
                challenge,
                data,
            } => self.phisher_respond(username, server_id, phisher, challenge, data.clone()),
        }
    }

    fn new_server(&mut self, server_id: &str) -> Result<(), ActionError> {
        if self.servers.contains_key(server_id) {
            return Err(ActionError::DuplicateServer(server_id.to_string()));
        }
        self.servers.insert(
            server_id.to_string(),
            Server::with_pending_expiry(server_id, self.bounds.pending_expiry_steps),
        );
        self.emit(Label::NewServer, "", server_id, "");
        Ok(())
    }

    /// Both registration ceremonies, atomically. The link nonce travels
    /// B -> A as hex text (the QR hand-off); it never crosses the
    /// adversarial network. Public identities leak afterwards.
    fn register(
        &mut self,
        username: &str,
        server_id: &str,
        mode: crate::devices::UserMode,
    ) -> Result<(), ActionError> {
        if self.parties.len() as u64 >= self.bounds.max_accounts {
            return Err(ActionError::AccountLimit);
        }
        let key = (username.to_string(), server_id.to_string());
        if self.parties.contains_key(&key) {
            return Err(ActionError::Other(format!(
                "account {username}@{server_id} already registered"
            )));
        }
        let server = self
            .servers
            .get_mut(server_id)
            .ok_or_else(|| ActionError::NoSuchServer(server_id.to_string()))?;
        let mut party = Party::new(mode);
        let opt = server.begin_registration(username, &mut self.rng, &mut self.nonces)?;
        let (pub_b, att_b) = party
            .device_b
            .create_credential(&opt, true, &mut self.rng)?;
        let link = server.finish_registration_b(
            username,
            &pub_b,
            &att_b,
            &mut self.rng,
            &mut self.nonces,
        )?;
        let (pub_a, att_a, nonce) =
            party
                .device_a
                .link(&link.value.to_hex(), server_id, true, &mut self.rng)?;
        server.finish_registration_a(&nonce, &pub_a, &att_a)?;
        self.parties.insert(key, party);
        // What a server breach would reveal: account name and public keys.
        self.adversary.learn_public(username.as_bytes());
        self.adversary.learn_public(pub_b.as_bytes());
        self.adversary.learn_public(pub_a.as_bytes());
        self.logln(format!(
            "registered {username}@{server_id}; public keys leaked to adversary"
        ));
        self.drain_server_events(server_id);
        Ok(())
    }

    fn init_transaction(
        &mut self,
        username: &str,
        server_id: &str,
        data: &str,
    ) -> Result<(), ActionError> {
        if self.transactions_initiated >= self.bounds.max_transactions {
            return Err(ActionError::TransactionLimit);
        }
        let key = (username.to_string(), server_id.to_string());
        let party = self
            .parties
            .get_mut(&key)
            .ok_or_else(|| ActionError::NoSuchParty(username.to_string(), server_id.to_string()))?;
        party.user.set_intent(server_id, data);
        party
            .b_contexts
            .push((server_id.to_string(), data.to_string()));
        self.transactions_initiated += 1;
        self.emit(Label::TransactionBegin, username, server_id, data);
        let bytes = Message::TransactionRequest {
            username: username.to_string(),
            data: data.to_string(),
        }
        .encode()
        .map_err(|e| ActionError::Other(e.to_string()))?;
        self.send(InFlight {
            origin: Endpoint::DeviceB {
                username: username.to_string(),
                server_id: server_id.to_string(),
            },
            dest: Endpoint::Server(server_id.to_string()),
            authentic: false,
            bytes,
        });
        Ok(())
    }

    fn deliver(&mut self, index: usize) -> Result<(), ActionError> {
        let msg = self.network.take(index)?;
        self.logln(format!(
            "deliver {} -> {} authentic={}",
            msg.origin, msg.dest, msg.authentic
        ));
        match msg.dest.clone() {
            Endpoint::Server(server_id) => self.deliver_to_server(&server_id, msg),
            Endpoint::DeviceB {
                username,
                server_id,
            } => self.deliver_to_device_b(&username, &server_id, msg),
            Endpoint::DeviceA {
                username,
                server_id,
            } => self.deliver_to_device_a(&username, &server_id, msg),
            Endpoint::Phisher(id) => {
                // The phisher is the adversary; the bytes are already in its
                // knowledge from the send.
                self.logln(format!("phisher {id} absorbed the message"));
                Ok(())
            }
        }
    }

    fn deliver_to_server(&mut self, server_id: &str, msg: InFlight) -> Result<(), ActionError> {
        if !self.servers.contains_key(server_id) {
            self.logln(format!("no server {server_id}; message discarded"));
            return Ok(());
        }
        let decoded = match Message::decode(&msg.bytes) {
            Ok(m) => m,
            Err(e) => {
                self.logln(format!("server {server_id}: malformed message ({e})"));
                return Ok(());
            }
        };
        match decoded {
            Message::TransactionRequest { username, data } => {
                let now = self.step;
                let server = self.servers.get_mut(server_id).expect("checked");
                match server.begin_transaction(
                    &username,
                    &data,
                    now,
                    &mut self.rng,
                    &mut self.nonces,
                ) {
                    Ok(options) => {
                        self.logln(format!(
                            "server {server_id}: pending transaction opened for {username}"
                        ));
                        let bytes = Message::TransactionChallenge {
                            username: username.clone(),
                            data,
                            options,
                        }
                        .encode()
                        .expect("server output is well-formed");
                        // The response goes back to whoever the request
                        // claimed to come from, over the authentic channel.
                        self.send(InFlight {
                            origin: Endpoint::Server(server_id.to_string()),
                            dest: msg.origin,
                            authentic: true,
                            bytes,
                        });
                    }
                    Err(e) => self.logln(format!("server {server_id}: {e}")),
                }
            }
            Message::AssertionResponse {
                username,
                challenge,
                assertion,
            } => {
                let server = self.servers.get_mut(server_id).expect("checked");
                match server.handle_assertion(
                    &username,
                    &challenge,
                    &assertion,
                    &mut self.rng,
                    &mut self.nonces,
                ) {
                    Ok(AssertionOutcome::AwaitingSecondDevice(options)) => {
                        self.logln(format!(
                            "server {server_id}: first ceremony verified for {username}; pushing confirmation"
                        ));
                        let bytes = Message::TransactionConfirm {
                            username: username.clone(),
                            options,
                        }
                        .encode()
                        .expect("server output is well-formed");
                        self.send(InFlight {
                            origin: Endpoint::Server(server_id.to_string()),
                            dest: Endpoint::DeviceA {
                                username,
                                server_id: server_id.to_string(),
                            },
                            authentic: true,
                            bytes,
                        });
                    }
                    Ok(AssertionOutcome::Completed(data)) => {
                        self.logln(format!(
                            "server {server_id}: transaction complete for {username} data={data:?}"
                        ));
                    }
                    Err(e) => self.logln(format!("server {server_id}: {e}")),
                }
                self.drain_server_events(server_id);
            }
            Message::RegisterRequest { .. }
            | Message::RegisterFinish { .. }
            | Message::LinkRequest { .. }
            | Message::LinkFinish { .. } => {
                // Registration is a trusted ceremony: it does not run over
                // the adversarial network in simulation.
                self.logln(format!(
                    "server {server_id}: registration messages are not accepted over the simulated network"
                ));
            }
            other => {
                self.logln(format!(
                    "server {server_id}: ignored {} message",
                    other.kind()
                ));
            }
        }
        Ok(())
    }

    /// Device B accepts a challenge only when the response authentically
    /// originates from the named server (or from the phisher the user is
    /// actually talking to) and echoes a transaction context it opened.
    fn deliver_to_device_b(
        &mut self,
        username: &str,
        server_id: &str,
        msg: InFlight,
    ) -> Result<(), ActionError> {
        let key = (username.to_string(), server_id.to_string());
        if !self.parties.contains_key(&key) {
            self.logln(format!(
                "no device-b agent {username}@{server_id}; discarded"
            ));
            return Ok(());
        }
        let decoded = match Message::decode(&msg.bytes) {
            Ok(m) => m,
            Err(e) => {
                self.logln(format!("device-b {username}: malformed message ({e})"));
                return Ok(());
            }
        };
        let Message::TransactionChallenge {
            username: echoed_user,
            data,
            options,
        } = decoded
        else {
            self.logln(format!(
                "device-b {username}: ignored {} message",
                decoded_kind(&msg.bytes)
            ));
            return Ok(());
        };
        if echoed_user != username {
            self.logln(format!("device-b {username}: response names another user"));
            return Ok(());
        }
        let origin_id = options.server_id.clone();
        let origin_ok = if self.servers.contains_key(&origin_id) {
            // Claims to come from an honest server: only the authentic
            // channel can carry that.
            msg.authentic && msg.origin == Endpoint::Server(origin_id.clone())
        } else if self.phishers.contains(&origin_id) {
            msg.origin == Endpoint::Phisher(origin_id.clone())
        } else {
            false
        };
        if !origin_ok {
            self.logln(format!(
                "device-b {username}: rejected challenge claiming origin {origin_id} (unauthentic)"
            ));
            return Ok(());
        }
        let party = self.parties.get_mut(&key).expect("checked");
        let Some(pos) = party
            .b_contexts
            .iter()
            .position(|(origin, d)| *origin == origin_id && *d == data)
        else {
            self.logln(format!(
                "device-b {username}: no transaction context matches this response; not signing"
            ));
            return Ok(());
        };
        party.b_contexts.remove(pos);
        match party.device_b.sign_challenge(&options, true) {
            Ok(assertion) => {
                let reply_dest = if self.phishers.contains(&origin_id) {
                    Endpoint::Phisher(origin_id.clone())
                } else {
                    Endpoint::Server(origin_id.clone())
                };
                self.logln(format!(
                    "device-b {username}: signed challenge for {origin_id}"
                ));
                let bytes = Message::AssertionResponse {
                    username: username.to_string(),
                    challenge: options.challenge,
                    assertion,
                }
                .encode()
                .expect("device output is well-formed");
                self.send(InFlight {
                    origin: Endpoint::DeviceB {
                        username: username.to_string(),
                        server_id: server_id.to_string(),
                    },
                    dest: reply_dest,
                    authentic: false,
                    bytes,
                });
            }
            Err(e) => self.logln(format!("device-b {username}: {e}")),
        }
        Ok(())
    }

    /// Device A acts only on authentic pushes from its own server and asks
    /// the user model before signing.
    fn deliver_to_device_a(
        &mut self,
        username: &str,
        server_id: &str,
        msg: InFlight,
    ) -> Result<(), ActionError> {
        let key = (username.to_string(), server_id.to_string());
        if !self.parties.contains_key(&key) {
            self.logln(format!(
                "no device-a agent {username}@{server_id}; discarded"
            ));
            return Ok(());
        }
        let decoded = match Message::decode(&msg.bytes) {
            Ok(m) => m,
            Err(e) => {
                self.logln(format!("device-a {username}: malformed message ({e})"));
                return Ok(());
            }
        };
        let Message::TransactionConfirm {
            username: echoed_user,
            options,
        } = decoded
        else {
            self.logln(format!(
                "device-a {username}: ignored {} message",
                decoded_kind(&msg.bytes)
            ));
            return Ok(());
        };
        if echoed_user != username {
            self.logln(format!("device-a {username}: push names another user"));
            return Ok(());
        }
        // A's credential is scoped to its home server; pushes must arrive
        // authentically from it.
        if options.server_id != server_id
            || !msg.authentic
            || msg.origin != Endpoint::Server(server_id.to_string())
        {
            self.logln(format!(
                "device-a {username}: rejected push (wrong or unauthentic origin)"
            ));
            return Ok(());
        }
        let party = self.parties.get_mut(&key).expect("checked");
        match party
            .device_a
            .confirm_transaction(&options, &mut party.user)
        {
            Ok(assertion) => {
                self.logln(format!(
                    "device-a {username}: user confirmed {:?}",
                    options.transaction_data.as_deref().unwrap_or_default()
                ));
                let bytes = Message::AssertionResponse {
                    username: username.to_string(),
                    challenge: options.challenge,
                    assertion,
                }
                .encode()
                .expect("device output is well-formed");
                self.send(InFlight {
                    origin: Endpoint::DeviceA {
                        username: username.to_string(),
                        server_id: server_id.to_string(),
                    },
                    dest: Endpoint::Server(server_id.to_string()),
                    authentic: false,
                    bytes,
                });
            }
            Err(e) => self.logln(format!("device-a {username}: {e}")),
        }
        Ok(())
    }

    fn replay(&mut self, observed: usize, dest: Option<Endpoint>) -> Result<(), ActionError> {
        let obs = self
            .adversary
            .observed()
            .get(observed)
            .ok_or(crate::adversary::AdversaryError::NoSuchObservation(
                observed,
            ))?
            .clone();
        // Verbatim re-send. Authentic messages keep origin and content; the
        // destination is the adversary's choice either way.
        let msg = InFlight {
            origin: obs.origin.clone(),
            dest: dest.unwrap_or(obs.dest.clone()),
            authentic: obs.authentic,
            bytes: obs.bytes.clone(),
        };
        self.logln(format!("replayed observed message {observed}"));
        self.send(msg);
        Ok(())
    }

    // Mirrors the fields of the inject-assertion action.
    #[allow(clippy::too_many_arguments)]
    fn inject_assertion(
        &mut self,
        username: &str,
        server_id: &str,
        device: Role,
        challenge: &ChallengeSource,
        counter: CounterSource,
        user_verified: bool,
        data: Option<String>,
    ) -> Result<(), ActionError> {
        let challenge = match challenge {
            ChallengeSource::Observed(i) => self.adversary.challenge_from_observed(*i)?,
            ChallengeSource::Literal(n) => *n,
        };
        let counter = match counter {
            CounterSource::Explicit(n) => n,
            CounterSource::Auto => {
                // The compromise handle lets the adversary read the live
                // device counter.
                let live = self
                    .parties
                    .get(&(username.to_string(), server_id.to_string()))
                    .map(|p| match device {
                        Role::B => p.device_b.counter(),
                        Role::A => p.device_a.counter(),
                    })
                    .unwrap_or(0);
                self.adversary
                    .next_counter(username, server_id, device, live)
            }
        };
        let assertion = self.adversary.compose_assertion(
            username,
            server_id,
            device,
            &challenge,
            counter,
            user_verified,
            data,
        )?;
        let origin = match device {
            Role::B => Endpoint::DeviceB {
                username: username.to_string(),
                server_id: server_id.to_string(),
            },
            Role::A => Endpoint::DeviceA {
                username: username.to_string(),
                server_id: server_id.to_string(),
            },
        };
        let bytes = Message::AssertionResponse {
            username: username.to_string(),
            challenge,
            assertion,
        }
        .encode()
        .map_err(|e| ActionError::Other(e.to_string()))?;
        self.send(InFlight {
            origin,
            dest: Endpoint::Server(server_id.to_string()),
            authentic: false,
            bytes,
        });
        Ok(())
    }

    fn compromise(
        &mut self,
        username: &str,
        server_id: &str,
        device: Role,
    ) -> Result<(), ActionError> {
        let key = (username.to_string(), server_id.to_string());
        let party = self
            .parties
            .get_mut(&key)
            .ok_or_else(|| ActionError::NoSuchParty(username.to_string(), server_id.to_string()))?;
        let (leak, label) = match device {
            Role::B => (party.device_b.compromise(), Label::CompromiseDev1),
            Role::A => (party.device_a.compromise(), Label::CompromiseDev2),
        };
        match leak.secret {
            Some(secret) => {
                self.adversary
                    .leak_key(username, server_id, device, secret, leak.counter);
                self.emit(label, username, server_id, "");
                self.logln(format!(
                    "compromised {} of {username}@{server_id}; key leaked",
                    match device {
                        Role::B => "device B",
                        Role::A => "device A",
                    }
                ));
            }
            None => {
                // Devices are not compromised during registration: without a
                // credential nothing leaks and no event is recorded.
                self.logln(format!(
                    "compromise of {username}@{server_id} recorded, but no credential existed; nothing leaked"
                ));
            }
        }
        Ok(())
    }

    fn phish(
        &mut self,
        username: &str,
        server_id: &str,
        phisher: &str,
        data: &str,
    ) -> Result<(), ActionError> {
        if self.servers.contains_key(phisher) {
            // Honest servers cannot be used in phishing attacks.
            return Err(ActionError::PhisherIsHonest(phisher.to_string()));
        }
        let key = (username.to_string(), server_id.to_string());
        let party = self
            .parties
            .get_mut(&key)
            .ok_or_else(|| ActionError::NoSuchParty(username.to_string(), server_id.to_string()))?;
        self.phishers.insert(phisher.to_string());
        // The lure always succeeds: the user believes she is initiating a
        // transaction at the site she sees, so her intent names the phisher.
        party.user.set_intent(phisher, data);
        party
            .b_contexts
            .push((phisher.to_string(), data.to_string()));
        self.emit(Label::PhishBegin, username, phisher, data);
        let bytes = Message::TransactionRequest {
            username: username.to_string(),
            data: data.to_string(),
        }
        .encode()
        .map_err(|e| ActionError::Other(e.to_string()))?;
        self.send(InFlight {
            origin: Endpoint::DeviceB {
                username: username.to_string(),
                server_id: server_id.to_string(),
            },
            dest: Endpoint::Phisher(phisher.to_string()),
            authentic: false,
            bytes,
        });
        Ok(())
    }

    /// The phisher answers its victim: arbitrary challenge, arbitrary data.
    /// By default it echoes the data the victim sent, which is what a
    /// convincing phishing site does.
    fn phisher_respond(
        &mut self,
        username: &str,
        server_id: &str,
        phisher: &str,
        challenge: &ChallengeSource,
        data: Option<String>,
    ) -> Result<(), ActionError> {
        if !self.phishers.contains(phisher) {
            return Err(ActionError::NoPhishedRequest(phisher.to_string()));
        }
        let challenge = match challenge {
            ChallengeSource::Observed(i) => self.adversary.challenge_from_observed(*i)?,
            ChallengeSource::Literal(n) => *n,
        };
        let data = match data {
            Some(d) => d,
            None => self
                .adversary
                .observed()
                .iter()
                .rev()
                .find_map(|o| match (&o.dest, &o.decoded) {
                    (
                        Endpoint::Phisher(p),
                        Some(Message::TransactionRequest {
                            username: u,
                            data: d,
                        }),
                    ) if p == phisher && u == username => Some(d.clone()),
                    _ => None,
                })
                .ok_or_else(|| ActionError::NoPhishedRequest(phisher.to_string()))?,
        };
        let bytes = Message::TransactionChallenge {
            username: username.to_string(),
            data,
            options: crate::messages::TransactionOptions {
                challenge,
                server_id: phisher.to_string(),
                transaction_data: None,
            },
        }
        .encode()
        .map_err(|e| ActionError::Other(e.to_string()))?;
        self.send(InFlight {
            origin: Endpoint::Phisher(phisher.to_string()),
            dest: Endpoint::DeviceB {
                username: username.to_string(),
                server_id: server_id.to_string(),
            },
            authentic: false,
            bytes,
        });
        Ok(())
    }

    /// Structural audit: uncompromised devices never leak key material.
    fn audit(&self) {
        for ((username, server_id), party) in &self.parties {
            if !party.device_b.is_compromised() {
                assert!(
                    !self.adversary.has_key(username, server_id, Role::B),
                    "key of uncompromised device B leaked"
                );
            }
            if !party.device_a.is_compromised() {
                assert!(
                    !self.adversary.has_key(username, server_id, Role::A),
                    "key of uncompromised device A leaked"
                );
            }
        }
    }
}

fn decoded_kind(bytes: &[u8]) -> &'static str {
    Message::decode(bytes)
        .map(|m| m.kind())
        .unwrap_or("raw-bytes")
}

/// Check that a schedule only names entities it introduced. Runs before any
/// step executes.
pub fn validate(schedule: &Schedule) -> Result<(), ScheduleError> {
    let mut servers: BTreeSet<&str> = BTreeSet::new();
    let mut parties: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut phishers: BTreeSet<&str> = BTreeSet::new();
    for (index, action) in schedule.actions.iter().enumerate() {
        let unknown = |kind: &'static str, name: &str| ScheduleError::UnknownEntity {
            index,
            kind,
            name: name.to_string(),
        };
        match action {
            Action::NewServer { server_id } => {
                servers.insert(server_id.as_str());
            }
            Action::Register {
                username,
                server_id,
                ..
            } => {
                if !servers.contains(server_id.as_str()) {
                    return Err(unknown("server", server_id));
                }
                parties.insert((username.as_str(), server_id.as_str()));
            }
            Action::InitTransaction {
                username,
                server_id,
                ..
            }
            | Action::Compromise {
                username,
                server_id,
                ..
            } => {
                if !parties.contains(&(username.as_str(), server_id.as_str())) {
                    return Err(unknown("account", &format!("{username}@{server_id}")));
                }
            }
            Action::Phish {
                username,
                server_id,
                phisher,
                ..
            } => {
                if !parties.contains(&(username.as_str(), server_id.as_str())) {
                    return Err(unknown("account", &format!("{username}@{server_id}")));
                }
                if servers.contains(phisher.as_str()) {
                    return Err(ScheduleError::Invalid {
                        index,
                        reason: format!("phisher {phisher:?} is a registered honest server"),
                    });
                }
                phishers.insert(phisher.as_str());
            }
            Action::PhisherRespond { phisher, .. } if !phishers.contains(phisher.as_str()) => {
                return Err(unknown("phisher", phisher));
            }
            // Injection targets and message selectors are adversary probes:
            // arbitrary names and dynamic indices are legitimate attack
            // surface, resolved at execution time.
            _ => {}
        }
    }
    Ok(())
}

/// Execute a schedule from scratch. Identical schedules produce
/// byte-identical logs and traces.
pub fn run(schedule: &Schedule) -> Result<RunOutput, ScheduleError> {
    validate(schedule)?;
    let mut world = World::new(schedule.seed, schedule.bounds);
    for action in &schedule.actions {
        if world.step >= schedule.bounds.max_steps {
            world.logln("step budget exhausted".to_string());
            break;
        }
        let _ = world.apply(action);
    }
    world.audit();
    Ok(RunOutput {
        steps_executed: world.step,
        trace: world.trace,
        log: world.log.join("\n"),
    })
}
