//! Shared plumbing for the demo binaries: framed wire transport and the
//! relying-party network loop.
//!
//! Frames are the canonical message encoding prefixed with a 4-byte
//! big-endian length. The server speaks this over plain TCP on a local
//! endpoint; these binaries exist for the honest demo only, all security
//! experiments run through the harness.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use fido2d::crypto::{rng_from_seed, NonceRegistry, SimRng};
use fido2d::harness::{Label, TraceEvent};
use fido2d::messages::Message;
use fido2d::server::{AssertionOutcome, Server, ServerEvent};

/// Upper bound on a single frame; protocol messages are tiny.
const MAX_FRAME: u32 = 1 << 20;

pub fn write_frame(stream: &mut impl Write, message: &Message) -> io::Result<()> {
    let bytes = message
        .encode()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    stream.write_all(&(bytes.len() as u32).to_be_bytes())?;
    stream.write_all(&bytes)?;
    stream.flush()
}

pub fn read_frame(stream: &mut impl Read) -> io::Result<Message> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame too large",
        ));
    }
    let mut bytes = vec![0u8; len as usize];
    stream.read_exact(&mut bytes)?;
    Message::decode(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

struct ServerState {
    server: Server,
    rng: SimRng,
    nonces: NonceRegistry,
}

/// The relying party behind a TCP listener. Device A connections stay open
/// after linking and receive confirmation pushes on them.
pub struct WireServer {
    state: Mutex<ServerState>,
    a_streams: Mutex<HashMap<String, TcpStream>>,
    step: AtomicU64,
    on_event: Box<dyn Fn(TraceEvent) + Send + Sync>,
}

impl WireServer {
    pub fn new(
        server_id: &str,
        seed: u64,
        on_event: impl Fn(TraceEvent) + Send + Sync + 'static,
    ) -> Arc<Self> {
        Arc::new(WireServer {
            state: Mutex::new(ServerState {
                server: Server::new(server_id),
                rng: rng_from_seed(seed),
                nonces: NonceRegistry::new(),
            }),
            a_streams: Mutex::new(HashMap::new()),
            step: AtomicU64::new(0),
            on_event: Box::new(on_event),
        })
    }

    fn emit_events(&self, events: Vec<ServerEvent>, server_id: &str, step: u64) {
        for ev in events {
            let event = match ev {
                ServerEvent::Registered { username } => {
                    TraceEvent::new(step, Label::Registered, &username, server_id, "")
                }
                ServerEvent::TransactionComplete { username, data } => TraceEvent::new(
                    step,
                    Label::TransactionComplete,
                    &username,
                    server_id,
                    &data,
                ),
            };
            (self.on_event)(event);
        }
    }

    /// Accept loop; one thread per connection.
    pub fn serve(self: &Arc<Self>, listener: TcpListener) -> io::Result<()> {
        loop {
            let (stream, _) = listener.accept()?;
            let this = Arc::clone(self);
            std::thread::spawn(move || {
                let _ = this.handle_connection(stream);
            });
        }
    }

    fn handle_connection(&self, mut stream: TcpStream) -> io::Result<()> {
        loop {
            let message = match read_frame(&mut stream) {
                Ok(m) => m,
                Err(_) => return Ok(()), // disconnect or garbage: drop the connection
            };
            let step = self.step.fetch_add(1, Ordering::SeqCst) + 1;
            let reply = self.handle_message(message, step, &stream);
            if let Some(reply) = reply {
                write_frame(&mut stream, &reply)?;
            }
        }
    }

    fn handle_message(&self, message: Message, step: u64, stream: &TcpStream) -> Option<Message> {
        let mut state = self.state.lock().expect("server state poisoned");
        let ServerState {
            server,
            rng,
            nonces,
        } = &mut *state;
        server.expire_pendings(step);
        let server_id = server.server_id().to_string();
        let status = |ok: bool, detail: &str| {
            Some(Message::Status {
                ok,
                detail: detail.to_string(),
            })
        };
        let reply = match message {
            Message::RegisterRequest { username } => {
                match server.begin_registration(&username, rng, nonces) {
                    Ok(options) => Some(Message::RegistrationOptions(options)),
                    Err(e) => status(false, &e.to_string()),
                }
            }
            Message::RegisterFinish {
                username,
                public_key,
                attestation,
            } => match server.finish_registration_b(
                &username,
                &public_key,
                &attestation,
                rng,
                nonces,
            ) {
                Ok(link) => Some(Message::LinkNonce(link)),
                Err(e) => status(false, &e.to_string()),
            },
            Message::LinkRequest { nonce } => match server.link_options(&nonce) {
                Some(options) => Some(Message::RegistrationOptions(options)),
                None => status(false, "link failed: unknown or consumed nonce"),
            },
            Message::LinkFinish {
                nonce,
                public_key,
                attestation,
            } => match server.finish_registration_a(&nonce, &public_key, &attestation) {
                Ok(username) => {
                    // This connection becomes the push channel for device A.
                    if let Ok(clone) = stream.try_clone() {
                        self.a_streams
                            .lock()
                            .expect("a-streams poisoned")
                            .insert(username.clone(), clone);
                    }
                    status(true, &format!("account {username} active"))
                }
                Err(e) => status(false, &e.to_string()),
            },
            Message::TransactionRequest { username, data } => {
                match server.begin_transaction(&username, &data, step, rng, nonces) {
                    Ok(options) => Some(Message::TransactionChallenge {
                        username,
                        data,
                        options,
                    }),
                    Err(e) => status(false, &e.to_string()),
                }
            }
            Message::AssertionResponse {
                username,
                challenge,
                assertion,
            } => match server.handle_assertion(&username, &challenge, &assertion, rng, nonces) {
                Ok(AssertionOutcome::AwaitingSecondDevice(options)) => {
                    let push = Message::TransactionConfirm {
                        username: username.clone(),
                        options,
                    };
                    let mut streams = self.a_streams.lock().expect("a-streams poisoned");
                    match streams.get_mut(&username) {
                        Some(a_stream) => match write_frame(a_stream, &push) {
                            Ok(()) => status(true, "first ceremony verified; confirm on device A"),
                            Err(_) => status(false, "device A channel broken"),
                        },
                        None => status(false, "no device A channel for this account"),
                    }
                }
                Ok(AssertionOutcome::Completed(data)) => {
                    status(true, &format!("transaction complete: {data}"))
                }
                Err(e) => status(false, &e.to_string()),
            },
            other => status(false, &format!("unexpected {} message", other.kind())),
        };
        let events = server.take_events();
        drop(state);
        self.emit_events(events, &server_id, step);
        reply
    }
}

/// Client-side ceremony drivers used by the interactive binaries and the
/// demo.
pub mod client {
    use super::*;
    use fido2d::crypto::Nonce;
    use fido2d::devices::{Device, Role, UserMode, UserModel};
    use fido2d::messages::{LinkNonce, RegistrationOptions, TransactionOptions};

    fn unexpected(kind: &str) -> io::Error {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected {kind} message"),
        )
    }

    fn refused(detail: String) -> io::Error {
        io::Error::other(detail)
    }

    pub struct DeviceBClient {
        pub stream: TcpStream,
        pub device: Device,
        pub username: String,
    }

    impl DeviceBClient {
        pub fn connect(addr: &str, username: &str) -> io::Result<Self> {
            Ok(DeviceBClient {
                stream: TcpStream::connect(addr)?,
                device: Device::new(Role::B),
                username: username.to_string(),
            })
        }

        /// Register and return the link nonce to hand to device A.
        pub fn register(&mut self, rng: &mut SimRng) -> io::Result<LinkNonce> {
            write_frame(
                &mut self.stream,
                &Message::RegisterRequest {
                    username: self.username.clone(),
                },
            )?;
            let options: RegistrationOptions = match read_frame(&mut self.stream)? {
                Message::RegistrationOptions(o) => o,
                Message::Status { detail, .. } => return Err(refused(detail)),
                other => return Err(unexpected(other.kind())),
            };
            let (public_key, attestation) = self
                .device
                .create_credential(&options, true, rng)
                .map_err(|e| io::Error::other(e.to_string()))?;
            write_frame(
                &mut self.stream,
                &Message::RegisterFinish {
                    username: self.username.clone(),
                    public_key,
                    attestation,
                },
            )?;
            match read_frame(&mut self.stream)? {
                Message::LinkNonce(link) => Ok(link),
                Message::Status { detail, .. } => Err(refused(detail)),
                other => Err(unexpected(other.kind())),
            }
        }

        /// Initiate a transaction and sign the echoed challenge. Returns
        /// the server's status line for the first ceremony.
        pub fn transact(&mut self, data: &str) -> io::Result<String> {
            write_frame(
                &mut self.stream,
                &Message::TransactionRequest {
                    username: self.username.clone(),
                    data: data.to_string(),
                },
            )?;
            let (echoed_data, options) = match read_frame(&mut self.stream)? {
                Message::TransactionChallenge {
                    username,
                    data,
                    options,
                } if username == self.username => (data, options),
                Message::Status { detail, .. } => return Err(refused(detail)),
                other => return Err(unexpected(other.kind())),
            };
            // The response must answer this exact request.
            if echoed_data != data {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    "server response does not echo the initiated transaction",
                ));
            }
            let assertion = self
                .device
                .sign_challenge(&options, true)
                .map_err(|e| io::Error::other(e.to_string()))?;
            write_frame(
                &mut self.stream,
                &Message::AssertionResponse {
                    username: self.username.clone(),
                    challenge: options.challenge,
                    assertion,
                },
            )?;
            match read_frame(&mut self.stream)? {
                Message::Status { ok: true, detail } => Ok(detail),
                Message::Status { detail, .. } => Err(refused(detail)),
                other => Err(unexpected(other.kind())),
            }
        }
    }

    pub struct DeviceAClient {
        pub stream: TcpStream,
        pub device: Device,
        pub username: String,
        pub server_id: String,
    }

    impl DeviceAClient {
        /// Link with the nonce from the QR hand-off. The nonce text is
        /// validated on-device before anything is sent.
        pub fn link(addr: &str, link_hex: &str, rng: &mut SimRng) -> io::Result<Self> {
            let nonce = Nonce::from_hex(link_hex).ok_or_else(|| {
                io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "link text is not a valid nonce",
                )
            })?;
            let mut stream = TcpStream::connect(addr)?;
            write_frame(&mut stream, &Message::LinkRequest { nonce })?;
            let options = match read_frame(&mut stream)? {
                Message::RegistrationOptions(o) => o,
                Message::Status { detail, .. } => return Err(refused(detail)),
                other => return Err(unexpected(other.kind())),
            };
            if options.challenge != nonce {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    "server did not echo the link nonce",
                ));
            }
            let mut device = Device::new(Role::A);
            let (public_key, attestation, nonce) = device
                .link(link_hex, &options.server_id, true, rng)
                .map_err(|e| io::Error::other(e.to_string()))?;
            write_frame(
                &mut stream,
                &Message::LinkFinish {
                    nonce,
                    public_key,
                    attestation,
                },
            )?;
            match read_frame(&mut stream)? {
                Message::Status { ok: true, .. } => Ok(DeviceAClient {
                    stream,
                    device,
                    username: options.username,
                    server_id: options.server_id,
                }),
                Message::Status { detail, .. } => Err(refused(detail)),
                other => Err(unexpected(other.kind())),
            }
        }

        /// Block until the next confirmation push arrives.
        pub fn next_confirmation(&mut self) -> io::Result<TransactionOptions> {
            loop {
                match read_frame(&mut self.stream)? {
                    Message::TransactionConfirm { username, options }
                        if username == self.username && options.server_id == self.server_id =>
                    {
                        return Ok(options)
                    }
                    _ => continue,
                }
            }
        }

        /// Sign a confirmation the human approved. Interactive approval
        /// stands in for the user model: the caller did the comparing, so
        /// the model is armed with exactly what is displayed.
        pub fn confirm(&mut self, options: &TransactionOptions) -> io::Result<String> {
            let displayed = options.transaction_data.clone().unwrap_or_default();
            let mut approver = UserModel::new(UserMode::Compare);
            approver.set_intent(&options.server_id, &displayed);
            let assertion = self
                .device
                .confirm_transaction(options, &mut approver)
                .map_err(|e| io::Error::other(e.to_string()))?;
            write_frame(
                &mut self.stream,
                &Message::AssertionResponse {
                    username: self.username.clone(),
                    challenge: options.challenge,
                    assertion,
                },
            )?;
            match read_frame(&mut self.stream)? {
                Message::Status { ok: true, detail } => Ok(detail),
                Message::Status { detail, .. } => Err(refused(detail)),
                other => Err(unexpected(other.kind())),
            }
        }
    }
}
