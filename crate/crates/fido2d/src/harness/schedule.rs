//! Schedules: the ordered honest and adversary actions of one run, plus the
//! scenario text format they serialize to.
//!
//! One action per line, `key=value` arguments, `#` comments. Values are
//! bare tokens or double-quoted strings with `\"` and `\\` escapes.
//! In-flight message selectors (`index=`) address the live network queue,
//! oldest first; `observed=` selectors address the adversary's observation
//! history in capture order. The grammar is documented in
//! `docs/scenarios.md`.

use std::fmt;

use thiserror::Error;

use crate::adversary::{Endpoint, Patch};
use crate::crypto::Nonce;
use crate::devices::{Role, UserMode};

/// Run limits. Defaults keep randomized schedules finite and fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub max_steps: u64,
    pub max_accounts: u64,
    pub max_transactions: u64,
    pub pending_expiry_steps: u64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_steps: 200,
            max_accounts: 3,
            max_transactions: 5,
            pending_expiry_steps: 100,
        }
    }
}

/// Where an injected assertion takes its challenge from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChallengeSource {
    /// Extracted from a previously observed message.
    Observed(usize),
    /// Attacker-chosen literal value (a guess, or a replayed constant).
    Literal(Nonce),
}

impl fmt::Display for ChallengeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChallengeSource::Observed(i) => write!(f, "observed:{i}"),
            ChallengeSource::Literal(n) => write!(f, "hex:{}", n.to_hex()),
        }
    }
}

/// Counter value for an injected assertion. `Auto` reads the live device
/// counter through the compromise handle and stays strictly above every
/// previous forgery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterSource {
    Auto,
    Explicit(u32),
}

impl fmt::Display for CounterSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CounterSource::Auto => write!(f, "auto"),
            CounterSource::Explicit(n) => write!(f, "{n}"),
        }
    }
}

/// One scheduled step: an honest protocol action, a network delivery, or an
/// adversary move.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    /// Bring up an honest server.
    NewServer { server_id: String },
    /// Run both registration ceremonies for an account, atomically: devices
    /// are not compromised during registration and the adversary cannot
    /// interpose, but the resulting public identities leak to it.
    Register {
        username: String,
        server_id: String,
        mode: UserMode,
    },
    /// The user initiates a transaction on device B.
    InitTransaction {
        username: String,
        server_id: String,
        data: String,
    },
    /// Deliver the in-flight message at `index` to its destination.
    Deliver { index: usize },
    /// Ingest all in-flight bytes into adversary knowledge (knowledge also
    /// grows automatically on every send; this is an explicit no-op probe).
    Observe,
    /// Remove an in-flight message. Allowed on authentic channels too:
    /// availability is not a claimed property.
    Drop { index: usize },
    /// Re-send a previously observed message. Authentic messages keep their
    /// origin and content; only the destination may be redirected.
    Replay {
        observed: usize,
        dest: Option<Endpoint>,
    },
    /// Patch the bytes of a non-authentic in-flight message.
    Modify { index: usize, patch: Patch },
    /// Inject a transaction request with a forged device-B origin.
    InjectRequest {
        username: String,
        server_id: String,
        data: String,
    },
    /// Forge an assertion with a leaked device key and send it to the
    /// server. Refused when the key was never leaked.
    InjectAssertion {
        username: String,
        server_id: String,
        device: Role,
        challenge: ChallengeSource,
        counter: CounterSource,
        user_verified: bool,
        data: Option<String>,
    },
    /// Inject raw bytes with an arbitrary claimed origin (never authentic).
    InjectBytes {
        origin: Endpoint,
        dest: Endpoint,
        bytes: Vec<u8>,
    },
    /// Leak a device's signing key to the adversary.
    Compromise {
        username: String,
        server_id: String,
        device: Role,
    },
    /// The user is lured into initiating a transaction at a phishing
    /// server. The lure always succeeds; the user does not notice.
    Phish {
        username: String,
        server_id: String,
        phisher: String,
        data: String,
    },
    /// The phishing server answers its victim's request with an arbitrary
    /// challenge (for instance one relayed from the honest server) and
    /// arbitrary transaction data.
    PhisherRespond {
        username: String,
        server_id: String,
        phisher: String,
        challenge: ChallengeSource,
        data: Option<String>,
    },
}

/// A finite, replayable run description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub seed: u64,
    pub bounds: Bounds,
    pub actions: Vec<Action>,
}

impl Schedule {
    pub fn new(seed: u64, actions: Vec<Action>) -> Self {
        Schedule {
            seed,
            bounds: Bounds::default(),
            actions,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for action in &self.actions {
            out.push_str(&action.format_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Vec<Action>, ScenarioParseError> {
        let mut actions = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            actions.push(
                Action::parse_line(line).map_err(|message| ScenarioParseError {
                    line: lineno + 1,
                    message,
                })?,
            );
        }
        Ok(actions)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("scenario line {line}: {message}")]
pub struct ScenarioParseError {
    pub line: usize,
    pub message: String,
}

/// Quote a value for scenario text when it is not a bare-safe token.
pub fn quote(value: &str) -> String {
    let bare_safe = !value.is_empty()
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | ':' | '@' | '/'));
    if bare_safe {
        value.to_string()
    } else {
        let mut out = String::from("\"");
        for c in value.chars() {
            match c {
                '"' => out.push_str("\\\""),
                '\\' => out.push_str("\\\\"),
                c => out.push(c),
            }
        }
        out.push('"');
        out
    }
}

fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut token = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                break;
            }
            if c == '"' {
                chars.next();
                loop {
                    match chars.next() {
                        None => return Err("unterminated quote".into()),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('"') => token.push('"'),
                            Some('\\') => token.push('\\'),
                            _ => return Err("bad escape".into()),
                        },
                        Some(other) => token.push(other),
                    }
                }
            } else {
                token.push(c);
                chars.next();
            }
        }
        tokens.push(token);
    }
    Ok(tokens)
}

struct Args {
    pairs: Vec<(String, String)>,
}

impl Args {
    fn from_tokens(tokens: &[String]) -> Result<Args, String> {
        let mut pairs = Vec::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {t:?}"))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(Args { pairs })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, String> {
        self.get(key).ok_or_else(|| format!("missing {key}="))
    }
}

fn parse_mode(text: &str) -> Result<UserMode, String> {
    match text {
        "compare" => Ok(UserMode::Compare),
        "no-compare" => Ok(UserMode::NoCompare),
        other => Err(format!("unknown mode {other:?}")),
    }
}

fn mode_name(mode: UserMode) -> &'static str {
    match mode {
        UserMode::Compare => "compare",
        UserMode::NoCompare => "no-compare",
    }
}

fn parse_device(text: &str) -> Result<Role, String> {
    match text {
        "b" => Ok(Role::B),
        "a" => Ok(Role::A),
        other => Err(format!("unknown device {other:?}")),
    }
}

fn device_name(role: Role) -> &'static str {
    match role {
        Role::B => "b",
        Role::A => "a",
    }
}

fn parse_index(text: &str) -> Result<usize, String> {
    text.parse().map_err(|_| format!("bad index {text:?}"))
}

fn parse_challenge(text: &str) -> Result<ChallengeSource, String> {
    if let Some(rest) = text.strip_prefix("observed:") {
        return Ok(ChallengeSource::Observed(parse_index(rest)?));
    }
    if let Some(rest) = text.strip_prefix("hex:") {
        let nonce = Nonce::from_hex(rest).ok_or_else(|| format!("bad challenge hex {rest:?}"))?;
        return Ok(ChallengeSource::Literal(nonce));
    }
    Err(format!("bad challenge source {text:?}"))
}

fn parse_counter(text: &str) -> Result<CounterSource, String> {
    if text == "auto" {
        return Ok(CounterSource::Auto);
    }
    text.parse()
        .map(CounterSource::Explicit)
        .map_err(|_| format!("bad counter {text:?}"))
}

fn parse_patch(text: &str) -> Result<Patch, String> {
    if let Some(rest) = text.strip_prefix("set-data:") {
        return Ok(Patch::SetData(rest.to_string()));
    }
    if let Some(rest) = text.strip_prefix("set-username:") {
        return Ok(Patch::SetUsername(rest.to_string()));
    }
    if let Some(rest) = text.strip_prefix("flip-byte:") {
        return Ok(Patch::FlipByte(parse_index(rest)?));
    }
    if let Some(rest) = text.strip_prefix("truncate:") {
        return Ok(Patch::Truncate(parse_index(rest)?));
    }
    if let Some(rest) = text.strip_prefix("set-bytes:") {
        return hex::decode(rest)
            .map(Patch::SetBytes)
            .map_err(|_| format!("bad hex {rest:?}"));
    }
    Err(format!("unknown patch {text:?}"))
}

fn parse_endpoint(text: &str) -> Result<Endpoint, String> {
    Endpoint::parse(text).ok_or_else(|| format!("bad endpoint {text:?}"))
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::NewServer { .. } => "new-server",
            Action::Register { .. } => "register",
            Action::InitTransaction { .. } => "init-transaction",
            Action::Deliver { .. } => "deliver",
            Action::Observe => "observe",
            Action::Drop { .. } => "drop",
            Action::Replay { .. } => "replay",
            Action::Modify { .. } => "modify",
            Action::InjectRequest { .. } => "inject-request",
            Action::InjectAssertion { .. } => "inject-assertion",
            Action::InjectBytes { .. } => "inject-bytes",
            Action::Compromise { .. } => "compromise",
            Action::Phish { .. } => "phish",
            Action::PhisherRespond { .. } => "phisher-respond",
        }
    }

    pub fn format_line(&self) -> String {
        match self {
            Action::NewServer { server_id } => format!("new-server id={}", quote(server_id)),
            Action::Register {
                username,
                server_id,
                mode,
            } => format!(
                "register user={} server={} mode={}",
                quote(username),
                quote(server_id),
                mode_name(*mode)
            ),
            Action::InitTransaction {
                username,
                server_id,
                data,
            } => format!(
                "init-transaction user={} server={} data={}",
                quote(username),
                quote(server_id),
                quote(data)
            ),
            Action::Deliver { index } => format!("deliver index={index}"),
            Action::Observe => "observe".to_string(),
            Action::Drop { index } => format!("drop index={index}"),
            Action::Replay { observed, dest } => match dest {
                None => format!("replay observed={observed}"),
                Some(d) => format!("replay observed={observed} dest={d}"),
            },
            Action::Modify { index, patch } => format!("modify index={index} patch={patch}"),
            Action::InjectRequest {
                username,
                server_id,
                data,
            } => format!(
                "inject-request user={} server={} data={}",
                quote(username),
                quote(server_id),
                quote(data)
            ),
            Action::InjectAssertion {
                username,
                server_id,
                device,
                challenge,
                counter,
                user_verified,
                data,
            } => {
                let mut line = format!(
                    "inject-assertion user={} server={} device={} challenge={} counter={} user-verified={}",
                    quote(username),
                    quote(server_id),
                    device_name(*device),
                    challenge,
                    counter,
                    user_verified,
                );
                if let Some(d) = data {
                    line.push_str(&format!(" data={}", quote(d)));
                }
                line
            }
            Action::InjectBytes {
                origin,
                dest,
                bytes,
            } => format!(
                "inject-bytes origin={origin} dest={dest} hex={}",
                hex::encode(bytes)
            ),
            Action::Compromise {
                username,
                server_id,
                device,
            } => format!(
                "compromise user={} server={} device={}",
                quote(username),
                quote(server_id),
                device_name(*device)
            ),
            Action::Phish {
                username,
                server_id,
                phisher,
                data,
            } => format!(
                "phish user={} server={} phisher={} data={}",
                quote(username),
                quote(server_id),
                quote(phisher),
                quote(data)
            ),
            Action::PhisherRespond {
                username,
                server_id,
                phisher,
                challenge,
                data,
            } => {
                let mut line = format!(
                    "phisher-respond user={} server={} phisher={} challenge={}",
                    quote(username),
                    quote(server_id),
                    quote(phisher),
                    challenge
                );
                if let Some(d) = data {
                    line.push_str(&format!(" data={}", quote(d)));
                }
                line
            }
        }
    }

    pub fn parse_line(line: &str) -> Result<Action, String> {
        let tokens = tokenize(line)?;
        let (head, rest) = tokens.split_first().ok_or("empty line")?;
        let args = Args::from_tokens(rest)?;
        match head.as_str() {
            "new-server" => Ok(Action::NewServer {
                server_id: args.require("id")?.to_string(),
            }),
            "register" => Ok(Action::Register {
                username: args.require("user")?.to_string(),
                server_id: args.require("server")?.to_string(),
                mode: parse_mode(args.get("mode").unwrap_or("compare"))?,
            }),
            "init-transaction" => Ok(Action::InitTransaction {
                username: args.require("user")?.to_string(),
                server_id: args.require("server")?.to_string(),
                data: args.require("data")?.to_string(),
            }),
            "deliver" => Ok(Action::Deliver {
                index: parse_index(args.get("index").unwrap_or("0"))?,
            }),
            "observe" => Ok(Action::Observe),
            "drop" => Ok(Action::Drop {
                index: parse_index(args.require("index")?)?,
            }),
            "replay" => Ok(Action::Replay {
                observed: parse_index(args.require("observed")?)?,
                dest: args.get("dest").map(parse_endpoint).transpose()?,
            }),
            "modify" => Ok(Action::Modify {
                index: parse_index(args.require("index")?)?,
                patch: parse_patch(args.require("patch")?)?,
            }),
            "inject-request" => Ok(Action::InjectRequest {
                username: args.require("user")?.to_string(),
                server_id: args.require("server")?.to_string(),
                data: args.require("data")?.to_string(),
            }),
            "inject-assertion" => Ok(Action::InjectAssertion {
                username: args.require("user")?.to_string(),
                server_id: args.require("server")?.to_string(),
                device: parse_device(args.require("device")?)?,
                challenge: parse_challenge(args.require("challenge")?)?,
                counter: parse_counter(args.get("counter").unwrap_or("auto"))?,
                user_verified: match args.get("user-verified").unwrap_or("true") {
                    "true" => true,
                    "false" => false,
                    other => return Err(format!("bad user-verified {other:?}")),
                },
                data: args.get("data").map(str::to_string),
            }),
            "inject-bytes" => Ok(Action::InjectBytes {
                origin: parse_endpoint(args.require("origin")?)?,
                dest: parse_endpoint(args.require("dest")?)?,
                bytes: hex::decode(args.require("hex")?).map_err(|_| "bad hex".to_string())?,
            }),
            "compromise" => Ok(Action::Compromise {
                username: args.require("user")?.to_string(),
                server_id: args.require("server")?.to_string(),
                device: parse_device(args.require("device")?)?,
            }),
            "phish" => Ok(Action::Phish {
                username: args.require("user")?.to_string(),
                server_id: args.require("server")?.to_string(),
                phisher: args.require("phisher")?.to_string(),
                data: args.require("data")?.to_string(),
            }),
            "phisher-respond" => Ok(Action::PhisherRespond {
                username: args.require("user")?.to_string(),
                server_id: args.require("server")?.to_string(),
                phisher: args.require("phisher")?.to_string(),
                challenge: parse_challenge(args.require("challenge")?)?,
                data: args.get("data").map(str::to_string),
            }),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(action: Action) {
        let line = action.format_line();
        let parsed = Action::parse_line(&line).unwrap_or_else(|e| panic!("{line}: {e}"));
        assert_eq!(parsed, action, "line was {line:?}");
    }

    #[test]
    fn actions_round_trip_through_text() {
        round_trip(Action::NewServer {
            server_id: "bank".into(),
        });
        round_trip(Action::Register {
            username: "alice".into(),
            server_id: "bank".into(),
            mode: UserMode::NoCompare,
        });
        round_trip(Action::InitTransaction {
            username: "alice".into(),
            server_id: "bank".into(),
            data: "pay \"10\" to bob\\eve".into(),
        });
        round_trip(Action::Deliver { index: 3 });
        round_trip(Action::Observe);
        round_trip(Action::Drop { index: 0 });
        round_trip(Action::Replay {
            observed: 5,
            dest: Some(Endpoint::DeviceA {
                username: "alice".into(),
                server_id: "bank".into(),
            }),
        });
        round_trip(Action::Modify {
            index: 1,
            patch: Patch::SetData("evil data".into()),
        });
        round_trip(Action::Modify {
            index: 1,
            patch: Patch::FlipByte(7),
        });
        round_trip(Action::InjectRequest {
            username: "alice".into(),
            server_id: "bank".into(),
            data: "pay 1000 to eve".into(),
        });
        round_trip(Action::InjectAssertion {
            username: "alice".into(),
            server_id: "bank".into(),
            device: Role::B,
            challenge: ChallengeSource::Observed(2),
            counter: CounterSource::Auto,
            user_verified: true,
            data: None,
        });
        round_trip(Action::InjectAssertion {
            username: "alice".into(),
            server_id: "bank".into(),
            device: Role::A,
            challenge: ChallengeSource::Literal(Nonce([0xAB; 32])),
            counter: CounterSource::Explicit(9),
            user_verified: false,
            data: Some("pay 1000 to eve".into()),
        });
        round_trip(Action::InjectBytes {
            origin: Endpoint::Phisher("evil".into()),
            dest: Endpoint::Server("bank".into()),
            bytes: vec![0xDE, 0xAD],
        });
        round_trip(Action::Compromise {
            username: "alice".into(),
            server_id: "bank".into(),
            device: Role::A,
        });
        round_trip(Action::Phish {
            username: "alice".into(),
            server_id: "bank".into(),
            phisher: "evil".into(),
            data: "pay 10 to bob".into(),
        });
        round_trip(Action::PhisherRespond {
            username: "alice".into(),
            server_id: "bank".into(),
            phisher: "evil".into(),
            challenge: ChallengeSource::Observed(0),
            data: Some("other".into()),
        });
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# a scenario\n\nnew-server id=bank\n  # indented comment\ndeliver\n";
        let actions = Schedule::parse(text).unwrap();
        assert_eq!(actions.len(), 2);
        assert_eq!(actions[1], Action::Deliver { index: 0 });
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Schedule::parse("new-server id=bank\nbogus-action x=1\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("unknown action"));
    }

    #[test]
    fn unterminated_quote_rejected() {
        let err =
            Action::parse_line("init-transaction user=alice server=bank data=\"oops").unwrap_err();
        assert!(err.contains("unterminated"));
    }
}
