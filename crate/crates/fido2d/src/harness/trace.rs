//! Trace events and their structured log form.
//!
//! Labels mirror the action facts of the protocol's symbolic model
//! one-to-one, so every lemma quantifies over exactly these events.

use std::fmt;

/// Protocol action labels. `TransactionBegin` marks user intent at an
/// honest server, `PhishBegin` marks an initiation lured to a phishing
/// server, `TransactionComplete` marks server acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Label {
    NewServer,
    Registered,
    TransactionBegin,
    TransactionComplete,
    PhishBegin,
    CompromiseDev1,
    CompromiseDev2,
}

impl Label {
    pub const ALL: [Label; 7] = [
        Label::NewServer,
        Label::Registered,
        Label::TransactionBegin,
        Label::TransactionComplete,
        Label::PhishBegin,
        Label::CompromiseDev1,
        Label::CompromiseDev2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Label::NewServer => "NewServer",
            Label::Registered => "Registered",
            Label::TransactionBegin => "TransactionBegin",
            Label::TransactionComplete => "TransactionComplete",
            Label::PhishBegin => "PhishBegin",
            Label::CompromiseDev1 => "CompromiseDev1",
            Label::CompromiseDev2 => "CompromiseDev2",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One appended trace record, totally ordered by step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub label: Label,
    /// Username of the acting account; empty for [`Label::NewServer`].
    pub initiator: String,
    /// Server identifier; for [`Label::PhishBegin`] the phisher's identity.
    pub server: String,
    /// Transaction text; empty for labels that carry none.
    pub transaction: String,
}

impl TraceEvent {
    pub fn new(step: u64, label: Label, initiator: &str, server: &str, transaction: &str) -> Self {
        TraceEvent {
            step,
            label,
            initiator: initiator.to_string(),
            server: server.to_string(),
            transaction: transaction.to_string(),
        }
    }

    /// One JSON line per event; the grammar is documented in
    /// `docs/trace-log.md` and kept byte-stable for replay comparisons.
    pub fn to_json_line(&self) -> String {
        format!(
            "{{\"step\":{},\"label\":\"{}\",\"initiator\":\"{}\",\"server\":\"{}\",\"transaction\":\"{}\"}}",
            self.step,
            self.label,
            escape_json(&self.initiator),
            escape_json(&self.server),
            escape_json(&self.transaction),
        )
    }
}

pub(crate) fn escape_json(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}
