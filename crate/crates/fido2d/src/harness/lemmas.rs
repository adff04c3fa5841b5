//! Trace-property checkers for the two security lemmas.
//!
//! Lemma 1 (only-user-initiated-transactions-accepted): every completed
//! transaction was begun by its user with the same data at the same server,
//! unless both of that account's devices were compromised.
//!
//! Lemma 2 (replay-attacks-impossible): completions map injectively onto
//! distinct initiations with matching (initiator, server, transaction),
//! with the same dual-compromise escape clause.
//!
//! Both are quantifier statements without temporal order; an ordered
//! variant (witnesses must precede the completion) is available behind
//! [`LemmaOptions::temporal_order`] but is a stricter property than the
//! default one.

use std::collections::{BTreeMap, BTreeSet};

use super::trace::{Label, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LemmaId {
    OnlyUserInitiatedTransactionsAccepted,
    ReplayAttacksImpossible,
}

impl LemmaId {
    pub fn name(self) -> &'static str {
        match self {
            LemmaId::OnlyUserInitiatedTransactionsAccepted => {
                "only_user_initiated_transactions_accepted"
            }
            LemmaId::ReplayAttacksImpossible => "replay_attacks_impossible",
        }
    }
}

/// Checker configuration. Defaults match the lemmas as stated: unordered
/// quantifiers and the dual-compromise escape clause enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LemmaOptions {
    /// Require witnesses (initiations, compromises) to occur at a step no
    /// later than the completion they excuse.
    pub temporal_order: bool,
    /// Honor the escape clause: accounts with both devices compromised are
    /// exempt, because no guarantees are claimed for them.
    pub dual_compromise_escape: bool,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        LemmaOptions {
            temporal_order: false,
            dual_compromise_escape: true,
        }
    }
}

/// Checker result; a counterexample (the trace prefix up to and including
/// the offending completion) is present exactly when the lemma fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub lemma: LemmaId,
    pub holds: bool,
    pub counterexample: Option<Vec<TraceEvent>>,
}

impl Verdict {
    fn holds(lemma: LemmaId) -> Verdict {
        Verdict {
            lemma,
            holds: true,
            counterexample: None,
        }
    }

    fn violated(lemma: LemmaId, trace: &[TraceEvent], index: usize) -> Verdict {
        Verdict {
            lemma,
            holds: false,
            counterexample: Some(trace[..=index].to_vec()),
        }
    }
}

fn dual_compromised(
    trace: &[TraceEvent],
    initiator: &str,
    server: &str,
    before_step: Option<u64>,
) -> bool {
    let seen = |label: Label| {
        trace.iter().any(|e| {
            e.label == label
                && e.initiator == initiator
                && e.server == server
                && before_step.is_none_or(|s| e.step <= s)
        })
    };
    seen(Label::CompromiseDev1) && seen(Label::CompromiseDev2)
}

/// Only user-initiated transactions are accepted.
pub fn check_lemma1(trace: &[TraceEvent]) -> Verdict {
    check_lemma1_with(trace, LemmaOptions::default())
}

pub fn check_lemma1_with(trace: &[TraceEvent], opts: LemmaOptions) -> Verdict {
    let lemma = LemmaId::OnlyUserInitiatedTransactionsAccepted;
    for (i, complete) in trace.iter().enumerate() {
        if complete.label != Label::TransactionComplete {
            continue;
        }
        let horizon = opts.temporal_order.then_some(complete.step);
        let begun = trace.iter().any(|e| {
            e.label == Label::TransactionBegin
                && e.initiator == complete.initiator
                && e.server == complete.server
                && e.transaction == complete.transaction
                && horizon.is_none_or(|s| e.step <= s)
        });
        let escaped = opts.dual_compromise_escape
            && dual_compromised(trace, &complete.initiator, &complete.server, horizon);
        if !begun && !escaped {
            return Verdict::violated(lemma, trace, i);
        }
    }
    Verdict::holds(lemma)
}

/// Each accepted transaction corresponds to exactly one initiated one.
pub fn check_lemma2(trace: &[TraceEvent]) -> Verdict {
    check_lemma2_with(trace, LemmaOptions::default())
}

pub fn check_lemma2_with(trace: &[TraceEvent], opts: LemmaOptions) -> Verdict {
    let lemma = LemmaId::ReplayAttacksImpossible;
    // Completions with identical labels are interchangeable, so an injective
    // mapping onto distinct initiations exists exactly when, per label
    // triple, completions never outnumber initiations.
    let mut used: BTreeMap<(&str, &str, &str), usize> = BTreeMap::new();
    for (i, complete) in trace.iter().enumerate() {
        if complete.label != Label::TransactionComplete {
            continue;
        }
        let horizon = opts.temporal_order.then_some(complete.step);
        if opts.dual_compromise_escape
            && dual_compromised(trace, &complete.initiator, &complete.server, horizon)
        {
            continue;
        }
        let key = (
            complete.initiator.as_str(),
            complete.server.as_str(),
            complete.transaction.as_str(),
        );
        let begins = trace
            .iter()
            .filter(|e| {
                e.label == Label::TransactionBegin
                    && e.initiator == complete.initiator
                    && e.server == complete.server
                    && e.transaction == complete.transaction
                    && horizon.is_none_or(|s| e.step <= s)
            })
            .count();
        let claimed = used.entry(key).or_insert(0);
        *claimed += 1;
        if *claimed > begins {
            return Verdict::violated(lemma, trace, i);
        }
    }
    Verdict::holds(lemma)
}

/// Accounts for which the trace contains a dual compromise. Used by
/// reporting to distinguish vacuous holds from real ones.
pub fn dual_compromised_accounts(trace: &[TraceEvent]) -> BTreeSet<(String, String)> {
    let mut dev1 = BTreeSet::new();
    let mut dev2 = BTreeSet::new();
    for e in trace {
        let key = (e.initiator.clone(), e.server.clone());
        match e.label {
            Label::CompromiseDev1 => {
                dev1.insert(key);
            }
            Label::CompromiseDev2 => {
                dev2.insert(key);
            }
            _ => {}
        }
    }
    dev1.intersection(&dev2).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(step: u64, label: Label, user: &str, server: &str, tx: &str) -> TraceEvent {
        TraceEvent::new(step, label, user, server, tx)
    }

    #[test]
    fn honest_trace_satisfies_both_lemmas() {
        let trace = vec![
            ev(1, Label::NewServer, "", "bank", ""),
            ev(2, Label::Registered, "alice", "bank", ""),
            ev(3, Label::TransactionBegin, "alice", "bank", "pay"),
            ev(8, Label::TransactionComplete, "alice", "bank", "pay"),
        ];
        assert!(check_lemma1(&trace).holds);
        assert!(check_lemma2(&trace).holds);
    }

    #[test]
    fn empty_trace_holds() {
        assert!(check_lemma1(&[]).holds);
        assert!(check_lemma2(&[]).holds);
    }

    #[test]
    fn manipulated_completion_violates_lemma1() {
        let trace = vec![
            ev(1, Label::TransactionBegin, "alice", "bank", "pay 10 to bob"),
            ev(2, Label::CompromiseDev1, "alice", "bank", ""),
            ev(
                3,
                Label::TransactionComplete,
                "alice",
                "bank",
                "pay 1000 to eve",
            ),
        ];
        let verdict = check_lemma1(&trace);
        assert!(!verdict.holds);
        let cex = verdict.counterexample.unwrap();
        assert_eq!(cex.len(), 3);
        assert_eq!(cex.last().unwrap().label, Label::TransactionComplete);
    }

    #[test]
    fn dual_compromise_escape_clause_excuses() {
        let trace = vec![
            ev(1, Label::CompromiseDev1, "alice", "bank", ""),
            ev(2, Label::CompromiseDev2, "alice", "bank", ""),
            ev(3, Label::TransactionComplete, "alice", "bank", "fraud"),
        ];
        assert!(check_lemma1(&trace).holds);
        assert!(check_lemma2(&trace).holds);
        // Without the clause the same trace is a violation, so the clause is
        // exercised rather than dead.
        let opts = LemmaOptions {
            dual_compromise_escape: false,
            ..LemmaOptions::default()
        };
        assert!(!check_lemma1_with(&trace, opts).holds);
        assert!(!check_lemma2_with(&trace, opts).holds);
    }

    #[test]
    fn escape_clause_is_per_account() {
        let trace = vec![
            ev(1, Label::CompromiseDev1, "alice", "bank", ""),
            ev(2, Label::CompromiseDev2, "bob", "bank", ""),
            ev(3, Label::TransactionComplete, "alice", "bank", "fraud"),
        ];
        // Compromises of different accounts do not combine.
        assert!(!check_lemma1(&trace).holds);
    }

    #[test]
    fn duplicate_completion_violates_lemma2_only() {
        let trace = vec![
            ev(1, Label::TransactionBegin, "alice", "bank", "pay"),
            ev(2, Label::TransactionComplete, "alice", "bank", "pay"),
            ev(3, Label::TransactionComplete, "alice", "bank", "pay"),
        ];
        assert!(check_lemma1(&trace).holds);
        let verdict = check_lemma2(&trace);
        assert!(!verdict.holds);
        assert_eq!(verdict.counterexample.unwrap().len(), 3);
    }

    #[test]
    fn two_begins_two_completes_is_injective() {
        let trace = vec![
            ev(1, Label::TransactionBegin, "alice", "bank", "pay"),
            ev(2, Label::TransactionBegin, "alice", "bank", "pay"),
            ev(3, Label::TransactionComplete, "alice", "bank", "pay"),
            ev(4, Label::TransactionComplete, "alice", "bank", "pay"),
        ];
        assert!(check_lemma2(&trace).holds);
    }

    #[test]
    fn unordered_lemma_accepts_begin_after_complete() {
        let trace = vec![
            ev(1, Label::TransactionComplete, "alice", "bank", "pay"),
            ev(2, Label::TransactionBegin, "alice", "bank", "pay"),
        ];
        assert!(check_lemma1(&trace).holds);
        assert!(check_lemma2(&trace).holds);
        // The ordered variant is stricter and rejects this trace.
        let opts = LemmaOptions {
            temporal_order: true,
            ..LemmaOptions::default()
        };
        assert!(!check_lemma1_with(&trace, opts).holds);
        assert!(!check_lemma2_with(&trace, opts).holds);
    }

    #[test]
    fn ordered_variant_requires_witnesses_before_completion() {
        // Compromises recorded only after the completion do not excuse it
        // in the ordered variant, while the default unordered lemma is
        // satisfied by them.
        let trace = vec![
            ev(1, Label::TransactionComplete, "alice", "bank", "fraud"),
            ev(2, Label::CompromiseDev1, "alice", "bank", ""),
            ev(3, Label::CompromiseDev2, "alice", "bank", ""),
        ];
        assert!(check_lemma1(&trace).holds);
        assert!(check_lemma2(&trace).holds);
        let opts = LemmaOptions {
            temporal_order: true,
            ..LemmaOptions::default()
        };
        assert!(!check_lemma1_with(&trace, opts).holds);
        assert!(!check_lemma2_with(&trace, opts).holds);
    }

    #[test]
    fn phish_begin_does_not_count_as_initiation() {
        let trace = vec![
            ev(1, Label::PhishBegin, "alice", "phish", "pay"),
            ev(2, Label::TransactionComplete, "alice", "bank", "pay"),
        ];
        assert!(!check_lemma1(&trace).holds);
    }

    #[test]
    fn dual_compromised_accounts_reported() {
        let trace = vec![
            ev(1, Label::CompromiseDev1, "alice", "bank", ""),
            ev(2, Label::CompromiseDev2, "alice", "bank", ""),
            ev(3, Label::CompromiseDev1, "bob", "bank", ""),
        ];
        let accounts = dual_compromised_accounts(&trace);
        assert_eq!(accounts.len(), 1);
        assert!(accounts.contains(&("alice".into(), "bank".into())));
    }
}
