//! Scripted schedules: the honest flow, the two classic malware attacks,
//! dual compromise, and replay probes. Expected violations are reproduced
//! deterministically here rather than left to randomized search.
//!
//! The same scenarios ship as text files under `scenarios/`; a test keeps
//! the two in sync.

use crate::devices::{Role, UserMode};

use super::schedule::{Action, ChallengeSource, CounterSource, Schedule};

/// Fixed seed for the scripted attacks, so their traces are reproducible
/// byte for byte.
pub const SCENARIO_SEED: u64 = 0xF1D02D;

fn new_server(id: &str) -> Action {
    Action::NewServer {
        server_id: id.to_string(),
    }
}

fn register(user: &str, server: &str, mode: UserMode) -> Action {
    Action::Register {
        username: user.to_string(),
        server_id: server.to_string(),
        mode,
    }
}

fn init(user: &str, server: &str, data: &str) -> Action {
    Action::InitTransaction {
        username: user.to_string(),
        server_id: server.to_string(),
        data: data.to_string(),
    }
}

fn deliver(index: usize) -> Action {
    Action::Deliver { index }
}

fn drop_msg(index: usize) -> Action {
    Action::Drop { index }
}

fn compromise(user: &str, server: &str, device: Role) -> Action {
    Action::Compromise {
        username: user.to_string(),
        server_id: server.to_string(),
        device,
    }
}

fn inject_request(user: &str, server: &str, data: &str) -> Action {
    Action::InjectRequest {
        username: user.to_string(),
        server_id: server.to_string(),
        data: data.to_string(),
    }
}

fn inject_assertion(
    user: &str,
    server: &str,
    device: Role,
    observed: usize,
    data: Option<&str>,
) -> Action {
    Action::InjectAssertion {
        username: user.to_string(),
        server_id: server.to_string(),
        device,
        challenge: ChallengeSource::Observed(observed),
        counter: CounterSource::Auto,
        user_verified: true,
        data: data.map(str::to_string),
    }
}

/// The straightforward honest order: registration, initiation, then the
/// five deliveries that walk both ceremonies to completion.
pub fn honest(seed: u64) -> Schedule {
    Schedule::new(
        seed,
        vec![
            new_server("bank"),
            register("alice", "bank", UserMode::Compare),
            init("alice", "bank", "pay 10 to bob"),
            deliver(0), // request reaches the server
            deliver(0), // challenge reaches device B
            deliver(0), // first assertion reaches the server
            deliver(0), // confirmation push reaches device A
            deliver(0), // second assertion reaches the server
        ],
    )
}

/// Transaction manipulation: malware on device B suppresses the user's
/// request, initiates its own, and answers the challenge with the leaked
/// key. Device A then displays the manipulated data. A comparing user
/// declines and the attack dies; a non-comparing user confirms and the
/// fraudulent transaction completes.
pub fn manipulation(mode: UserMode) -> Schedule {
    Schedule::new(
        SCENARIO_SEED,
        vec![
            new_server("bank"),
            register("alice", "bank", mode),
            init("alice", "bank", "pay 10 to bob"), // observed 0
            compromise("alice", "bank", Role::B),
            drop_msg(0), // malware suppresses the honest request
            inject_request("alice", "bank", "pay 1000 to eve"), // observed 1
            deliver(0),  // server opens a pending for the manipulated data; challenge is observed 2
            drop_msg(0), // malware discards the challenge meant for device B
            inject_assertion("alice", "bank", Role::B, 2, None),
            deliver(0), // forged first assertion verifies; confirmation push to A
            deliver(0), // device A displays "pay 1000 to eve"
            deliver(0), // (no-compare only) second assertion completes the fraud
        ],
    )
}

/// Transaction initiation: the attacker holds device A's key and starts a
/// transaction himself. The first ceremony blocks him: he cannot answer
/// the challenge for device B, and his leaked device A key is useless
/// against a pending transaction still awaiting the first signature.
pub fn initiation() -> Schedule {
    Schedule::new(
        SCENARIO_SEED,
        vec![
            new_server("bank"),
            register("alice", "bank", UserMode::Compare),
            compromise("alice", "bank", Role::A),
            inject_request("alice", "bank", "pay 9999 to eve"), // observed 0
            deliver(0), // server opens the pending; challenge is observed 1
            deliver(0), // device B has no matching transaction context and stays silent
            inject_assertion("alice", "bank", Role::B, 1, None), // refused: key not leaked
            inject_assertion("alice", "bank", Role::A, 1, Some("pay 9999 to eve")),
            deliver(0), // wrong key for the first ceremony: pending aborts
        ],
    )
}

/// Both devices compromised: the attacker runs both ceremonies alone and
/// completes a transaction nobody initiated. The lemmas still hold, via
/// their dual-compromise escape clause only.
pub fn dual_compromise() -> Schedule {
    Schedule::new(
        SCENARIO_SEED,
        vec![
            new_server("bank"),
            register("alice", "bank", UserMode::Compare),
            compromise("alice", "bank", Role::B),
            compromise("alice", "bank", Role::A),
            inject_request("alice", "bank", "pay 9999 to eve"), // observed 0
            deliver(0), // pending opened; challenge is observed 1
            drop_msg(0),
            inject_assertion("alice", "bank", Role::B, 1, None),
            deliver(0),  // first ceremony forged; confirmation push is observed 3
            drop_msg(0), // the user never sees the confirmation
            inject_assertion("alice", "bank", Role::A, 3, Some("pay 9999 to eve")),
            deliver(0), // fraudulent completion
        ],
    )
}

/// Replay probes: captured assertions are re-sent against live pendings of
/// a second, identical transaction. Consumed challenges never verify
/// twice, so only the two honest completions happen.
pub fn replay_defense() -> Schedule {
    Schedule::new(
        SCENARIO_SEED,
        vec![
            new_server("bank"),
            register("alice", "bank", UserMode::Compare),
            init("alice", "bank", "pay 10 to bob"), // observed 0
            deliver(0),                             // challenge is observed 1
            deliver(0),                             // first assertion is observed 2
            deliver(0),                             // confirmation is observed 3
            deliver(0),                             // second assertion is observed 4
            deliver(0),                             // first completion
            init("alice", "bank", "pay 10 to bob"), // observed 5
            deliver(0),                             // second pending opened, awaiting device B
            Action::Replay {
                observed: 2,
                dest: None,
            }, // replay the captured first assertion against the live pending
            deliver(1),                             // rejected: its challenge was consumed long ago
            deliver(0),                             // device B answers the live challenge
            deliver(0),                             // second pending awaiting device A
            Action::Replay {
                observed: 4,
                dest: None,
            }, // replay the captured second assertion against the live pending
            deliver(1),                             // rejected: consumed challenge
            deliver(0),                             // device A confirms the live push
            deliver(0),                             // second honest completion
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::lemmas::{check_lemma1, check_lemma2};
    use crate::harness::trace::Label;
    use crate::harness::world::run;

    fn completes(trace: &[crate::harness::trace::TraceEvent]) -> Vec<(String, String)> {
        trace
            .iter()
            .filter(|e| e.label == Label::TransactionComplete)
            .map(|e| (e.initiator.clone(), e.transaction.clone()))
            .collect()
    }

    #[test]
    fn honest_flow_one_matching_completion() {
        let out = run(&honest(1)).unwrap();
        let begins: Vec<_> = out
            .trace
            .iter()
            .filter(|e| e.label == Label::TransactionBegin)
            .collect();
        assert_eq!(begins.len(), 1);
        assert_eq!(
            completes(&out.trace),
            vec![("alice".to_string(), "pay 10 to bob".to_string())]
        );
        assert!(check_lemma1(&out.trace).holds);
        assert!(check_lemma2(&out.trace).holds);
    }

    #[test]
    fn manipulation_fails_against_comparing_user() {
        let out = run(&manipulation(UserMode::Compare)).unwrap();
        assert!(completes(&out.trace).is_empty());
        assert!(check_lemma1(&out.trace).holds);
        assert!(check_lemma2(&out.trace).holds);
    }

    #[test]
    fn manipulation_succeeds_against_no_compare_user() {
        let out = run(&manipulation(UserMode::NoCompare)).unwrap();
        assert_eq!(
            completes(&out.trace),
            vec![("alice".to_string(), "pay 1000 to eve".to_string())]
        );
        let verdict = check_lemma1(&out.trace);
        assert!(!verdict.holds);
        assert!(verdict.counterexample.unwrap().len() <= 15);
    }

    #[test]
    fn initiation_attack_never_completes() {
        let out = run(&initiation()).unwrap();
        assert!(completes(&out.trace).is_empty());
        assert!(check_lemma1(&out.trace).holds);
        assert!(check_lemma2(&out.trace).holds);
        assert!(out.trace.iter().any(|e| e.label == Label::CompromiseDev2));
    }

    #[test]
    fn dual_compromise_completes_but_lemmas_hold_via_escape() {
        let out = run(&dual_compromise()).unwrap();
        assert_eq!(
            completes(&out.trace),
            vec![("alice".to_string(), "pay 9999 to eve".to_string())]
        );
        assert!(check_lemma1(&out.trace).holds);
        assert!(check_lemma2(&out.trace).holds);
        // The clause is doing the work: without it the same trace violates.
        let opts = crate::harness::lemmas::LemmaOptions {
            dual_compromise_escape: false,
            ..Default::default()
        };
        assert!(!crate::harness::lemmas::check_lemma1_with(&out.trace, opts).holds);
    }

    #[test]
    fn replays_never_complete_twice() {
        let out = run(&replay_defense()).unwrap();
        let c = completes(&out.trace);
        assert_eq!(c.len(), 2);
        assert!(check_lemma1(&out.trace).holds);
        assert!(check_lemma2(&out.trace).holds);
    }

    #[test]
    fn shipped_scenario_files_match_builders() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios");
        let cases = [
            ("honest.scn", honest(0)),
            ("manipulation.scn", manipulation(UserMode::NoCompare)),
            ("manipulation-compare.scn", manipulation(UserMode::Compare)),
            ("initiation.scn", initiation()),
            ("dual-compromise.scn", dual_compromise()),
            ("replay.scn", replay_defense()),
        ];
        for (file, schedule) in cases {
            let path = format!("{dir}/{file}");
            let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
            assert_eq!(text, schedule.to_text(), "{file} is out of sync");
            // And the text parses back to the same actions.
            assert_eq!(
                crate::harness::Schedule::parse(&text).unwrap(),
                schedule.actions,
                "{file} does not parse back"
            );
        }
    }
}
