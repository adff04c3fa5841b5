//! Randomized bounded schedule exploration.
//!
//! A probabilistic stand-in for unbounded symbolic search: N seeded random
//! schedules per threat configuration, every trace checked against both
//! lemmas, violations minimized by greedy step removal and reported with
//! their schedule and trace. Coverage is probabilistic by construction;
//! the deterministic attack scenarios live in `scenarios` so that expected
//! violations are reproduced by script, not found by luck.

use std::fmt;
use std::time::{Duration, Instant};

use rand_core::RngCore;

use crate::crypto::{rng_for_run, SimRng};
use crate::devices::{Role, UserMode};

use super::lemmas::{check_lemma1, check_lemma2, Verdict};
use super::schedule::{Action, Bounds, ChallengeSource, CounterSource, Schedule};
use super::trace::TraceEvent;
use super::world::{run, World};

/// Which adversary rules a configuration enables. Network control
/// (observe, inject, modify, drop, replay) is always on: that is the
/// attacker model, not a threat toggle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThreatConfig {
    pub compromise_b: bool,
    pub compromise_a: bool,
    pub phishing: bool,
    pub user_mode: UserMode,
}

impl ThreatConfig {
    pub fn new(
        compromise_b: bool,
        compromise_a: bool,
        phishing: bool,
        user_mode: UserMode,
    ) -> Self {
        ThreatConfig {
            compromise_b,
            compromise_a,
            phishing,
            user_mode,
        }
    }

    /// Parse a comma-separated list: `compromise-b`, `compromise-a`,
    /// `phishing`, plus `compare` or `no-compare` (default `compare`).
    /// `none` names the empty threat set.
    pub fn parse(text: &str) -> Result<ThreatConfig, String> {
        let mut config = ThreatConfig::new(false, false, false, UserMode::Compare);
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "compromise-b" => config.compromise_b = true,
                "compromise-a" => config.compromise_a = true,
                "phishing" => config.phishing = true,
                "compare" => config.user_mode = UserMode::Compare,
                "no-compare" => config.user_mode = UserMode::NoCompare,
                "none" => {}
                other => return Err(format!("unknown threat {other:?}")),
            }
        }
        Ok(config)
    }

    /// Whether the protocol is claimed to keep both lemmas intact under
    /// this configuration. With a comparing user the lemmas hold under any
    /// single compromise (that is one-out-of-two security); a user who does
    /// not compare loses the guarantee exactly when the browser device can
    /// be compromised.
    pub fn expected_secure(&self) -> bool {
        match self.user_mode {
            UserMode::Compare => true,
            UserMode::NoCompare => !self.compromise_b,
        }
    }
}

impl fmt::Display for ThreatConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.compromise_b {
            parts.push("compromise-b");
        }
        if self.compromise_a {
            parts.push("compromise-a");
        }
        if self.phishing {
            parts.push("phishing");
        }
        if parts.is_empty() {
            parts.push("none");
        }
        parts.push(match self.user_mode {
            UserMode::Compare => "compare",
            UserMode::NoCompare => "no-compare",
        });
        write!(f, "{}", parts.join(","))
    }
}

/// A lemma violation found by exploration, already minimized.
#[derive(Debug, Clone)]
pub struct Violation {
    pub run_index: u64,
    pub schedule: Schedule,
    pub trace: Vec<TraceEvent>,
    pub verdicts: Vec<Verdict>,
}

/// Aggregate result of one exploration campaign.
#[derive(Debug, Clone)]
pub struct ExploreReport {
    pub threats: ThreatConfig,
    pub runs: u64,
    pub violations: Vec<Violation>,
    pub elapsed: Duration,
}

impl ExploreReport {
    pub fn violation_free(&self) -> bool {
        self.violations.is_empty()
    }

    /// One summary line in the style of a scheme-security table row.
    pub fn summary_line(&self) -> String {
        format!(
            "threats={} runs={} violations={} expected={} result={}",
            self.threats,
            self.runs,
            self.violations.len(),
            if self.threats.expected_secure() {
                "secure"
            } else {
                "violable"
            },
            if self.violation_free() == self.threats.expected_secure() {
                "as-expected"
            } else {
                "UNEXPECTED"
            }
        )
    }

    /// Full report text: summary plus each minimized violation as a
    /// scenario and its trace. Byte-identical across repeated invocations
    /// with the same seed, independent of worker thread count.
    pub fn detail_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.summary_line());
        out.push('\n');
        for v in &self.violations {
            out.push_str(&format!(
                "violation run={} seed={} lemmas={}\n",
                v.run_index,
                v.schedule.seed,
                v.verdicts
                    .iter()
                    .map(|x| x.lemma.name())
                    .collect::<Vec<_>>()
                    .join(","),
            ));
            out.push_str("--- minimized schedule\n");
            out.push_str(&v.schedule.to_text());
            out.push_str("--- trace\n");
            for e in &v.trace {
                out.push_str(&e.to_json_line());
                out.push('\n');
            }
        }
        out
    }
}

const DATA_POOL: [&str; 4] = [
    "pay 10 to bob",
    "pay 250 to carol",
    "post hello world",
    "set limit 5000",
];

const ATTACK_DATA_POOL: [&str; 3] = ["pay 9999 to eve", "post buy my coin", "set limit 1000000"];

fn pick<'a, T>(rng: &mut SimRng, items: &'a [T]) -> &'a T {
    &items[(rng.next_u64() % items.len() as u64) as usize]
}

fn pick_index(rng: &mut SimRng, len: usize) -> usize {
    (rng.next_u64() % len as u64) as usize
}

/// Action kinds the sampler chooses between, weighted towards protocol
/// progress so random schedules regularly reach completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Register,
    Init,
    Deliver,
    Drop,
    Replay,
    Modify,
    InjectRequest,
    InjectAssertion,
    CompromiseB,
    CompromiseA,
    Phish,
    PhisherRespond,
    Observe,
}

fn candidate_kinds(world: &World, threats: &ThreatConfig, bounds: &Bounds) -> Vec<Kind> {
    let mut kinds = Vec::new();
    let parties = world.party_ids();
    let accounts = parties.len() as u64;
    if accounts < bounds.max_accounts {
        kinds.extend([Kind::Register; 2]);
    }
    if accounts > 0 && world.transactions_initiated() < bounds.max_transactions {
        kinds.extend([Kind::Init; 2]);
    }
    if !world.network().is_empty() {
        kinds.extend([Kind::Deliver; 6]);
        kinds.push(Kind::Drop);
        kinds.push(Kind::Modify);
    }
    if !world.adversary().observed().is_empty() {
        kinds.push(Kind::Replay);
    }
    if accounts > 0 {
        kinds.push(Kind::InjectRequest);
    }
    if !world.adversary().leaked_key_ids().is_empty() {
        kinds.extend([Kind::InjectAssertion; 2]);
    }
    if threats.compromise_b
        && parties
            .iter()
            .any(|(u, s)| !world.party(u, s).unwrap().device_b.is_compromised())
    {
        kinds.push(Kind::CompromiseB);
    }
    if threats.compromise_a
        && parties
            .iter()
            .any(|(u, s)| !world.party(u, s).unwrap().device_a.is_compromised())
    {
        kinds.push(Kind::CompromiseA);
    }
    if threats.phishing && accounts > 0 {
        kinds.push(Kind::Phish);
        if !world.phisher_ids().is_empty() {
            kinds.push(Kind::PhisherRespond);
        }
    }
    kinds.push(Kind::Observe);
    kinds
}

fn materialize(kind: Kind, world: &World, threats: &ThreatConfig, rng: &mut SimRng) -> Action {
    let parties = world.party_ids();
    let random_party = |rng: &mut SimRng| parties[pick_index(rng, parties.len())].clone();
    match kind {
        Kind::Register => Action::Register {
            username: format!("user{}", parties.len()),
            server_id: world.server_ids()[0].clone(),
            mode: threats.user_mode,
        },
        Kind::Init => {
            let (username, server_id) = random_party(rng);
            Action::InitTransaction {
                username,
                server_id,
                data: pick(rng, &DATA_POOL).to_string(),
            }
        }
        Kind::Deliver => Action::Deliver {
            // Bias towards FIFO delivery but explore reorderings.
            index: if rng.next_u64().is_multiple_of(4) {
                pick_index(rng, world.network().len())
            } else {
                0
            },
        },
        Kind::Drop => Action::Drop {
            index: pick_index(rng, world.network().len()),
        },
        Kind::Replay => {
            let observed = pick_index(rng, world.adversary().observed().len());
            let dest = if rng.next_u64().is_multiple_of(2) {
                None
            } else {
                let (username, server_id) = random_party(rng);
                Some(match rng.next_u64() % 3 {
                    0 => crate::adversary::Endpoint::Server(server_id),
                    1 => crate::adversary::Endpoint::DeviceB {
                        username,
                        server_id,
                    },
                    _ => crate::adversary::Endpoint::DeviceA {
                        username,
                        server_id,
                    },
                })
            };
            Action::Replay { observed, dest }
        }
        Kind::Modify => {
            let index = pick_index(rng, world.network().len());
            let patch = match rng.next_u64() % 3 {
                0 => crate::adversary::Patch::SetData(pick(rng, &ATTACK_DATA_POOL).to_string()),
                1 => crate::adversary::Patch::SetUsername("mallory".to_string()),
                _ => crate::adversary::Patch::FlipByte(pick_index(rng, 64)),
            };
            Action::Modify { index, patch }
        }
        Kind::InjectRequest => {
            let (username, server_id) = if rng.next_u64().is_multiple_of(8) {
                ("mallory".to_string(), world.server_ids()[0].clone())
            } else {
                random_party(rng)
            };
            let data = if rng.next_u64().is_multiple_of(2) {
                pick(rng, &ATTACK_DATA_POOL).to_string()
            } else {
                pick(rng, &DATA_POOL).to_string()
            };
            Action::InjectRequest {
                username,
                server_id,
                data,
            }
        }
        Kind::InjectAssertion => {
            let keys = world.adversary().leaked_key_ids();
            let (username, server_id, role) = keys[pick_index(rng, keys.len())].clone();
            let challenges = world.adversary().observed_challenge_indices();
            let challenge = if challenges.is_empty() || rng.next_u64().is_multiple_of(8) {
                // A guessed challenge: infeasible at simulation scale.
                let mut guess = [0u8; 32];
                rng.fill_bytes(&mut guess);
                ChallengeSource::Literal(crate::crypto::Nonce(guess))
            } else {
                ChallengeSource::Observed(challenges[pick_index(rng, challenges.len())])
            };
            let counter = if rng.next_u64().is_multiple_of(8) {
                CounterSource::Explicit((rng.next_u64() % 4) as u32)
            } else {
                CounterSource::Auto
            };
            let data = match role {
                Role::B => {
                    if rng.next_u64().is_multiple_of(8) {
                        Some(pick(rng, &ATTACK_DATA_POOL).to_string())
                    } else {
                        None
                    }
                }
                Role::A => {
                    if rng.next_u64().is_multiple_of(2) {
                        Some(pick(rng, &ATTACK_DATA_POOL).to_string())
                    } else {
                        Some(pick(rng, &DATA_POOL).to_string())
                    }
                }
            };
            Action::InjectAssertion {
                username,
                server_id,
                device: role,
                challenge,
                counter,
                user_verified: !rng.next_u64().is_multiple_of(8),
                data,
            }
        }
        Kind::CompromiseB | Kind::CompromiseA => {
            let role = if kind == Kind::CompromiseB {
                Role::B
            } else {
                Role::A
            };
            let fresh: Vec<_> = parties
                .iter()
                .filter(|(u, s)| {
                    let p = world.party(u, s).unwrap();
                    !match role {
                        Role::B => p.device_b.is_compromised(),
                        Role::A => p.device_a.is_compromised(),
                    }
                })
                .cloned()
                .collect();
            let (username, server_id) = fresh[pick_index(rng, fresh.len())].clone();
            Action::Compromise {
                username,
                server_id,
                device: role,
            }
        }
        Kind::Phish => {
            let (username, server_id) = random_party(rng);
            Action::Phish {
                username,
                server_id,
                phisher: "phish0".to_string(),
                data: pick(rng, &DATA_POOL).to_string(),
            }
        }
        Kind::PhisherRespond => {
            let (username, server_id) = random_party(rng);
            let challenges = world.adversary().observed_challenge_indices();
            let challenge = if challenges.is_empty() {
                let mut guess = [0u8; 32];
                rng.fill_bytes(&mut guess);
                ChallengeSource::Literal(crate::crypto::Nonce(guess))
            } else {
                ChallengeSource::Observed(challenges[pick_index(rng, challenges.len())])
            };
            Action::PhisherRespond {
                username,
                server_id,
                phisher: "phish0".to_string(),
                challenge,
                data: if rng.next_u64().is_multiple_of(4) {
                    Some(pick(rng, &ATTACK_DATA_POOL).to_string())
                } else {
                    None
                },
            }
        }
        Kind::Observe => Action::Observe,
    }
}

/// Generate one random schedule by sampling enabled actions against a live
/// world. The sampler has its own random stream; the world consumes the
/// run seed exactly as a replay of the recorded schedule does, so the
/// recorded schedule reproduces the same trace bit-exactly.
pub fn random_schedule(
    master_seed: u64,
    run_index: u64,
    threats: &ThreatConfig,
    bounds: &Bounds,
) -> Schedule {
    let run_seed = derive_seed(master_seed, run_index);
    let mut sampler = rng_for_run(master_seed, run_index);
    let mut world = World::new(run_seed, *bounds);
    let mut actions = Vec::new();
    // Prologue: one server, then sampled steps take over.
    let first = Action::NewServer {
        server_id: "srv0".to_string(),
    };
    let _ = world.apply(&first);
    actions.push(first);
    while world.step < bounds.max_steps {
        let kinds = candidate_kinds(&world, threats, bounds);
        if kinds.is_empty() {
            break;
        }
        let kind = *pick(&mut sampler, &kinds);
        let action = materialize(kind, &world, threats, &mut sampler);
        let _ = world.apply(&action);
        actions.push(action);
    }
    Schedule {
        seed: run_seed,
        bounds: *bounds,
        actions,
    }
}

/// Mix a master seed and run index into an independent world seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn failing_verdicts(trace: &[TraceEvent]) -> Vec<Verdict> {
    [check_lemma1(trace), check_lemma2(trace)]
        .into_iter()
        .filter(|v| !v.holds)
        .collect()
}

/// Greedy step-removal shrinking: drop any action whose removal preserves
/// the violation, repeating until a fixpoint.
pub fn shrink(schedule: &Schedule) -> Schedule {
    let mut best = schedule.clone();
    loop {
        let mut improved = false;
        let mut i = 0;
        while i < best.actions.len() {
            let mut candidate = best.clone();
            candidate.actions.remove(i);
            let still_violates = run(&candidate)
                .map(|out| !failing_verdicts(&out.trace).is_empty())
                .unwrap_or(false);
            if still_violates {
                best = candidate;
                improved = true;
            } else {
                i += 1;
            }
        }
        if !improved {
            return best;
        }
    }
}

/// Evaluate one run; returns its violation, if any, minimized.
fn evaluate_run(
    master_seed: u64,
    run_index: u64,
    threats: &ThreatConfig,
    bounds: &Bounds,
) -> Option<Violation> {
    let schedule = random_schedule(master_seed, run_index, threats, bounds);
    let out = run(&schedule).expect("generated schedules are valid");
    if failing_verdicts(&out.trace).is_empty() {
        return None;
    }
    let minimized = shrink(&schedule);
    let out = run(&minimized).expect("shrunk schedule still valid");
    let verdicts = failing_verdicts(&out.trace);
    Some(Violation {
        run_index,
        schedule: minimized,
        trace: out.trace,
        verdicts,
    })
}

/// Run `runs` randomized schedules under a threat configuration, fanning
/// out across worker threads. Results are aggregated by run index, so the
/// report does not depend on thread interleaving.
pub fn explore(
    threats: &ThreatConfig,
    master_seed: u64,
    runs: u64,
    bounds: &Bounds,
    threads: usize,
) -> ExploreReport {
    let started = Instant::now();
    let threads = threads.max(1);
    let mut violations: Vec<Violation> = if threads == 1 {
        (0..runs)
            .filter_map(|r| evaluate_run(master_seed, r, threats, bounds))
            .collect()
    } else {
        let mut collected = Vec::new();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for worker in 0..threads as u64 {
                let threats = *threats;
                let bounds = *bounds;
                handles.push(scope.spawn(move || {
                    let mut local = Vec::new();
                    let mut r = worker;
                    while r < runs {
                        if let Some(v) = evaluate_run(master_seed, r, &threats, &bounds) {
                            local.push(v);
                        }
                        r += threads as u64;
                    }
                    local
                }));
            }
            for handle in handles {
                collected.extend(handle.join().expect("exploration worker panicked"));
            }
        });
        collected
    };
    violations.sort_by_key(|v| v.run_index);
    ExploreReport {
        threats: *threats,
        runs,
        violations,
        elapsed: started.elapsed(),
    }
}
