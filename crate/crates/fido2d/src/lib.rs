//! Two-display web transaction authentication, executable.
//!
//! A security-critical transaction is authenticated by two challenge
//! signatures from two separately held devices: the browser machine signs
//! first, then an additional device displays the transaction text and signs
//! it together with a second challenge. The server accepts only when both
//! ceremonies succeed and the second signature covers exactly the stored
//! transaction data. The intended guarantee is one-out-of-two security: no
//! fraudulent transaction without compromising both devices.
//!
//! The crate pairs the protocol with a Dolev-Yao simulation harness that
//! checks that guarantee as two trace properties, over honest schedules,
//! scripted attacks and randomized exploration:
//!
//! * `only_user_initiated_transactions_accepted` — every completion was
//!   begun by its user with the same data, or both devices were
//!   compromised;
//! * `replay_attacks_impossible` — completions map injectively onto
//!   initiations.
//!
//! Modules: [`crypto`] (signatures, nonces), [`messages`] (canonical wire
//! encoding), [`server`] (relying-party state machine), [`devices`] (the
//! two device agents and the user model), [`adversary`] (network and
//! attacker), [`harness`] (scheduler, lemmas, scenarios, exploration).

pub mod adversary;
pub mod crypto;
pub mod devices;
pub mod harness;
pub mod messages;
pub mod server;
