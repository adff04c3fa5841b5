//! Deterministic scheduler, trace recorder, lemma checkers, scripted
//! attack scenarios and randomized schedule exploration.

pub mod explore;
pub mod lemmas;
pub mod scenarios;
pub mod schedule;
pub mod trace;
pub mod world;

pub use explore::{explore, random_schedule, shrink, ExploreReport, ThreatConfig, Violation};
pub use lemmas::{
    check_lemma1, check_lemma1_with, check_lemma2, check_lemma2_with, LemmaId, LemmaOptions,
    Verdict,
};
pub use schedule::{quote, Action, Bounds, ChallengeSource, CounterSource, Schedule};
pub use trace::{Label, TraceEvent};
pub use world::{run, validate, RunOutput, ScheduleError, World};
