//! Persistent graph of human match verdicts.
//!
//! A store directory holds three files:
//!
//! * `events.jsonl`: append-only verdict history, one event per line;
//! * `snapshot.json`: the node set, the current verdicts and the number of
//!   events folded into them, replaced atomically on compaction;
//! * `audit.jsonl`: confirmations that merged two multi-image components.
//!
//! Opening a store loads the snapshot and replays any events after it.

mod dsu;
mod graph;

pub use dsu::Dsu;
pub use graph::{filter_candidates, CandidateQuery, MatchGraph, MergeEvent, Verdict, VerdictEvent, VerdictOutcome};
