//! Wire and log records. Every float is written with 17 significant digits.

use exaddis_core::numfmt::json17;
use exaddis_core::{Mode, PolicyConfig, Procedure, StateSnapshot};
use serde::{Deserialize, Serialize};

/// Outcome of one submitted p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub seq: u64,
    pub step: usize,
    #[serde(with = "json17")]
    pub p: f64,
    #[serde(with = "json17")]
    pub level: f64,
    #[serde(with = "json17")]
    pub tau: f64,
    #[serde(with = "json17")]
    pub lambda: f64,
    pub rejected: bool,
    pub selected: bool,
    pub candidate: bool,
    #[serde(with = "json17")]
    pub remaining_before: f64,
    #[serde(with = "json17")]
    pub new_remaining: f64,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub procedure: Procedure,
    pub mode: Mode,
    #[serde(with = "json17")]
    pub alpha: f64,
    /// 1-based index of the next hypothesis.
    pub step: usize,
    #[serde(with = "json17")]
    pub remaining: f64,
    /// Level the next hypothesis will be tested at.
    #[serde(with = "json17")]
    pub level: f64,
    #[serde(with = "json17")]
    pub tau: f64,
    #[serde(with = "json17")]
    pub lambda: f64,
    pub rejections: usize,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub config: PolicyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelView {
    pub id: String,
    pub step: usize,
    #[serde(with = "json17")]
    pub level: f64,
    #[serde(with = "json17")]
    pub tau: f64,
    #[serde(with = "json17")]
    pub lambda: f64,
    #[serde(with = "json17")]
    pub remaining: f64,
}

/// What submitting `p` now would do, computed on a copy of the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfReport {
    #[serde(with = "json17")]
    pub p: f64,
    pub step: usize,
    #[serde(with = "json17")]
    pub level: f64,
    pub would_reject: bool,
    #[serde(with = "json17")]
    pub next_remaining: f64,
    #[serde(with = "json17")]
    pub next_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub id: String,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub p: f64,
    #[serde(default)]
    pub seq: Option<u64>,
}

/// One line of a session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { seq: u64, id: String, config: PolicyConfig, at_ms: u64 },
    Submitted { seq: u64, decision: Decision },
}

impl Event {
    pub fn seq(&self) -> u64 {
        match self {
            Event::Created { seq, .. } | Event::Submitted { seq, .. } => *seq,
        }
    }
}

/// Periodic checkpoint written next to the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seq: u64,
    pub state: StateSnapshot,
}
