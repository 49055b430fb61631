//! Trial execution, the scripted manual baseline, batch statistics, reports
//! and event-log replay.

mod batch;
mod operator;
mod replay;
mod scenario;
pub mod stats;
mod trial;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{
    derive_trial_seed, read_records, run_batch, write_outputs, BatchReport, ModeSummary, OutlierFlag, TimingStats,
};
pub use operator::ManualOperator;
pub use replay::{replay_log, EventLog, LogLine, ReplayReport};
pub use scenario::{ArtifactProfile, OperatorModel, Randomization, Scenario, TrialSetup, VeinSpec};
pub use trial::{run_trial, run_trial_logged, FrameSet, TickReport, Trial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("trial exceeded tick budget of {0}")]
    TickBudgetExceeded(u64),
    #[error("trial {trial_id}: {source}")]
    Trial { trial_id: u64, source: Box<HarnessError> },
    #[error("world error: {0}")]
    World(String),
    #[error("controller error: {0}")]
    Controller(String),
    #[error("corrupt event log: {0}")]
    LogCorrupt(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("records error: {0}")]
    Records(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "autonomous")]
    Autonomous,
    #[serde(rename = "scripted-manual")]
    ScriptedManual,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Autonomous => "autonomous",
            Mode::ScriptedManual => "scripted-manual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    TP,
    TN,
    FP,
    FN,
}

impl OutcomeClass {
    pub fn from_verdicts(claimed: bool, truth: bool) -> Self {
        match (claimed, truth) {
            (true, true) => OutcomeClass::TP,
            (false, false) => OutcomeClass::TN,
            (true, false) => OutcomeClass::FP,
            (false, true) => OutcomeClass::FN,
        }
    }
}

/// One row of records.csv. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub mode: Mode,
    pub seed: u64,
    pub navigation_s: f64,
    pub puncture_s: f64,
    pub attempts: u32,
    /// Controller claimed a puncture.
    pub verdict: u8,
    /// Air-injection outcome.
    pub ground_truth: u8,
    pub outcome_class: OutcomeClass,
    pub abort_reason: Option<String>,
}

impl TrialRecord {
    pub fn is_consistent(&self) -> bool {
        self.verdict <= 1
            && self.ground_truth <= 1
            && self.outcome_class == OutcomeClass::from_verdicts(self.verdict == 1, self.ground_truth == 1)
    }
}
