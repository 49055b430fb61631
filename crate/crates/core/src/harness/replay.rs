use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArtifactProfile, HarnessError, Mode, Scenario, TickReport, Trial, TrialRecord};
use crate::controller::{ControllerPhase, Percept};
use crate::world::MotionCommand;

pub const LOG_VERSION: u32 = 1;

/// One NDJSON line of a trial event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header { version: u32, scenario: Scenario, mode: Mode, trial_id: u64, seed: u64 },
    Tick {
        tick: u64,
        t: f64,
        phase: ControllerPhase,
        next_phase: ControllerPhase,
        percept: Percept,
        command: MotionCommand,
        duration_s: f64,
        frame_digest: String,
        world_digest: String,
    },
    Trailer { ticks: u64, record: TrialRecord },
}

impl LogLine {
    pub fn header(scenario: &Scenario, mode: Mode, trial_id: u64, seed: u64) -> Self {
        LogLine::Header { version: LOG_VERSION, scenario: scenario.clone(), mode, trial_id, seed }
    }

    pub fn tick(r: &TickReport) -> Self {
        let e = &r.event;
        LogLine::Tick {
            tick: e.tick,
            t: e.t,
            phase: e.phase,
            next_phase: e.next_phase,
            percept: e.percept.clone(),
            command: e.command,
            duration_s: e.duration_s,
            frame_digest: format!("{:016x}", r.frame_digest),
            world_digest: format!("{:016x}", r.world_digest),
        }
    }

    pub fn trailer(ticks: u64, record: &TrialRecord) -> Self {
        LogLine::Trailer { ticks, record: record.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub lines: Vec<LogLine>,
}

impl EventLog {
    pub fn push(&mut self, line: LogLine) {
        self.lines.push(line);
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&serde_json::to_string(l).expect("log line serializes"));
            out.push('\n');
        }
        out
    }

    /// Parse and check structure: header first, trailer last, tick lines in order.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let corrupt = |m: String| HarnessError::LogCorrupt(m);
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let l: LogLine = serde_json::from_str(raw).map_err(|e| corrupt(format!("line {}: {e}", i + 1)))?;
            lines.push(l);
        }
        match lines.first() {
            Some(LogLine::Header { version, .. }) if *version == LOG_VERSION => {}
            Some(LogLine::Header { version, .. }) => return Err(corrupt(format!("unsupported version {version}"))),
            _ => return Err(corrupt("missing header".into())),
        }
        let Some(LogLine::Trailer { ticks, .. }) = lines.last() else {
            return Err(corrupt("missing trailer (truncated log)".into()));
        };
        let body = &lines[1..lines.len() - 1];
        if body.len() as u64 != *ticks {
            return Err(corrupt(format!("trailer announces {ticks} ticks, found {}", body.len())));
        }
        for (i, l) in body.iter().enumerate() {
            match l {
                LogLine::Tick { tick, .. } if *tick == i as u64 => {}
                _ => return Err(corrupt(format!("unexpected line at tick {i}"))),
            }
        }
        Ok(Self { lines })
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub ticks: u64,
    pub identical: bool,
    /// First tick whose logged line differs from the regenerated one.
    pub first_divergence: Option<u64>,
    pub divergent_ticks: u64,
    pub original: TrialRecord,
    pub replayed: TrialRecord,
}

/// Re-run a logged trial from its seeds and compare tick by tick. Artifact
/// overrides perturb the run on purpose; any difference is reported as a
/// divergence. Frames are written as PNG into `frame_dir` when given.
pub fn replay_log(
    log: &EventLog,
    artifacts: Option<Option<ArtifactProfile>>,
    frame_dir: Option<&Path>,
) -> Result<ReplayReport, HarnessError> {
    let Some(LogLine::Header { scenario, mode, trial_id, seed, .. }) = log.lines.first() else {
        return Err(HarnessError::LogCorrupt("missing header".into()));
    };
    let Some(LogLine::Trailer { record: original, .. }) = log.lines.last() else {
        return Err(HarnessError::LogCorrupt("missing trailer".into()));
    };
    let mut scenario = scenario.clone();
    if let Some(a) = artifacts {
        scenario.artifacts = a;
    }
    if let Some(dir) = frame_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    let logged = &log.lines[1..log.lines.len() - 1];
    let mut trial = Trial::started(&scenario, *mode, *trial_id, *seed)?;
    let mut divergent = 0u64;
    let mut first = None;
    let mut ticks = 0u64;
    while !trial.is_finished() {
        if trial.tick >= scenario.tick_budget {
            return Err(HarnessError::TickBudgetExceeded(scenario.tick_budget));
        }
        let report = trial.step()?;
        if let Some(dir) = frame_dir {
            dump_frames(dir, &report)?;
        }
        let line = LogLine::tick(&report);
        if logged.get(ticks as usize) != Some(&line) {
            divergent += 1;
            first.get_or_insert(ticks);
        }
        ticks += 1;
    }
    if ticks < logged.len() as u64 {
        divergent += logged.len() as u64 - ticks;
        first.get_or_insert(ticks);
    }
    let replayed = trial.record();
    let identical = divergent == 0 && replayed == *original;
    if !identical && first.is_none() {
        first = Some(ticks);
    }
    Ok(ReplayReport { ticks, identical, first_divergence: first, divergent_ticks: divergent, original: original.clone(), replayed })
}

fn dump_frames(dir: &Path, r: &TickReport) -> Result<(), HarnessError> {
    let io = |e: image::ImageError| HarnessError::Io(e.to_string());
    let tick = r.event.tick;
    if let Some(f) = &r.frames.microscope {
        f.image.write_png(&dir.join(format!("tick{tick:05}_microscope.png"))).map_err(io)?;
    }
    if let Some(f) = &r.frames.bscan {
        f.image.write_png(&dir.join(format!("tick{tick:05}_bscan.png"))).map_err(io)?;
    }
    Ok(())
}
