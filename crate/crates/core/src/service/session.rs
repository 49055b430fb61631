use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::protocol::{ClientCommand, ClientEnvelope, ControlMode, KeyDirection, MessageKind, Payload, ServerMessage};
use super::ServiceError;
use crate::controller::{Actuation, ControllerPhase, PerceptKind};
use crate::harness::{derive_trial_seed, FrameSet, Mode, Scenario, Trial};
use crate::world::MotionCommand;

/// Seq of the latest message of each kind, for reconnecting clients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSeqs {
    pub microscope: Option<u64>,
    pub bscan: Option<u64>,
    pub fsm_state: Option<u64>,
}

/// One live trial driven by client commands. Pure: the message stream is a
/// function of the scenario, seed and the command queued before each tick.
#[derive(Debug, Clone)]
pub struct Session {
    scenario: Scenario,
    master_seed: u64,
    trial_index: u64,
    trial: Trial,
    mode: ControlMode,
    pending_target: Option<[f64; 2]>,
    started: bool,
    result_sent: bool,
    queue: VecDeque<ClientEnvelope>,
    next_seq: u64,
    seqs: FrameSeqs,
}

impl Session {
    pub fn new(scenario: &Scenario, master_seed: u64) -> Result<Self, ServiceError> {
        let trial = Self::fresh_trial(scenario, master_seed, 0)?;
        Ok(Self {
            scenario: scenario.clone(),
            master_seed,
            trial_index: 0,
            trial,
            mode: ControlMode::Auto,
            pending_target: None,
            started: false,
            result_sent: false,
            queue: VecDeque::new(),
            next_seq: 0,
            seqs: FrameSeqs::default(),
        })
    }

    fn fresh_trial(scenario: &Scenario, master_seed: u64, index: u64) -> Result<Trial, ServiceError> {
        let mut t = Trial::new(scenario, Mode::Autonomous, index, derive_trial_seed(master_seed, index))?;
        t.render_all = true;
        Ok(t)
    }

    pub fn trial(&self) -> &Trial {
        &self.trial
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn phase(&self) -> ControllerPhase {
        self.trial.controller.phase
    }

    /// Seq the next broadcast message will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Queue a command; it is applied on a later tick, one per tick, in order.
    pub fn submit(&mut self, cmd: ClientEnvelope) {
        self.queue.push_back(cmd);
    }

    pub fn pending_commands(&self) -> usize {
        self.queue.len()
    }

    fn emit(&mut self, out: &mut Vec<ServerMessage>, kind: MessageKind, payload: Payload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        match kind {
            MessageKind::FrameMicroscope => self.seqs.microscope = Some(seq),
            MessageKind::FrameBScan => self.seqs.bscan = Some(seq),
            MessageKind::FsmState => self.seqs.fsm_state = Some(seq),
            _ => {}
        }
        out.push(ServerMessage { kind, seq, t: self.trial.world.t, dropped: 0, payload });
    }

    fn error(&mut self, out: &mut Vec<ServerMessage>, cmd: &ClientEnvelope, message: &str) {
        let body = json!({ "message": message, "command_seq": cmd.seq });
        self.emit(out, MessageKind::Error, Payload::Json(body));
    }

    /// Advance one tick: apply at most one queued command, step the trial if
    /// it is running, and return the messages to broadcast.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>, ServiceError> {
        let mut out = Vec::new();
        let mut key = None;
        if let Some(cmd) = self.queue.pop_front() {
            key = self.apply(&cmd, &mut out)?;
        }

        let running = self.started && !self.trial.is_finished();
        let (frames, event) = if running {
            if self.trial.tick >= self.scenario.tick_budget {
                self.trial.abort_external()?;
                (self.trial.render(PerceptKind::None)?, None)
            } else {
                let report = match self.mode {
                    ControlMode::Auto => self.trial.step()?,
                    ControlMode::Manual => self.trial.step_teleop(self.key_actuation(key))?,
                };
                (report.frames, Some(report.event))
            }
        } else {
            (self.trial.render(PerceptKind::None)?, None)
        };
        self.emit_frames(&mut out, frames);
        let state = self.fsm_body(event.as_ref());
        self.emit(&mut out, MessageKind::FsmState, Payload::Json(state));

        if self.trial.is_finished() && !self.result_sent {
            self.result_sent = true;
            let body = json!({ "record": self.trial.record(), "commit": self.trial.commit });
            self.emit(&mut out, MessageKind::TrialResult, Payload::Json(body));
        }
        Ok(out)
    }

    fn emit_frames(&mut self, out: &mut Vec<ServerMessage>, frames: FrameSet) {
        if let Some(f) = frames.microscope {
            let payload = Payload::Frame {
                width: f.image.width as u32,
                height: f.image.height as u32,
                scale_mm_per_px: f.scale_mm_per_px,
                pixels: f.image.pixels,
            };
            self.emit(out, MessageKind::FrameMicroscope, payload);
        }
        if let Some(f) = frames.bscan {
            let payload = Payload::Frame {
                width: f.image.width as u32,
                height: f.image.height as u32,
                scale_mm_per_px: f.scale_mm_per_px,
                pixels: f.image.pixels,
            };
            self.emit(out, MessageKind::FrameBScan, payload);
        }
    }

    /// Returns the key to execute this tick, if the command was a valid key press.
    fn apply(&mut self, cmd: &ClientEnvelope, out: &mut Vec<ServerMessage>) -> Result<Option<KeyDirection>, ServiceError> {
        let phase = self.phase();
        match cmd.command {
            ClientCommand::SetTarget { u, v } => {
                if !matches!(phase, ControllerPhase::Idle | ControllerPhase::Navigating) {
                    self.error(out, cmd, "target can only be set before or while navigating");
                    return Ok(None);
                }
                let size = (self.trial.imaging().microscope_width, self.trial.imaging().microscope_height);
                match self.trial.controller.set_target([u, v], size) {
                    Err(e) => self.error(out, cmd, &e.to_string()),
                    Ok(_) if phase == ControllerPhase::Idle => self.pending_target = Some([u, v]),
                    Ok(_) => self.trial.set_target([u, v])?,
                }
            }
            ClientCommand::SetMode { mode } => self.mode = mode,
            ClientCommand::Key { direction } => {
                if self.mode != ControlMode::Manual {
                    self.error(out, cmd, "manual-only command");
                } else if !self.started || self.trial.is_finished() {
                    self.error(out, cmd, "no active trial");
                } else {
                    return Ok(Some(direction));
                }
            }
            ClientCommand::Start => {
                if self.started {
                    self.error(out, cmd, "trial already started; reset first");
                } else if let Some(target) = self.pending_target {
                    self.trial.set_target(target)?;
                    self.started = true;
                } else {
                    self.error(out, cmd, "set a target before starting");
                }
            }
            ClientCommand::Abort => {
                if self.started && !self.trial.is_finished() {
                    self.trial.abort_external()?;
                } else {
                    self.error(out, cmd, "no active trial");
                }
            }
            ClientCommand::Reset => {
                self.trial_index += 1;
                self.trial = Self::fresh_trial(&self.scenario, self.master_seed, self.trial_index)?;
                self.pending_target = None;
                self.started = false;
                self.result_sent = false;
            }
        }
        Ok(None)
    }

    /// Motion for one manual tick. Planar and vertical keys move one key step;
    /// axial keys fire a burst at insertion speed.
    fn key_actuation(&self, key: Option<KeyDirection>) -> Actuation {
        let dt = self.scenario.dt_s;
        let step = self.scenario.operator.key_step_mm;
        let speed = self.trial.cfg.insertion_speed_mm_s;
        let planar = |vx: f64, vy: f64| Actuation { command: MotionCommand::PlanarVelocity { vx, vy }, duration_s: dt };
        let z = |dz: f64| Actuation { command: MotionCommand::ZStep { dz }, duration_s: dt };
        let axial = |sign: f64| Actuation { command: MotionCommand::AxialInsertion { speed: sign * speed }, duration_s: step / speed };
        match key {
            None => Actuation { command: MotionCommand::Hold, duration_s: dt },
            Some(KeyDirection::PlusX) => planar(step / dt, 0.0),
            Some(KeyDirection::MinusX) => planar(-step / dt, 0.0),
            Some(KeyDirection::PlusY) => planar(0.0, step / dt),
            Some(KeyDirection::MinusY) => planar(0.0, -step / dt),
            Some(KeyDirection::PlusZ) => z(step),
            Some(KeyDirection::MinusZ) => z(-step),
            Some(KeyDirection::PlusAxial) => axial(1.0),
            Some(KeyDirection::MinusAxial) => axial(-1.0),
        }
    }

    fn fsm_body(&self, event: Option<&crate::controller::ControllerEvent>) -> serde_json::Value {
        let c = &self.trial.controller;
        json!({
            "tick": self.trial.tick,
            "trial_id": self.trial.trial_id,
            "phase": c.phase,
            "attempts": c.attempts,
            "timers": self.trial.timers,
            "mode": self.mode,
            "started": self.started,
            "target_px": c.target_px.or(self.pending_target),
            "event": event,
        })
    }

    /// Full state document. Two calls with no tick between return equal values.
    pub fn snapshot(&self) -> serde_json::Value {
        let t = &self.trial;
        let result = if t.is_finished() { Some(json!({ "record": t.record(), "commit": t.commit })) } else { None };
        json!({
            "trial_id": t.trial_id,
            "tick": t.tick,
            "t": t.world.t,
            "mode": self.mode,
            "started": self.started,
            "pending_target_px": self.pending_target,
            "controller": t.controller,
            "timers": t.timers,
            "last_percept": t.last_percept,
            "frame_seqs": self.seqs,
            "next_seq": self.next_seq,
            "pending_commands": self.queue.len(),
            "result": result,
        })
    }
}

/// Outbound queue for one client. Frames beyond the cap are dropped oldest
/// first; JSON messages (state, results, errors) are never dropped.
#[derive(Debug, Clone)]
pub struct ClientQueue {
    /// Messages with a flag marking connection-local ones (outside the seq stream).
    items: VecDeque<(ServerMessage, bool)>,
    max_frames: usize,
    expected_seq: u64,
    pub dropped_total: u64,
}

impl ClientQueue {
    pub fn new(max_frames: usize) -> Self {
        Self { items: VecDeque::new(), max_frames: max_frames.max(1), expected_seq: 0, dropped_total: 0 }
    }

    /// Seq the client expects next, e.g. `next_seq` of the snapshot it was sent.
    pub fn resume_at(&mut self, seq: u64) {
        self.expected_seq = seq;
    }

    pub fn push(&mut self, msg: ServerMessage) {
        if msg.kind.is_frame() {
            let frames = self.items.iter().filter(|(m, _)| m.kind.is_frame()).count();
            if frames >= self.max_frames {
                if let Some(i) = self.items.iter().position(|(m, _)| m.kind.is_frame()) {
                    self.items.remove(i);
                    self.dropped_total += 1;
                }
            }
        }
        self.items.push_back((msg, false));
    }

    /// Message for this connection only (snapshot, protocol error). It does
    /// not take part in gap accounting.
    pub fn push_local(&mut self, msg: ServerMessage) {
        self.items.push_back((msg, true));
    }

    /// Next message with `dropped` set to the seq gap since the previous one.
    pub fn pop(&mut self) -> Option<ServerMessage> {
        let (mut m, local) = self.items.pop_front()?;
        if local {
            return Some(m);
        }
        let gap = m.seq.saturating_sub(self.expected_seq);
        m.dropped = gap.min(u64::from(u32::MAX)) as u32;
        self.expected_seq = m.seq + 1;
        Some(m)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
