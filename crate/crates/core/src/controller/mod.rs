//! Procedure state machine: navigation to a clicked target, contact seeking,
//! incremental puncture strokes with verification, retries, full retraction.
//!
//! The machine consumes percepts and pose feedback only. It owns no clock;
//! the caller supplies the nominal tick length and receives back how long the
//! emitted command should be applied.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{ContactDecision, PerceptionError, PunctureDecision, TipDetection};
use crate::world::{MotionCommand, Pose3};

/// Consecutive perception failures tolerated before aborting.
pub const MAX_REACQUIRE: u32 = 50;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControllerError {
    #[error("target ({u}, {v}) outside {width}x{height} frame")]
    InvalidTarget { u: f64, v: f64, width: usize, height: usize },
    #[error("operation not allowed in phase {0:?}")]
    WrongPhase(ControllerPhase),
    #[error("phase {phase:?} expects a {expected:?} percept")]
    WrongPercept { phase: ControllerPhase, expected: PerceptKind },
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub stop_dist_px: f64,
    /// Proportional gain, 1/s, applied to the remaining distance.
    pub nav_gain: f64,
    pub nav_speed_cap_mm_s: f64,
    pub z_step_mm: f64,
    pub insertion_speed_mm_s: f64,
    /// Axial advance between two B-scan verifications.
    pub stroke_increment_mm: f64,
    /// Axial advance allowed within one attempt before retracting.
    pub attempt_stroke_mm: f64,
    pub retract_fraction: f64,
    pub max_puncture_attempts: u32,
    pub max_seek_depth_mm: f64,
    pub contact_threshold: f64,
    pub puncture_conf_min: f64,
    pub microscope_scale_mm_per_px: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            stop_dist_px: 3.0,
            nav_gain: 5.0,
            nav_speed_cap_mm_s: 1.0,
            z_step_mm: 0.010,
            insertion_speed_mm_s: 2.5,
            stroke_increment_mm: 0.05,
            attempt_stroke_mm: 0.25,
            retract_fraction: 0.4,
            max_puncture_attempts: 5,
            max_seek_depth_mm: 3.0,
            contact_threshold: 0.5,
            puncture_conf_min: 0.5,
            microscope_scale_mm_per_px: crate::imaging::MICROSCOPE_SCALE_MM_PER_PX,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::InvalidConfig(m.to_string()));
        if !(self.stop_dist_px > 0.0) {
            return bad("stop_dist_px must be positive");
        }
        if !(self.retract_fraction > 0.0 && self.retract_fraction < 1.0) {
            return bad("retract_fraction must lie in (0, 1)");
        }
        if self.max_puncture_attempts < 1 {
            return bad("max_puncture_attempts must be at least 1");
        }
        let positive = [
            self.nav_gain,
            self.nav_speed_cap_mm_s,
            self.z_step_mm,
            self.insertion_speed_mm_s,
            self.stroke_increment_mm,
            self.attempt_stroke_mm,
            self.max_seek_depth_mm,
            self.microscope_scale_mm_per_px,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("gains, speeds, steps and depths must be positive");
        }
        if !(0.0..=1.0).contains(&self.contact_threshold) || !(0.0..=1.0).contains(&self.puncture_conf_min) {
            return bad("thresholds must lie in [0, 1]");
        }
        Ok(())
    }

    /// Number of verified increments in one attempt.
    pub fn increments_per_attempt(&self) -> u32 {
        ((self.attempt_stroke_mm / self.stroke_increment_mm) - 1e-9).ceil().max(1.0) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerPhase {
    Idle,
    Navigating,
    ContactSeek,
    PunctureStroke,
    VerifyPuncture,
    Retracting,
    FullRetract,
    Done,
    Aborted,
}

impl ControllerPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, ControllerPhase::Done | ControllerPhase::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    ReacquireLimit,
    AttemptsExhausted,
    SeekDepthExceeded,
    /// Stopped from outside the machine (operator or session).
    External,
}

impl AbortReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::ReacquireLimit => "reacquire_limit",
            AbortReason::AttemptsExhausted => "attempts_exhausted",
            AbortReason::SeekDepthExceeded => "seek_depth_exceeded",
            AbortReason::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerceptKind {
    None,
    Tip,
    Contact,
    Puncture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Percept {
    None,
    Tip(Result<TipDetection, PerceptionError>),
    Contact(Result<ContactDecision, PerceptionError>),
    Puncture(Result<PunctureDecision, PerceptionError>),
}

impl Percept {
    pub fn kind(&self) -> PerceptKind {
        match self {
            Percept::None => PerceptKind::None,
            Percept::Tip(_) => PerceptKind::Tip,
            Percept::Contact(_) => PerceptKind::Contact,
            Percept::Puncture(_) => PerceptKind::Puncture,
        }
    }
}

/// Robot-side pose feedback: tip position and unit insertion axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFeedback {
    pub tip: Pose3,
    pub insertion_axis: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timers {
    pub navigation_s: f64,
    pub puncture_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NavStep {
    Move(MotionCommand),
    Stop,
}

/// Command plus how long to apply it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    pub command: MotionCommand,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: ControllerPhase,
    pub target_px: Option<[f64; 2]>,
    pub contact_pose: Option<Pose3>,
    /// Net axial depth beyond the contact pose.
    pub stroke_depth_mm: f64,
    /// Axial advance made during the current attempt.
    pub attempt_progress_mm: f64,
    pub attempts: u32,
    pub timers: Timers,
    pub seek_start: Option<Pose3>,
    pub reacquire_failures: u32,
    /// Distance still to retract in the Retracting phase.
    pub pending_retract_mm: f64,
    pub contact_confirmed: bool,
    pub abort_reason: Option<AbortReason>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            phase: ControllerPhase::Idle,
            target_px: None,
            contact_pose: None,
            stroke_depth_mm: 0.0,
            attempt_progress_mm: 0.0,
            attempts: 0,
            timers: Timers { navigation_s: 0.0, puncture_s: 0.0 },
            seek_start: None,
            reacquire_failures: 0,
            pending_retract_mm: 0.0,
            contact_confirmed: false,
            abort_reason: None,
        }
    }
}

/// Proportional planar step toward the target, or `Stop` inside the stop radius.
pub fn plan_navigation_step(tip_px: [f64; 2], target_px: [f64; 2], cfg: &ControllerConfig) -> NavStep {
    let d = [target_px[0] - tip_px[0], target_px[1] - tip_px[1]];
    let dist_px = d[0].hypot(d[1]);
    if dist_px < cfg.stop_dist_px {
        return NavStep::Stop;
    }
    let dist_mm = dist_px * cfg.microscope_scale_mm_per_px;
    let speed = (cfg.nav_gain * dist_mm).min(cfg.nav_speed_cap_mm_s);
    NavStep::Move(MotionCommand::PlanarVelocity { vx: speed * d[0] / dist_px, vy: speed * d[1] / dist_px })
}

impl ControllerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Set or move the navigation goal. Allowed while Idle or Navigating.
    pub fn set_target(&self, target_px: [f64; 2], frame_size: (usize, usize)) -> Result<Self, ControllerError> {
        if !matches!(self.phase, ControllerPhase::Idle | ControllerPhase::Navigating) {
            return Err(ControllerError::WrongPhase(self.phase));
        }
        let (w, h) = frame_size;
        let inside = target_px.iter().all(|v| v.is_finite())
            && target_px[0] >= 0.0
            && target_px[1] >= 0.0
            && target_px[0] <= w as f64 - 1.0
            && target_px[1] <= h as f64 - 1.0;
        if !inside {
            return Err(ControllerError::InvalidTarget { u: target_px[0], v: target_px[1], width: w, height: h });
        }
        Ok(Self { phase: ControllerPhase::Navigating, target_px: Some(target_px), ..self.clone() })
    }

    pub fn timers(&self) -> Timers {
        self.timers
    }

    /// Percept the next tick needs.
    pub fn needed_percept(&self) -> PerceptKind {
        match self.phase {
            ControllerPhase::Navigating => PerceptKind::Tip,
            ControllerPhase::ContactSeek => PerceptKind::Contact,
            ControllerPhase::VerifyPuncture => PerceptKind::Puncture,
            _ => PerceptKind::None,
        }
    }

    /// One control step. `dt` is the nominal tick; burst commands carry their own duration.
    pub fn tick(
        &self,
        cfg: &ControllerConfig,
        percept: &Percept,
        feedback: &PoseFeedback,
        dt: f64,
    ) -> Result<(Actuation, ControllerState), ControllerError> {
        use ControllerPhase as P;
        let expected = self.needed_percept();
        if expected != PerceptKind::None && percept.kind() != expected {
            return Err(ControllerError::WrongPercept { phase: self.phase, expected });
        }
        let mut next = self.clone();
        let hold = Actuation { command: MotionCommand::Hold, duration_s: dt };

        // Perception failures: hold and retry, bounded.
        let failed = matches!(
            percept,
            Percept::Tip(Err(_)) | Percept::Contact(Err(_)) | Percept::Puncture(Err(_))
        );
        if failed {
            next.reacquire_failures += 1;
            if next.reacquire_failures >= MAX_REACQUIRE {
                next.abort(AbortReason::ReacquireLimit);
            }
            next.charge(self.phase, dt);
            return Ok((hold, next));
        }
        next.reacquire_failures = 0;

        let act = match (self.phase, percept) {
            (P::Idle | P::Done | P::Aborted, _) => hold,
            (P::Navigating, Percept::Tip(Ok(tip))) => {
                let target = self.target_px.ok_or(ControllerError::WrongPhase(self.phase))?;
                match plan_navigation_step(tip.tip_px, target, cfg) {
                    NavStep::Move(cmd) => Actuation { command: cmd, duration_s: dt },
                    NavStep::Stop => {
                        next.phase = P::ContactSeek;
                        next.seek_start = Some(feedback.tip);
                        hold
                    }
                }
            }
            (P::ContactSeek, Percept::Contact(Ok(c))) => {
                if c.decision {
                    next.contact_confirmed = true;
                    next.contact_pose = Some(feedback.tip);
                    next.phase = P::PunctureStroke;
                    hold
                } else {
                    let start_z = self.seek_start.map_or(feedback.tip.z, |p| p.z);
                    if start_z - feedback.tip.z + cfg.z_step_mm > cfg.max_seek_depth_mm + 1e-12 {
                        next.abort(AbortReason::SeekDepthExceeded);
                        hold
                    } else {
                        Actuation { command: MotionCommand::ZStep { dz: -cfg.z_step_mm }, duration_s: dt }
                    }
                }
            }
            (P::PunctureStroke, _) => {
                if !self.contact_confirmed {
                    return Err(ControllerError::WrongPhase(self.phase));
                }
                let inc = cfg.stroke_increment_mm;
                next.stroke_depth_mm += inc;
                next.attempt_progress_mm += inc;
                next.phase = P::VerifyPuncture;
                Actuation {
                    command: MotionCommand::AxialInsertion { speed: cfg.insertion_speed_mm_s },
                    duration_s: inc / cfg.insertion_speed_mm_s,
                }
            }
            (P::VerifyPuncture, Percept::Puncture(Ok(p))) => {
                if p.confirmed(cfg.puncture_conf_min) {
                    next.phase = P::FullRetract;
                } else if next.attempt_progress_mm + 1e-9 < cfg.increments_per_attempt() as f64 * cfg.stroke_increment_mm {
                    next.phase = P::PunctureStroke;
                } else {
                    next.pending_retract_mm = cfg.retract_fraction * self.stroke_depth_mm;
                    next.attempts += 1;
                    next.phase = P::Retracting;
                }
                hold
            }
            (P::Retracting, _) => {
                let dist = self.pending_retract_mm;
                next.stroke_depth_mm -= dist;
                next.pending_retract_mm = 0.0;
                next.attempt_progress_mm = 0.0;
                if next.attempts < cfg.max_puncture_attempts {
                    next.phase = P::PunctureStroke;
                } else {
                    next.abort(AbortReason::AttemptsExhausted);
                }
                retreat(dist, cfg, dt)
            }
            (P::FullRetract, _) => {
                let start_z = self.seek_start.map_or(feedback.tip.z, |p| p.z);
                let rise = (start_z - feedback.tip.z).max(0.0);
                let axis_z = -feedback.insertion_axis[2];
                let dist = if axis_z > 1e-9 { rise / axis_z } else { self.stroke_depth_mm };
                next.phase = P::Done;
                retreat(dist, cfg, dt)
            }
            _ => return Err(ControllerError::WrongPercept { phase: self.phase, expected }),
        };
        next.charge(self.phase, act.duration_s);
        Ok((act, next))
    }

    /// Move to Aborted unless already terminal.
    pub fn abort(&mut self, reason: AbortReason) {
        if !self.phase.is_terminal() {
            self.phase = ControllerPhase::Aborted;
            self.abort_reason = Some(reason);
        }
    }

    fn charge(&mut self, phase: ControllerPhase, duration: f64) {
        use ControllerPhase as P;
        match phase {
            P::Navigating => self.timers.navigation_s += duration,
            P::ContactSeek | P::PunctureStroke | P::VerifyPuncture | P::Retracting | P::FullRetract => {
                self.timers.puncture_s += duration
            }
            _ => {}
        }
    }
}

fn retreat(dist: f64, cfg: &ControllerConfig, dt: f64) -> Actuation {
    if dist <= 0.0 {
        return Actuation { command: MotionCommand::Hold, duration_s: dt };
    }
    Actuation {
        command: MotionCommand::AxialInsertion { speed: -cfg.insertion_speed_mm_s },
        duration_s: dist / cfg.insertion_speed_mm_s,
    }
}

/// One line of the controller event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    pub tick: u64,
    pub t: f64,
    pub phase: ControllerPhase,
    pub next_phase: ControllerPhase,
    pub percept: Percept,
    pub command: MotionCommand,
    pub duration_s: f64,
}
